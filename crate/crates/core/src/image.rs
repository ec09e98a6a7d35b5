//! Binary PGM (P5) grayscale images.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PgmInfo {
    pub width: usize,
    pub height: usize,
    pub maxval: u32,
}

fn parse_err(source: &str, offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        source_name: source.to_string(),
        location: format!("byte {offset}"),
        message: message.into(),
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
    source: &'a str,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(parse_err(self.source, start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(self.source, start, format!("{what} out of range")))
    }
}

/// Decode P5 data; values are mapped linearly so `maxval` becomes 255.
pub fn decode_pgm(bytes: &[u8], source: &str) -> Result<(Tensor, PgmInfo)> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(parse_err(source, 0, "missing P5 magic"));
    }
    let mut hd = Header { bytes, pos: 2, source };
    let width = hd.number("width")? as usize;
    let height = hd.number("height")? as usize;
    let maxval_at = hd.pos;
    let maxval = hd.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(parse_err(source, maxval_at, "zero image extent"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(parse_err(source, maxval_at, format!("maxval {maxval} outside 1..=65535")));
    }
    if hd.pos >= bytes.len() || !bytes[hd.pos].is_ascii_whitespace() {
        return Err(parse_err(source, hd.pos, "expected whitespace after maxval"));
    }
    let start = hd.pos + 1;
    let bps = if maxval < 256 { 1 } else { 2 };
    let need = width * height * bps;
    if bytes.len() - start < need {
        return Err(parse_err(
            source,
            bytes.len(),
            format!("truncated pixel data: need {need} bytes, found {}", bytes.len() - start),
        ));
    }
    let raw = &bytes[start..start + need];
    let scale = 255.0 / maxval as f64;
    let data: Vec<f64> = if bps == 1 {
        raw.iter().map(|&b| b as f64).collect()
    } else {
        raw.chunks(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64).collect()
    };
    let data = if maxval == 255 {
        data
    } else {
        data.into_iter().map(|v| v * scale).collect()
    };
    Ok((
        Tensor::new(&[height, width], data)?,
        PgmInfo {
            width,
            height,
            maxval,
        },
    ))
}

pub fn read_image(path: &Path) -> Result<(Tensor, PgmInfo)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, &path.display().to_string())
}

/// Round half away from zero, then clamp to a byte.
pub fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Encode the trailing `[H×W]` plane as 8-bit P5; leading axes must be 1.
pub fn encode_pgm(t: &Tensor) -> Result<Vec<u8>> {
    let nd = t.ndim();
    if nd < 2 || t.shape()[..nd - 2].iter().any(|&d| d != 1) {
        return Err(Error::dim("write_image", format!("expected one plane, got {:?}", t.shape())));
    }
    let (h, w) = (t.shape()[nd - 2], t.shape()[nd - 1]);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(t.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

pub fn write_image(t: &Tensor, path: &Path) -> Result<()> {
    let bytes = encode_pgm(t)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decodes_small_eight_bit() {
        let mut bytes = b"P5\n# comment\n2 2\n255\n".to_vec();
        bytes.extend([0, 128, 255, 64]);
        let (t, info) = decode_pgm(&bytes, "mem").unwrap();
        assert_eq!(t.shape(), &[2, 2]);
        assert_eq!(t.data(), &[0.0, 128.0, 255.0, 64.0]);
        assert_eq!(info.maxval, 255);
    }

    #[test]
    fn sixteen_bit_rescales() {
        let mut bytes = b"P5 2 1 65535\n".to_vec();
        bytes.extend([0xff, 0xff, 0x00, 0x00]);
        let (t, _) = decode_pgm(&bytes, "mem").unwrap();
        assert_eq!(t.data(), &[255.0, 0.0]);
    }

    #[test]
    fn errors_carry_byte_offsets() {
        let err = decode_pgm(b"P6\n1 1\n255\n\0", "x.pgm").unwrap_err();
        assert!(err.to_string().contains("byte 0"), "{err}");
        let err = decode_pgm(b"P5\n2 2\n255\n\x01\x02", "x.pgm").unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
        assert!(err.to_string().contains("byte 13"), "{err}");
        let err = decode_pgm(b"P5\n2 x\n255\n", "x.pgm").unwrap_err();
        assert!(err.to_string().contains("byte 5"), "{err}");
    }

    #[test]
    fn quantization_rule() {
        assert_eq!(quantize(254.5), 255);
        assert_eq!(quantize(-3.0), 0);
        assert_eq!(quantize(0.5), 1);
        assert_eq!(quantize(1e9), 255);
        assert_eq!(quantize(12.49), 12);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let t = Tensor::from_fn(&[1, 1, 3, 5], |i| (i * 17 % 256) as f64);
        write_image(&t, &path).unwrap();
        let (back, _) = read_image(&path).unwrap();
        assert_eq!(back.data(), t.data());
        let missing = read_image(&dir.path().join("none.pgm")).unwrap_err();
        assert!(missing.to_string().contains("none.pgm"));
    }

    proptest! {
        #[test]
        fn integer_images_round_trip(h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
            let t = Tensor::from_fn(&[h, w], |i| ((seed >> (i % 56)) as u8 ^ i as u8) as f64);
            let (back, _) = decode_pgm(&encode_pgm(&t).unwrap(), "mem").unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
