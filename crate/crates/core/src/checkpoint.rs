//! Versioned binary checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic  "PSSMCKPT"
//! u32    version
//! u64    config length, then canonical config text (UTF-8)
//! u64    parameter count
//! per parameter, in sorted-name order:
//!   u32 name length, name bytes, u32 rank, rank × u64 extents, f64 values
//! ```

use std::fs;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::network::ModelParams;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"PSSMCKPT";
pub const VERSION: u32 = 1;

pub fn encode(cfg: &RunConfig, params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let text = cfg.to_text();
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(params.tensors.len() as u64).to_le_bytes());
    for (name, t) in &params.tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    source: &'a str,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            source_name: self.source.to_string(),
            location: format!("byte {}", self.pos),
            message: msg.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let v = self.u64(what)?;
        usize::try_from(v)
            .ok()
            .filter(|&n| n <= self.bytes.len())
            .ok_or_else(|| self.err(format!("{what} {v} exceeds file size")))
    }

    fn text(&mut self, n: usize, what: &str) -> Result<&'a str> {
        let start = self.pos;
        let raw = self.take(n, what)?;
        std::str::from_utf8(raw).map_err(|_| {
            self.pos = start;
            self.err(format!("{what} is not UTF-8"))
        })
    }
}

pub fn decode(bytes: &[u8], source: &str) -> Result<(RunConfig, ModelParams)> {
    let mut r = Reader { bytes, pos: 0, source };
    if r.take(8, "magic")? != MAGIC {
        r.pos = 0;
        return Err(r.err("bad magic"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.err(format!("unsupported version {version}")));
    }
    let n = r.len("config length")?;
    let text = r.text(n, "config")?;
    let cfg = RunConfig::parse(text, &format!("{source} (embedded config)"))?;
    let count = r.len("parameter count")?;
    let mut params = ModelParams::default();
    for _ in 0..count {
        let n = r.u32("name length")? as usize;
        let name = r.text(n, "parameter name")?.to_string();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.len("extent")?);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel.checked_mul(8).ok_or_else(|| r.err("oversized tensor"))?, &name)?;
        let data = raw.chunks(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let t = Tensor::new(&shape, data).map_err(|e| r.err(format!("{name}: {e}")))?;
        if params.tensors.insert(name.clone(), t).is_some() {
            return Err(r.err(format!("duplicate parameter {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(r.err("trailing bytes"));
    }
    Ok((cfg, params))
}

pub fn save(path: &Path, cfg: &RunConfig, params: &ModelParams) -> Result<()> {
    fs::write(path, encode(cfg, params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(RunConfig, ModelParams)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::ModelConfig;

    fn sample() -> (RunConfig, ModelParams) {
        let mut cfg = RunConfig::default();
        cfg.model = ModelConfig {
            channels: 4,
            prompt_pool: 2,
            seed: 3,
            ..ModelConfig::default()
        };
        let mut params = ModelParams::init(&cfg.model).unwrap();
        params.insert("odd", Tensor::new(&[2], vec![-0.0, f64::MIN_POSITIVE / 2.0]).unwrap());
        (cfg, params)
    }

    #[test]
    fn byte_exact_round_trip() {
        let (cfg, params) = sample();
        let bytes = encode(&cfg, &params);
        let (c2, p2) = decode(&bytes, "mem").unwrap();
        assert_eq!(c2, cfg);
        for (name, t) in &params.tensors {
            let back = &p2.tensors[name];
            assert_eq!(back.shape(), t.shape());
            let same = back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same, "{name}");
        }
        assert_eq!(encode(&c2, &p2), bytes);
    }

    #[test]
    fn corrupt_input_is_reported() {
        let (cfg, params) = sample();
        let bytes = encode(&cfg, &params);
        let e = decode(&bytes[..bytes.len() - 3], "c.ckpt").unwrap_err().to_string();
        assert!(e.contains("truncated"), "{e}");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad, "c.ckpt").unwrap_err().to_string().contains("byte 0"));
        let mut extra = bytes;
        extra.push(0);
        assert!(decode(&extra, "c.ckpt").unwrap_err().to_string().contains("trailing"));
    }
}
