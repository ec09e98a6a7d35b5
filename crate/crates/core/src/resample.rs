//! Separable image resampling: bicubic (Keys, a = −0.5) and bilinear.
//!
//! Each 1-D resize is a dense `[out×in]` weight matrix; images are resized
//! by `wy · X · wxᵀ`. Because the map is linear, the same matrices serve the
//! differentiable skip path and the thermal-mask interpolation.

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

const KEYS_A: f64 = -0.5;

/// Keys cubic convolution kernel.
pub fn keys_cubic(x: f64) -> f64 {
    let a = KEYS_A;
    let x = x.abs();
    if x <= 1.0 {
        (a + 2.0) * x * x * x - (a + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        a * x * x * x - 5.0 * a * x * x + 8.0 * a * x - 4.0 * a
    } else {
        0.0
    }
}

/// Supported resize factors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Factor {
    Up(usize),
    Down(usize),
}

impl Factor {
    pub fn from_ratio(num: usize, den: usize) -> Result<Self> {
        match (num, den) {
            (2, 1) => Ok(Factor::Up(2)),
            (4, 1) => Ok(Factor::Up(4)),
            (1, 2) => Ok(Factor::Down(2)),
            (1, 4) => Ok(Factor::Down(4)),
            _ => Err(Error::Config(format!(
                "unsupported resize factor {num}/{den}; expected one of 1/2, 1/4, 2, 4"
            ))),
        }
    }

    fn check(self) -> Result<()> {
        match self {
            Factor::Up(2 | 4) | Factor::Down(2 | 4) => Ok(()),
            other => Err(Error::Config(format!("unsupported resize factor {other:?}"))),
        }
    }

    fn out_len(self, n: usize) -> Result<usize> {
        match self {
            Factor::Up(s) => Ok(n * s),
            Factor::Down(s) if n.is_multiple_of(s) => Ok(n / s),
            Factor::Down(s) => Err(Error::dim(
                "bicubic_resize",
                format!("extent {n} not divisible by {s}"),
            )),
        }
    }
}

/// Bicubic weights `[out_len×in_len]` with edge clamping. When shrinking,
/// the kernel is stretched by the inverse scale (antialiasing).
pub fn bicubic_weights(in_len: usize, out_len: usize) -> Tensor {
    let scale = out_len as f64 / in_len as f64;
    let (stretch, support) = if scale < 1.0 {
        (scale, 2.0 / scale)
    } else {
        (1.0, 2.0)
    };
    let mut w = Tensor::zeros(&[out_len, in_len]);
    for o in 0..out_len {
        let center = (o as f64 + 0.5) / scale - 0.5;
        let lo = (center - support).floor() as isize;
        let hi = (center + support).ceil() as isize;
        let mut row = vec![0.0; in_len];
        for j in lo..=hi {
            let k = keys_cubic((center - j as f64) * stretch);
            if k == 0.0 {
                continue;
            }
            let jc = j.clamp(0, in_len as isize - 1) as usize;
            row[jc] += k;
        }
        let s: f64 = row.iter().sum();
        for (i, v) in row.iter().enumerate() {
            w.set(&[o, i], v / s);
        }
    }
    w
}

/// Bilinear weights with half-pixel centers, clamped at the borders.
pub fn bilinear_weights(in_len: usize, out_len: usize) -> Tensor {
    let scale = out_len as f64 / in_len as f64;
    let mut w = Tensor::zeros(&[out_len, in_len]);
    for o in 0..out_len {
        let c = ((o as f64 + 0.5) / scale - 0.5).clamp(0.0, (in_len - 1) as f64);
        let j0 = c.floor() as usize;
        let j1 = (j0 + 1).min(in_len - 1);
        let f = c - j0 as f64;
        w.set(&[o, j0], w.at(&[o, j0]) + 1.0 - f);
        w.set(&[o, j1], w.at(&[o, j1]) + f);
    }
    w
}

/// `wy · X · wxᵀ` on every trailing `[H×W]` plane of `x`.
pub fn apply_separable(x: &Tensor, wy: &Tensor, wx: &Tensor) -> Result<Tensor> {
    let nd = x.ndim();
    if nd < 2 || wy.ndim() != 2 || wx.ndim() != 2 {
        return Err(Error::dim("resize", format!("expected [..., H, W], got {:?}", x.shape())));
    }
    let (h, w) = (x.shape()[nd - 2], x.shape()[nd - 1]);
    if wy.shape()[1] != h || wx.shape()[1] != w {
        return Err(Error::dim(
            "resize",
            format!(
                "weights {:?}/{:?} do not fit plane {h}×{w}",
                wy.shape(),
                wx.shape()
            ),
        ));
    }
    let (ho, wo) = (wy.shape()[0], wx.shape()[0]);
    let wxt = tensor::transpose2d(wx)?;
    let planes = x.numel() / (h * w);
    let mut out = Vec::with_capacity(planes * ho * wo);
    for p in 0..planes {
        let plane = Tensor::new(&[h, w], x.data()[p * h * w..(p + 1) * h * w].to_vec())?;
        let tmp = tensor::matmul(wy, &plane)?;
        out.extend(tensor::matmul(&tmp, &wxt)?.into_data());
    }
    let mut shape = x.shape().to_vec();
    shape[nd - 2] = ho;
    shape[nd - 1] = wo;
    Tensor::new(&shape, out)
}

/// Bicubic weight matrices for resizing an `h×w` plane by `factor`.
pub fn bicubic_matrices(h: usize, w: usize, factor: Factor) -> Result<(Tensor, Tensor)> {
    factor.check()?;
    let (ho, wo) = (factor.out_len(h)?, factor.out_len(w)?);
    Ok((bicubic_weights(h, ho), bicubic_weights(w, wo)))
}

/// Bicubic resize of the trailing two axes; output clipped to `[0, 255]`.
pub fn bicubic_resize(img: &Tensor, factor: Factor) -> Result<Tensor> {
    let nd = img.ndim();
    if nd < 2 {
        return Err(Error::dim("bicubic_resize", format!("expected an image, got {:?}", img.shape())));
    }
    let (wy, wx) = bicubic_matrices(img.shape()[nd - 2], img.shape()[nd - 1], factor)?;
    Ok(apply_separable(img, &wy, &wx)?.map(|v| v.clamp(0.0, 255.0)))
}

/// Bilinear resize of the trailing two axes to `(ho, wo)`.
pub fn bilinear_resize(img: &Tensor, ho: usize, wo: usize) -> Result<Tensor> {
    let nd = img.ndim();
    if nd < 2 {
        return Err(Error::dim("bilinear_resize", format!("expected an image, got {:?}", img.shape())));
    }
    let wy = bilinear_weights(img.shape()[nd - 2], ho);
    let wx = bilinear_weights(img.shape()[nd - 1], wo);
    apply_separable(img, &wy, &wx)
}

/// Crop the trailing two axes down to multiples of `s`.
pub fn modcrop(img: &Tensor, s: usize) -> Result<Tensor> {
    let nd = img.ndim();
    let (h, w) = (img.shape()[nd - 2], img.shape()[nd - 1]);
    let (hc, wc) = (h - h % s, w - w % s);
    if hc == 0 || wc == 0 {
        return Err(Error::dim("modcrop", format!("{h}×{w} smaller than scale {s}")));
    }
    let planes = img.numel() / (h * w);
    let mut out = Vec::with_capacity(planes * hc * wc);
    for p in 0..planes {
        for y in 0..hc {
            let base = p * h * w + y * w;
            out.extend_from_slice(&img.data()[base..base + wc]);
        }
    }
    let mut shape = img.shape().to_vec();
    shape[nd - 2] = hc;
    shape[nd - 1] = wc;
    Tensor::new(&shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_image_is_preserved() {
        let img = Tensor::full(&[8, 8], 77.0);
        for f in [Factor::Down(2), Factor::Down(4), Factor::Up(2), Factor::Up(4)] {
            let out = bicubic_resize(&img, f).unwrap();
            assert!(out.data().iter().all(|v| (v - 77.0).abs() < 1e-12), "{f:?}");
        }
    }

    #[test]
    fn unsupported_factor_is_config_error() {
        assert!(matches!(Factor::from_ratio(3, 1), Err(Error::Config(_))));
        assert!(bicubic_resize(&Tensor::zeros(&[8, 8]), Factor::Up(3)).is_err());
        assert_eq!(Factor::from_ratio(1, 4).unwrap(), Factor::Down(4));
    }

    #[test]
    fn ramp_survives_down_then_up() {
        let img = Tensor::from_fn(&[32, 32], |i| 10.0 + 3.0 * (i % 32) as f64 + 2.0 * (i / 32) as f64);
        let down = bicubic_resize(&img, Factor::Down(2)).unwrap();
        let up = bicubic_resize(&down, Factor::Up(2)).unwrap();
        for y in 8..24 {
            for x in 8..24 {
                assert!((up.at(&[y, x]) - img.at(&[y, x])).abs() < 1e-6, "({y},{x})");
            }
        }
    }

    #[test]
    fn downscale_matches_kernel_sum_then_decimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let img = Tensor::uniform(&[8, 8], 0.0, 255.0, &mut rng);
        let out = bicubic_resize(&img, Factor::Down(2)).unwrap();
        // Stretched kernel k(d/2) sampled around source position 2o + 0.5,
        // replicated borders, normalized per axis.
        let taps = |o: usize| -> Vec<(usize, f64)> {
            let c = 2.0 * o as f64 + 0.5;
            let mut acc = [0.0f64; 8];
            for j in -6isize..14 {
                let wgt = keys_cubic((c - j as f64) / 2.0);
                acc[j.clamp(0, 7) as usize] += wgt;
            }
            let s: f64 = acc.iter().sum();
            acc.iter().enumerate().map(|(i, v)| (i, v / s)).collect()
        };
        for oy in 0..4 {
            for ox in 0..4 {
                let mut v = 0.0;
                for &(iy, wy) in &taps(oy) {
                    for &(ix, wx) in &taps(ox) {
                        v += wy * wx * img.at(&[iy, ix]);
                    }
                }
                assert!((out.at(&[oy, ox]) - v.clamp(0.0, 255.0)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn bilinear_two_by_two_to_four_by_four() {
        let m = Tensor::new(&[2, 2], vec![0.1, 0.7, 0.4, 0.9]).unwrap();
        let out = bilinear_resize(&m, 4, 4).unwrap();
        // Source coordinate of output o is clamp((o + 0.5)/2 − 0.5, 0, 1).
        let pos = [0.0, 0.25, 0.75, 1.0];
        for (oy, &fy) in pos.iter().enumerate() {
            for (ox, &fx) in pos.iter().enumerate() {
                let expect = (1.0 - fy) * (1.0 - fx) * 0.1
                    + (1.0 - fy) * fx * 0.7
                    + fy * (1.0 - fx) * 0.4
                    + fy * fx * 0.9;
                assert!((out.at(&[oy, ox]) - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn modcrop_trims_remainder() {
        let img = Tensor::from_fn(&[5, 7], |i| i as f64);
        let c = modcrop(&img, 2).unwrap();
        assert_eq!(c.shape(), &[4, 6]);
        assert_eq!(c.at(&[3, 5]), img.at(&[3, 5]));
    }
}
