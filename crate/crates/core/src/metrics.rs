//! Fidelity metrics on 8-bit-range grayscale images.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PEAK: f64 = 255.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Upper edges of the absolute-error bins `[0,5) [5,10) [10,20) [20,∞)`.
pub const ERROR_BIN_EDGES: [f64; 3] = [5.0, 10.0, 20.0];

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Peak signal-to-noise ratio with the MSE it was derived from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Psnr {
    pub db: f64,
    pub mse: f64,
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.db.is_infinite() {
            write!(f, "INF")
        } else {
            write!(f, "{:.4}", self.db)
        }
    }
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_same("mse", a, b)?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.numel() as f64)
}

/// `10·log10(255²/MSE)`; identical images give `+∞`.
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<Psnr> {
    let mse = mse(a, b)?;
    Ok(Psnr {
        db: psnr_from_mse(mse),
        mse,
    })
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (PEAK * PEAK / mse).log10()
    }
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of an `h×w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for ox in 0..ow {
            rows[y * ow + ox] = (0..n).map(|i| k[i] * x[y * w + ox + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = (0..n).map(|i| k[i] * rows[(oy + i) * ow + ox]).sum();
        }
    }
    out
}

/// Mean structural similarity over all fully contained 11×11 Gaussian windows.
///
/// Inputs are single planes; any leading unit axes are ignored.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_same("ssim", a, b)?;
    let nd = a.ndim();
    if nd < 2 || a.shape()[..nd - 2].iter().any(|&d| d != 1) {
        return Err(Error::dim("ssim", format!("expected a single plane, got {:?}", a.shape())));
    }
    let (h, w) = (a.shape()[nd - 2], a.shape()[nd - 1]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Contract(format!(
            "SSIM needs at least {SSIM_WINDOW}×{SSIM_WINDOW} pixels, got {h}×{w}"
        )));
    }
    let k = gaussian_window();
    let (x, y) = (a.data(), b.data());
    let prod = |f: &dyn Fn(usize) -> f64| (0..x.len()).map(f).collect::<Vec<f64>>();
    let mu_x = filter_valid(x, h, w, &k);
    let mu_y = filter_valid(y, h, w, &k);
    let xx = filter_valid(&prod(&|i| x[i] * x[i]), h, w, &k);
    let yy = filter_valid(&prod(&|i| y[i] * y[i]), h, w, &k);
    let xy = filter_valid(&prod(&|i| x[i] * y[i]), h, w, &k);
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let mut total = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let sx = xx[i] - mx * mx;
        let sy = yy[i] - my * my;
        let sxy = xy[i] - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * sxy + c2))
            / ((mx * mx + my * my + c1) * (sx + sy + c2));
    }
    Ok(total / mu_x.len() as f64)
}

/// Pixel counts of `|sr − hr|` per error range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct ErrorHistogram {
    pub counts: [u64; 4],
}

impl ErrorHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Per-bin fractions. The last non-empty bin is `1 − Σ(earlier bins)`,
    /// so the in-order sum is exactly 1; empty bins stay exactly 0.
    pub fn fractions(&self) -> [f64; 4] {
        let t = self.total() as f64;
        let mut f = self.counts.map(|c| c as f64 / t);
        if let Some(last) = (0..4).rev().find(|&i| self.counts[i] > 0) {
            f[last] = 1.0 - f[..last].iter().sum::<f64>();
        }
        f
    }

    pub fn merge(&mut self, other: &ErrorHistogram) {
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
    }
}

pub fn error_histogram(sr: &Tensor, hr: &Tensor) -> Result<ErrorHistogram> {
    check_same("error_histogram", sr, hr)?;
    let mut h = ErrorHistogram::default();
    for (a, b) in sr.data().iter().zip(hr.data()) {
        let e = (a - b).abs();
        let bin = ERROR_BIN_EDGES.iter().position(|&edge| e < edge).unwrap_or(3);
        h.counts[bin] += 1;
    }
    Ok(h)
}

/// BT.601 luma from RGB planes in `[0, 255]`.
pub fn rgb_to_luma(r: &Tensor, g: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same("rgb_to_luma", r, g)?;
    check_same("rgb_to_luma", r, b)?;
    Ok(Tensor::from_fn(r.shape(), |i| {
        0.299 * r.data()[i] + 0.587 * g.data()[i] + 0.114 * b.data()[i]
    }))
}
