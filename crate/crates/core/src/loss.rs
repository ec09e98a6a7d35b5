//! Training objective: Fourier phase consistency, thermally masked spectral
//! magnitude, and an optional pixel L1 term.
//!
//! Images are in `[0, 255]` and spectra are unnormalized forward DFTs, so
//! the magnitude term is numerically much larger than the phase term (which
//! is in radians).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::fft::{self, PHASE_EPS};
use crate::network::ModelParams;
use crate::resample;
use crate::tensor::{self, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_phase: f64,
    pub lambda_freq: f64,
    pub lambda_pix: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_phase: 0.2,
            lambda_freq: 0.8,
            lambda_pix: 1.0,
        }
    }
}

impl LossWeights {
    /// Spectral terms only.
    pub fn paper() -> Self {
        Self {
            lambda_pix: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_phase", self.lambda_phase),
            ("lambda_freq", self.lambda_freq),
            ("lambda_pix", self.lambda_pix),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and ≥ 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Frozen feature map applied to HR images before the gate.
pub trait FeatureExtractor: Send + Sync {
    /// `hr[B×1×H×W]` in `[0, 255]` to `[B×F×h×w]`.
    fn features(&self, hr: &Tensor) -> Result<Tensor>;
    fn channels(&self) -> usize;
    fn describe(&self) -> String;
}

/// Fixed random 3×3 stride-2 conv stack with ReLU.
#[derive(Clone, Debug)]
pub struct ConvExtractor {
    kernels: Vec<Tensor>,
    seed: u64,
}

pub const EXTRACTOR_WIDTHS: [usize; 4] = [1, 8, 16, 16];

impl ConvExtractor {
    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kernels = EXTRACTOR_WIDTHS
            .windows(2)
            .map(|w| {
                let bound = (6.0 / (9 * w[0]) as f64).sqrt();
                Tensor::uniform(&[w[1], w[0], 3, 3], -bound, bound, &mut rng)
            })
            .collect();
        Self { kernels, seed }
    }
}

impl FeatureExtractor for ConvExtractor {
    fn features(&self, hr: &Tensor) -> Result<Tensor> {
        let mut x = hr.scale(1.0 / 255.0);
        for k in &self.kernels {
            x = tensor::conv2d(&x, k, 2, 1)?.map(|v| v.max(0.0));
        }
        Ok(x)
    }

    fn channels(&self) -> usize {
        *EXTRACTOR_WIDTHS.last().unwrap()
    }

    fn describe(&self) -> String {
        format!("conv3x3-stride2 {:?} seed {}", EXTRACTOR_WIDTHS, self.seed)
    }
}

/// Add gate parameters (`gate.weight [1×F×1×1]`, `gate.bias [1]`) to `params`.
pub fn init_gate(params: &mut ModelParams, channels: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = 1.0 / (channels as f64).sqrt();
    params.insert("gate.weight", Tensor::uniform(&[1, channels, 1, 1], -b, b, &mut rng));
    params.insert("gate.bias", Tensor::zeros(&[1]));
}

/// `σ(gate(features(hr)))`, bilinearly resized to the HR extent: `[B×1×H×W]`.
///
/// Only the gate parameters are tracked; the mask carries no dependence on
/// the SR output.
pub fn thermal_mask(
    g: &mut Graph,
    hr: &Tensor,
    params: &ModelParams,
    extractor: &dyn FeatureExtractor,
) -> Result<Var> {
    if hr.ndim() != 4 || hr.shape()[1] != 1 {
        return Err(Error::dim("thermal_mask", format!("expected [B×1×H×W], got {:?}", hr.shape())));
    }
    let feats = extractor.features(hr)?;
    let fv = g.constant(feats.clone());
    let w = params.bind(g, "gate.weight")?;
    let b = params.bind(g, "gate.bias")?;
    let logits = g.conv2d(fv, w, 1, 0)?;
    let logits = g.add_channel(logits, b)?;
    let gate = g.sigmoid(logits);
    let (fh, fw) = (feats.shape()[2], feats.shape()[3]);
    let (h, wd) = (hr.shape()[2], hr.shape()[3]);
    let wy = resample::bilinear_weights(fh, h);
    let wx = resample::bilinear_weights(fw, wd);
    g.resize2d(gate, &wy, &wx)
}

fn check_pair(op: &'static str, sr: &[usize], hr: &[usize]) -> Result<()> {
    if sr != hr || sr.len() < 2 {
        return Err(Error::dim(op, format!("sr {sr:?} vs hr {hr:?}")));
    }
    Ok(())
}

/// Mean over bins where both spectra are well defined of the wrapped phase
/// difference magnitude; 0 when no bin qualifies.
pub fn phase_loss(g: &mut Graph, sr: Var, hr: &Tensor) -> Result<Var> {
    check_pair("phase_loss", g.shape(sr), hr.shape())?;
    let hr_spec = fft::fft2d(hr)?;
    let sr_spec = g.fft2(sr)?;
    let hr_phase = g.constant(hr_spec.phase());
    let sr_phase = g.complex_angle(sr_spec)?;
    let hr_ok = hr_spec.phase_valid(PHASE_EPS);
    let sr_mag = Tensor::new(
        hr.shape(),
        g.value(sr_spec).data().chunks(2).map(|z| z[0].hypot(z[1])).collect(),
    )?;
    let valid: Vec<f64> = hr_ok
        .iter()
        .zip(sr_mag.data())
        .map(|(&ok, &m)| if ok && m >= PHASE_EPS { 1.0 } else { 0.0 })
        .collect();
    let count: f64 = valid.iter().sum();
    if count == 0.0 {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let diff = g.sub(sr_phase, hr_phase)?;
    let wrapped = g.wrap_angle(diff);
    let err = g.abs(wrapped);
    let weights = Tensor::new(hr.shape(), valid)?.scale(1.0 / count);
    g.weighted_sum(err, &weights)
}

/// Mean over all bins of `| |F(sr⊙m)| − |F(hr⊙m)| |`.
pub fn freq_loss(g: &mut Graph, sr: Var, hr: &Tensor, mask: Var) -> Result<Var> {
    check_pair("freq_loss", g.shape(sr), hr.shape())?;
    if g.shape(mask) != hr.shape() {
        return Err(Error::dim(
            "freq_loss",
            format!("mask {:?} vs image {:?}", g.shape(mask), hr.shape()),
        ));
    }
    let hv = g.constant(hr.clone());
    let srm = g.mul(sr, mask)?;
    let hrm = g.mul(hv, mask)?;
    let fs = g.fft2(srm)?;
    let fh = g.fft2(hrm)?;
    let ms = g.complex_abs(fs)?;
    let mh = g.complex_abs(fh)?;
    let d = g.sub(ms, mh)?;
    let a = g.abs(d);
    Ok(g.mean(a))
}

/// `mean |sr − hr|`.
pub fn pixel_loss(g: &mut Graph, sr: Var, hr: &Tensor) -> Result<Var> {
    check_pair("pixel_loss", g.shape(sr), hr.shape())?;
    let hv = g.constant(hr.clone());
    let d = g.sub(sr, hv)?;
    let a = g.abs(d);
    Ok(g.mean(a))
}

#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub phase: Var,
    pub freq: Var,
    pub pix: Var,
}

/// `λ_phase·phase + λ_freq·freq + λ_pix·pix`.
pub fn total_loss(g: &mut Graph, sr: Var, hr: &Tensor, mask: Var, w: &LossWeights) -> Result<LossTerms> {
    w.validate()?;
    let phase = phase_loss(g, sr, hr)?;
    let freq = freq_loss(g, sr, hr, mask)?;
    let pix = pixel_loss(g, sr, hr)?;
    let a = g.scale(phase, w.lambda_phase);
    let b = g.scale(freq, w.lambda_freq);
    let c = g.scale(pix, w.lambda_pix);
    let ab = g.add(a, b)?;
    let total = g.add(ab, c)?;
    Ok(LossTerms {
        total,
        phase,
        freq,
        pix,
    })
}

/// Scalar loss values on plain tensors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub phase: f64,
    pub freq: f64,
    pub pix: f64,
}

pub fn loss_values(sr: &Tensor, hr: &Tensor, mask: &Tensor, w: &LossWeights) -> Result<LossValues> {
    let mut g = Graph::new();
    let s = g.constant(sr.clone());
    let m = g.constant(mask.clone());
    let t = total_loss(&mut g, s, hr, m, w)?;
    Ok(LossValues {
        total: g.value(t.total).item(),
        phase: g.value(t.phase).item(),
        freq: g.value(t.freq).item(),
        pix: g.value(t.pix).item(),
    })
}
