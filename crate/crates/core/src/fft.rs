//! Discrete Fourier transforms over the trailing two axes.
//!
//! Convention: unnormalized forward transform with kernel `e^{−2πi·kn/N}`,
//! inverse scaled by `1/(H·W)`, DC at index `(0, 0)`. Power-of-two lengths
//! use iterative radix-2 Cooley–Tukey; other lengths fall back to a direct
//! DFT with an exact twiddle table.

use std::f64::consts::PI;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bins whose magnitude falls below this have no meaningful phase.
pub const PHASE_EPS: f64 = 1e-8;

/// Complex array with separate real and imaginary planes.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrum {
    shape: Vec<usize>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexSpectrum {
    pub fn new(shape: &[usize], re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if re.len() != n || im.len() != n {
            return Err(Error::dim(
                "spectrum",
                format!("shape {shape:?} needs {n} values, got {}/{}", re.len(), im.len()),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            re,
            im,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            re: vec![0.0; n],
            im: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn get(&self, idx: usize) -> (f64, f64) {
        (self.re[idx], self.im[idx])
    }

    /// `√(re² + im²)` per bin.
    pub fn magnitude(&self) -> Tensor {
        let data = self.re.iter().zip(&self.im).map(|(r, i)| r.hypot(*i)).collect();
        Tensor::new(&self.shape, data).expect("spectrum shape")
    }

    /// `atan2(im, re)` per bin, in `(−π, π]`.
    pub fn phase(&self) -> Tensor {
        let data = self
            .re
            .iter()
            .zip(&self.im)
            .map(|(r, i)| canonical_angle(i.atan2(*r)))
            .collect();
        Tensor::new(&self.shape, data).expect("spectrum shape")
    }

    /// Bins with magnitude at least `eps`, where phase is defined.
    pub fn phase_valid(&self, eps: f64) -> Vec<bool> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(r, i)| r.hypot(*i) >= eps)
            .collect()
    }
}

// atan2 returns −π for (negative, −0.0); fold it onto π.
fn canonical_angle(a: f64) -> f64 {
    if a <= -PI {
        PI
    } else {
        a
    }
}

/// Map an angle difference into `(−π, π]`.
pub fn wrap_angle(d: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut w = d - two_pi * (d / two_pi).round();
    if w <= -PI {
        w += two_pi;
    } else if w > PI {
        w -= two_pi;
    }
    w
}

fn twiddles(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|k| {
            let a = -2.0 * PI * k as f64 / n as f64;
            (a.cos(), a.sin())
        })
        .collect()
}

/// In-place forward DFT of one complex line.
pub fn fft1d(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    debug_assert_eq!(n, im.len());
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        radix2(re, im);
    } else {
        direct_dft(re, im);
    }
}

fn radix2(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let tw = twiddles(n);
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let (wr, wi) = tw[k * step];
                let (a, b) = (start + k, start + k + half);
                let tr = re[b] * wr - im[b] * wi;
                let ti = re[b] * wi + im[b] * wr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
        len <<= 1;
    }
}

fn direct_dft(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    let tw = twiddles(n);
    let (xr, xi) = (re.to_vec(), im.to_vec());
    for k in 0..n {
        let (mut sr, mut si) = (0.0, 0.0);
        for j in 0..n {
            let (wr, wi) = tw[(k * j) % n];
            sr += xr[j] * wr - xi[j] * wi;
            si += xr[j] * wi + xi[j] * wr;
        }
        re[k] = sr;
        im[k] = si;
    }
}

// Forward 2-D DFT of every trailing [h×w] plane, in place.
fn fft2_planes(re: &mut [f64], im: &mut [f64], h: usize, w: usize) {
    let mut col_re = vec![0.0; h];
    let mut col_im = vec![0.0; h];
    for (pre, pim) in re.chunks_mut(h * w).zip(im.chunks_mut(h * w)) {
        for y in 0..h {
            fft1d(&mut pre[y * w..(y + 1) * w], &mut pim[y * w..(y + 1) * w]);
        }
        for x in 0..w {
            for y in 0..h {
                col_re[y] = pre[y * w + x];
                col_im[y] = pim[y * w + x];
            }
            fft1d(&mut col_re, &mut col_im);
            for y in 0..h {
                pre[y * w + x] = col_re[y];
                pim[y * w + x] = col_im[y];
            }
        }
    }
}

fn plane_dims(shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [.., h, w] => Ok((*h, *w)),
        _ => Err(Error::dim("fft2d", format!("expected [..., H, W], got {shape:?}"))),
    }
}

/// Forward 2-D DFT of a real tensor over its trailing two axes.
pub fn fft2d(x: &Tensor) -> Result<ComplexSpectrum> {
    let (h, w) = plane_dims(x.shape())?;
    let mut re = x.data().to_vec();
    let mut im = vec![0.0; re.len()];
    fft2_planes(&mut re, &mut im, h, w);
    ComplexSpectrum::new(x.shape(), re, im)
}

/// Forward 2-D DFT of a complex array.
pub fn fft2d_complex(s: &ComplexSpectrum) -> Result<ComplexSpectrum> {
    let (h, w) = plane_dims(&s.shape)?;
    let mut out = s.clone();
    fft2_planes(&mut out.re, &mut out.im, h, w);
    Ok(out)
}

/// Inverse 2-D DFT returning the full complex result.
pub fn ifft2d_complex(s: &ComplexSpectrum) -> Result<ComplexSpectrum> {
    let (h, w) = plane_dims(&s.shape)?;
    let mut re = s.re.clone();
    let mut im: Vec<f64> = s.im.iter().map(|v| -v).collect();
    fft2_planes(&mut re, &mut im, h, w);
    let norm = 1.0 / (h * w) as f64;
    re.iter_mut().for_each(|v| *v *= norm);
    im.iter_mut().for_each(|v| *v *= -norm);
    ComplexSpectrum::new(&s.shape, re, im)
}

/// Inverse 2-D DFT of a spectrum known to come from a real image.
///
/// Fails when the imaginary residue exceeds `1e-10` relative to the
/// largest real value (or absolutely, for tiny images).
pub fn ifft2d(s: &ComplexSpectrum) -> Result<Tensor> {
    let out = ifft2d_complex(s)?;
    let scale = out.re.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let residue = out.im.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if residue > 1e-10 * scale {
        return Err(Error::Numerical(format!(
            "inverse transform has imaginary residue {residue:e}; spectrum is not conjugate-symmetric"
        )));
    }
    Tensor::new(&s.shape, out.re)
}

/// Shift the DC bin to the center of each trailing plane.
pub fn fftshift(x: &Tensor) -> Result<Tensor> {
    let (h, w) = plane_dims(x.shape())?;
    let mut out = x.clone();
    let (sy, sx) = (h / 2, w / 2);
    for (src, dst) in x.data().chunks(h * w).zip(out.data_mut().chunks_mut(h * w)) {
        for y in 0..h {
            for xx in 0..w {
                dst[((y + sy) % h) * w + (xx + sx) % w] = src[y * w + xx];
            }
        }
    }
    Ok(out)
}

impl Graph {
    /// 2-D DFT of a real `[..., H, W]` tensor as `[..., H, W, 2]` (re, im).
    pub fn fft2(&mut self, x: Var) -> Result<Var> {
        let spec = fft2d(self.value(x))?;
        let mut shape = self.shape(x).to_vec();
        shape.push(2);
        let data = spec.re.iter().zip(&spec.im).flat_map(|(r, i)| [*r, *i]).collect();
        let value = Tensor::new(&shape, data)?;
        let in_shape = self.shape(x).to_vec();
        Ok(self.record(
            "fft2",
            &[x],
            value,
            Box::new(move |c| {
                // d/dx of Σ gre·re + gim·im is Re(F(gre − i·gim)).
                let g = c.grad.data();
                let re = g.iter().step_by(2).copied().collect();
                let im = g.iter().skip(1).step_by(2).map(|v| -v).collect();
                let spec = ComplexSpectrum::new(&in_shape, re, im).expect("fft2 grad");
                let out = fft2d_complex(&spec).expect("fft2 grad");
                vec![Some(Tensor::new(&in_shape, out.re).expect("fft2 grad"))]
            }),
        ))
    }

    /// Modulus of a `[..., 2]` complex tensor; gradient 0 at the origin.
    pub fn complex_abs(&mut self, s: Var) -> Result<Var> {
        let (shape, data) = split_complex(self.value(s))?;
        let value = Tensor::new(&shape, data.iter().map(|(r, i)| r.hypot(*i)).collect())?;
        Ok(self.record(
            "complex_abs",
            &[s],
            value,
            Box::new(|c| {
                let z = c.inputs[0].data();
                let mut g = vec![0.0; z.len()];
                for (k, (&m, &up)) in c.output.data().iter().zip(c.grad.data()).enumerate() {
                    if m > 0.0 {
                        g[2 * k] = up * z[2 * k] / m;
                        g[2 * k + 1] = up * z[2 * k + 1] / m;
                    }
                }
                vec![Some(Tensor::new(c.inputs[0].shape(), g).expect("complex_abs"))]
            }),
        ))
    }

    /// Argument of a `[..., 2]` complex tensor in `(−π, π]`; gradient 0 at the origin.
    pub fn complex_angle(&mut self, s: Var) -> Result<Var> {
        let (shape, data) = split_complex(self.value(s))?;
        let value = Tensor::new(
            &shape,
            data.iter().map(|(r, i)| canonical_angle(i.atan2(*r))).collect(),
        )?;
        Ok(self.record(
            "complex_angle",
            &[s],
            value,
            Box::new(|c| {
                let z = c.inputs[0].data();
                let mut g = vec![0.0; z.len()];
                for (k, &up) in c.grad.data().iter().enumerate() {
                    let (r, i) = (z[2 * k], z[2 * k + 1]);
                    let m2 = r * r + i * i;
                    if m2 > 0.0 {
                        g[2 * k] = -up * i / m2;
                        g[2 * k + 1] = up * r / m2;
                    }
                }
                vec![Some(Tensor::new(c.inputs[0].shape(), g).expect("complex_angle"))]
            }),
        ))
    }

    /// Elementwise [`wrap_angle`]; locally the identity, so the gradient is 1.
    pub fn wrap_angle(&mut self, x: Var) -> Var {
        let value = self.value(x).map(wrap_angle);
        self.record(
            "wrap_angle",
            &[x],
            value,
            Box::new(|c| vec![Some(c.grad.clone())]),
        )
    }
}

fn split_complex(t: &Tensor) -> Result<(Vec<usize>, Vec<(f64, f64)>)> {
    match t.shape() {
        [lead @ .., 2] => Ok((
            lead.to_vec(),
            t.data().chunks(2).map(|p| (p[0], p[1])).collect(),
        )),
        other => Err(Error::dim("complex", format!("expected trailing axis of 2, got {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // Direct double-sum DFT, independent of the line transforms above.
    fn naive_dft2(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
        let (h, w) = (x.shape()[0], x.shape()[1]);
        let mut re = vec![0.0; h * w];
        let mut im = vec![0.0; h * w];
        for u in 0..h {
            for v in 0..w {
                for y in 0..h {
                    for xx in 0..w {
                        let a = -2.0 * PI * ((u * y) as f64 / h as f64 + (v * xx) as f64 / w as f64);
                        re[u * w + v] += x.at(&[y, xx]) * a.cos();
                        im[u * w + v] += x.at(&[y, xx]) * a.sin();
                    }
                }
            }
        }
        (re, im)
    }

    #[test]
    fn constant_image_is_dc_only() {
        let s = fft2d(&Tensor::full(&[4, 6], 2.5)).unwrap();
        assert!((s.re[0] - 2.5 * 24.0).abs() < 1e-12);
        for k in 1..24 {
            assert!(s.re[k].abs() < 1e-12 && s.im[k].abs() < 1e-12);
        }
    }

    #[test]
    fn delta_is_flat() {
        let mut x = Tensor::zeros(&[4, 4]);
        x.set(&[0, 0], 1.0);
        let s = fft2d(&x).unwrap();
        assert!(s.re.iter().all(|v| (v - 1.0).abs() < 1e-15));
        assert!(s.im.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn matches_naive_dft_on_odd_and_even_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for &(h, w) in &[(7usize, 5usize), (8, 8), (4, 6), (1, 3)] {
            let x = Tensor::uniform(&[h, w], -1.0, 1.0, &mut rng);
            let s = fft2d(&x).unwrap();
            let (re, im) = naive_dft2(&x);
            for k in 0..h * w {
                assert!((s.re[k] - re[k]).abs() < 1e-10 && (s.im[k] - im[k]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_spectrum_inverts_to_zero() {
        let z = ifft2d(&ComplexSpectrum::zeros(&[3, 4])).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn asymmetric_spectrum_is_rejected() {
        let mut s = ComplexSpectrum::zeros(&[4, 4]);
        s.im[1] = 1.0;
        assert!(matches!(ifft2d(&s), Err(Error::Numerical(_))));
    }

    #[test]
    fn magnitude_and_phase_basics() {
        let s = ComplexSpectrum::new(&[3], vec![3.0, 0.0, 1.0], vec![4.0, 1.0, 0.0]).unwrap();
        assert_eq!(s.magnitude().data()[0], 5.0);
        let p = s.phase();
        assert!((p.data()[1] - PI / 2.0).abs() < 1e-15);
        assert_eq!(p.data()[2], 0.0);
        let neg = ComplexSpectrum::new(&[1], vec![-1.0], vec![-0.0]).unwrap();
        assert_eq!(neg.phase().data()[0], PI);
    }

    #[test]
    fn wrap_angle_range() {
        for d in [-7.0, -PI, -3.0, 0.0, 3.0, PI, 7.0, 4.0 * PI] {
            let w = wrap_angle(d);
            assert!(w > -PI && w <= PI, "{d} -> {w}");
            let k = (d - w) / (2.0 * PI);
            assert!((k - k.round()).abs() < 1e-12);
        }
    }

    #[test]
    fn fftshift_moves_dc_to_center() {
        let mut x = Tensor::zeros(&[4, 5]);
        x.set(&[0, 0], 1.0);
        let y = fftshift(&x).unwrap();
        assert_eq!(y.at(&[2, 2]), 1.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn linearity(seed in 0u64..500, a in -3.0f64..3.0, b in -3.0f64..3.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = Tensor::uniform(&[6, 8], -1.0, 1.0, &mut rng);
                let y = Tensor::uniform(&[6, 8], -1.0, 1.0, &mut rng);
                let lhs = fft2d(&x.scale(a).add(&y.scale(b)).unwrap()).unwrap();
                let (sx, sy) = (fft2d(&x).unwrap(), fft2d(&y).unwrap());
                for k in 0..48 {
                    prop_assert!((lhs.re[k] - (a * sx.re[k] + b * sy.re[k])).abs() < 1e-10);
                    prop_assert!((lhs.im[k] - (a * sx.im[k] + b * sy.im[k])).abs() < 1e-10);
                }
            }

            #[test]
            fn conjugate_symmetry(seed in 0u64..500) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (h, w) = (5usize, 8usize);
                let x = Tensor::uniform(&[h, w], -1.0, 1.0, &mut rng);
                let s = fft2d(&x).unwrap();
                for u in 0..h {
                    for v in 0..w {
                        let k = u * w + v;
                        let m = ((h - u) % h) * w + (w - v) % w;
                        prop_assert!((s.re[k] - s.re[m]).abs() < 1e-12);
                        prop_assert!((s.im[k] + s.im[m]).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
