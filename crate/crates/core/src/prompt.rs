//! Fused prompt generation: hard Gumbel routing into a learnable prompt pool
//! (spatial prompt) plus self-attention over Fourier features (global prompt).

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::scan::SemanticOrder;
use crate::tensor::{self, Tensor};

/// How complex Fourier coefficients are turned into real attention features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FreqFeatures {
    /// `[re | im]`, `2C` features per token.
    #[default]
    Complex,
    /// `|F|`, `C` features per token.
    Magnitude,
}

impl FreqFeatures {
    pub fn as_str(self) -> &'static str {
        match self {
            FreqFeatures::Complex => "complex",
            FreqFeatures::Magnitude => "magnitude",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "complex" => Some(FreqFeatures::Complex),
            "magnitude" => Some(FreqFeatures::Magnitude),
            _ => None,
        }
    }

    /// Feature width per token for `channels` input channels.
    pub fn width(self, channels: usize) -> usize {
        match self {
            FreqFeatures::Complex => 2 * channels,
            FreqFeatures::Magnitude => channels,
        }
    }
}

/// Learnable prompt pool `[T×C]` and its Gumbel temperature.
#[derive(Clone, Copy, Debug)]
pub struct PromptPool {
    pub pool: Var,
    pub temperature: f64,
}

/// Everything the prompt stage produces for one module call.
#[derive(Clone, Debug)]
pub struct PromptState {
    pub routing: Var,
    pub p_spatial: Var,
    pub p_global: Var,
    pub p_fused: Var,
    pub order: SemanticOrder,
}

/// Standard Gumbel(0, 1) samples.
pub fn gumbel_noise<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
        -(-u.ln()).ln()
    })
}

fn one_hot_argmax(z: &Tensor) -> Tensor {
    let t = z.last_dim();
    let mut out = Tensor::zeros(z.shape());
    for (row, o) in z.data().chunks(t).zip(out.data_mut().chunks_mut(t)) {
        // First maximum wins.
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        o[best] = 1.0;
    }
    out
}

/// Hard routing of `logits[B×N×T]`.
///
/// With `noise`, the forward value is `one_hot(argmax(logits + noise))` and
/// the backward pass uses the Jacobian of `softmax((logits + noise)/τ)`.
/// Without noise the output is the plain argmax and carries no gradient.
pub fn route_tokens(g: &mut Graph, logits: Var, temperature: f64, noise: Option<&Tensor>) -> Result<Var> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("Gumbel temperature must be > 0, got {temperature}")));
    }
    let lv = g.value(logits).clone();
    if lv.ndim() != 3 {
        return Err(Error::dim("route_tokens", format!("expected [B×N×T], got {:?}", lv.shape())));
    }
    let Some(noise) = noise else {
        let hard = one_hot_argmax(&lv);
        return Ok(g.record("route_eval", &[logits], hard, Box::new(|_| vec![None])));
    };
    if noise.shape() != lv.shape() {
        return Err(Error::dim(
            "route_tokens",
            format!("noise {:?} does not match logits {:?}", noise.shape(), lv.shape()),
        ));
    }
    let z = lv.add(noise)?.scale(1.0 / temperature);
    let soft = tensor::softmax(&z, 2)?;
    let hard = one_hot_argmax(&z);
    Ok(g.record(
        "route_straight_through",
        &[logits],
        hard,
        Box::new(move |c| {
            let gz = tensor::softmax_backward(&soft, c.grad, 2);
            vec![Some(gz.scale(1.0 / temperature))]
        }),
    ))
}

/// `P_spatial = L · pool`, so only selected pool rows receive gradient.
pub fn gather_spatial_prompt(g: &mut Graph, routing: Var, pool: &PromptPool) -> Result<Var> {
    let ls = g.shape(routing).to_vec();
    let ps = g.shape(pool.pool).to_vec();
    if ls.len() != 3 || ps.len() != 2 || ls[2] != ps[0] {
        return Err(Error::dim(
            "gather_spatial_prompt",
            format!("routing {ls:?} does not match pool {ps:?}"),
        ));
    }
    let flat = g.reshape(routing, &[ls[0] * ls[1], ls[2]])?;
    let out = g.matmul(flat, pool.pool)?;
    g.reshape(out, &[ls[0], ls[1], ps[1]])
}

/// Query/key/value projections for the global prompt; weights `[F×C]`, biases `[C]`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    pub q_weight: Var,
    pub q_bias: Var,
    pub k_weight: Var,
    pub k_bias: Var,
    pub v_weight: Var,
    pub v_bias: Var,
}

/// Fourier features of `x[B×N×C]` laid out on an `h×w` grid: `[B×N×F]`.
pub fn frequency_tokens(
    g: &mut Graph,
    x: Var,
    h: usize,
    w: usize,
    features: FreqFeatures,
) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 3 || shape[1] != h * w {
        return Err(Error::dim(
            "global_prompt",
            format!("tokens {shape:?} do not tile a {h}×{w} grid"),
        ));
    }
    let (b, n, c) = (shape[0], shape[1], shape[2]);
    let grid = g.reshape(x, &[b, h, w, c])?;
    let planes = g.permute(grid, &[0, 3, 1, 2])?;
    let planes = g.scale(planes, 1.0 / (n as f64).sqrt());
    let spec = g.fft2(planes)?;
    match features {
        FreqFeatures::Complex => {
            let t = g.permute(spec, &[0, 2, 3, 4, 1])?;
            g.reshape(t, &[b, n, 2 * c])
        }
        FreqFeatures::Magnitude => {
            let m = g.complex_abs(spec)?;
            let t = g.permute(m, &[0, 2, 3, 1])?;
            g.reshape(t, &[b, n, c])
        }
    }
}

/// Single-head attention `softmax(QKᵀ/√C)·V` over the Fourier tokens of `x`.
pub fn global_prompt(
    g: &mut Graph,
    x: Var,
    h: usize,
    w: usize,
    attn: &AttentionParams,
    features: FreqFeatures,
) -> Result<Var> {
    let f = frequency_tokens(g, x, h, w, features)?;
    let q = g.linear(f, attn.q_weight, Some(attn.q_bias))?;
    let k = g.linear(f, attn.k_weight, Some(attn.k_bias))?;
    let v = g.linear(f, attn.v_weight, Some(attn.v_bias))?;
    let d = g.shape(q)[2] as f64;
    let kt = g.transpose_last2(k)?;
    let scores = g.bmm(q, kt)?;
    let scores = g.scale(scores, 1.0 / d.sqrt());
    let weights = g.softmax(scores, 2)?;
    g.bmm(weights, v)
}

/// `P′ = P_spatial + P_global`.
pub fn fuse_prompts(g: &mut Graph, p_spatial: Var, p_global: Var) -> Result<Var> {
    if g.shape(p_spatial) != g.shape(p_global) {
        return Err(Error::dim(
            "fuse_prompts",
            format!("{:?} vs {:?}", g.shape(p_spatial), g.shape(p_global)),
        ));
    }
    g.add(p_spatial, p_global)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_grad;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn attn_params(g: &mut Graph, f: usize, c: usize, rng: &mut ChaCha8Rng) -> AttentionParams {
        AttentionParams {
            q_weight: g.input(Tensor::uniform(&[f, c], -0.5, 0.5, rng)),
            q_bias: g.input(Tensor::uniform(&[c], -0.1, 0.1, rng)),
            k_weight: g.input(Tensor::uniform(&[f, c], -0.5, 0.5, rng)),
            k_bias: g.input(Tensor::uniform(&[c], -0.1, 0.1, rng)),
            v_weight: g.input(Tensor::uniform(&[f, c], -0.5, 0.5, rng)),
            v_bias: g.input(Tensor::uniform(&[c], -0.1, 0.1, rng)),
        }
    }

    #[test]
    fn dominant_logit_wins_at_inference() {
        let mut g = Graph::new();
        let l = g.input(Tensor::new(&[1, 1, 3], vec![10.0, 0.0, 0.0]).unwrap());
        let r = route_tokens(&mut g, l, 1.0, None).unwrap();
        assert_eq!(g.value(r).data(), &[1.0, 0.0, 0.0]);
        assert!(matches!(route_tokens(&mut g, l, 0.0, None), Err(Error::Config(_))));
    }

    #[test]
    fn routing_rows_are_one_hot() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        for _ in 0..20 {
            let mut g = Graph::new();
            let logits = Tensor::uniform(&[2, 7, 5], -3.0, 3.0, &mut rng);
            let noise = gumbel_noise(&[2, 7, 5], &mut rng);
            let l = g.input(logits);
            for r in [route_tokens(&mut g, l, 0.7, Some(&noise)).unwrap(), route_tokens(&mut g, l, 1.0, None).unwrap()] {
                for row in g.value(r).data().chunks(5) {
                    assert_eq!(row.iter().sum::<f64>(), 1.0);
                    assert!(row.iter().all(|&v| v == 0.0 || v == 1.0));
                }
            }
        }
    }

    #[test]
    fn same_seed_same_routing() {
        let draw = |seed| gumbel_noise(&[3, 4], &mut ChaCha8Rng::seed_from_u64(seed));
        assert_eq!(draw(5), draw(5));
        assert_ne!(draw(5), draw(6));
    }

    #[test]
    fn straight_through_matches_soft_surrogate() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let tau = 0.8;
        for _ in 0..20 {
            let logits = Tensor::uniform(&[1, 3, 4], -2.0, 2.0, &mut rng);
            let noise = gumbel_noise(&[1, 3, 4], &mut rng);
            let w = Tensor::uniform(&[1, 3, 4], -1.0, 1.0, &mut rng);
            let mut g = Graph::new();
            let l = g.input(logits.clone());
            let r = route_tokens(&mut g, l, tau, Some(&noise)).unwrap();
            let s = g.weighted_sum(r, &w).unwrap();
            let got = g.backward(s).unwrap().wrt(l);
            let soft = |x: &Tensor| {
                let z = x.add(&noise).unwrap().scale(1.0 / tau);
                tensor::softmax(&z, 2).unwrap().mul(&w).unwrap().sum()
            };
            let want = finite_diff_grad(soft, &logits, 1e-6);
            assert!(got.max_abs_diff(&want) < 1e-5);
        }
    }

    #[test]
    fn spatial_prompt_is_a_row_lookup() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let keys: Vec<usize> = (0..10).map(|_| rng.random_range(0..4)).collect();
        let mut l = Tensor::zeros(&[2, 5, 4]);
        for (i, &k) in keys.iter().enumerate() {
            l.data_mut()[i * 4 + k] = 1.0;
        }
        let pool = Tensor::uniform(&[4, 3], -1.0, 1.0, &mut rng);
        let mut g = Graph::new();
        let lv = g.constant(l);
        let pp = PromptPool { pool: g.input(pool.clone()), temperature: 1.0 };
        let p = gather_spatial_prompt(&mut g, lv, &pp).unwrap();
        for (i, &k) in keys.iter().enumerate() {
            assert_eq!(&g.value(p).data()[i * 3..i * 3 + 3], &pool.data()[k * 3..k * 3 + 3]);
        }
        // Only selected rows receive gradient.
        let s = g.sum(p);
        let gp = g.backward(s).unwrap().wrt(pp.pool);
        for k in 0..4 {
            let used = keys.contains(&k);
            assert_eq!(gp.data()[k * 3] != 0.0, used);
        }
        let bad = g.constant(Tensor::zeros(&[1, 5, 3]));
        assert!(gather_spatial_prompt(&mut g, bad, &pp).is_err());
    }

    #[test]
    fn identity_pool_reproduces_routing() {
        let mut g = Graph::new();
        let l = Tensor::new(&[1, 3, 3], vec![0., 1., 0., 1., 0., 0., 0., 0., 1.]).unwrap();
        let lv = g.constant(l.clone());
        let pp = PromptPool {
            pool: g.input(Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 })),
            temperature: 1.0,
        };
        let p = gather_spatial_prompt(&mut g, lv, &pp).unwrap();
        assert_eq!(g.value(p), &l);
    }

    #[test]
    fn constant_tokens_concentrate_at_dc() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut g = Graph::new();
        let x = g.input(Tensor::from_fn(&[1, 6, 2], |i| if i % 2 == 0 { 0.3 } else { -1.2 }));
        let f = frequency_tokens(&mut g, x, 2, 3, FreqFeatures::Complex).unwrap();
        let fv = g.value(f);
        let r6 = 6f64.sqrt();
        assert!((fv.at(&[0, 0, 0]) - r6 * 0.3).abs() < 1e-12);
        assert!((fv.at(&[0, 0, 1]) + r6 * 1.2).abs() < 1e-12);
        assert!(fv.data()[4..].iter().all(|v| v.abs() < 1e-12));
        // Every non-DC query sees the same features, so its output row is shared.
        let attn = attn_params(&mut g, 4, 2, &mut rng);
        let p = global_prompt(&mut g, x, 2, 3, &attn, FreqFeatures::Complex).unwrap();
        let v = g.value(p);
        for t in 2..6 {
            for k in 0..2 {
                assert!((v.at(&[0, t, k]) - v.at(&[0, 1, k])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_values_give_zero_prompt() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let mut g = Graph::new();
        let x = g.input(Tensor::uniform(&[2, 4, 3], -1.0, 1.0, &mut rng));
        let mut attn = attn_params(&mut g, 6, 3, &mut rng);
        attn.v_weight = g.constant(Tensor::zeros(&[6, 3]));
        attn.v_bias = g.constant(Tensor::zeros(&[3]));
        let p = global_prompt(&mut g, x, 2, 2, &attn, FreqFeatures::Complex).unwrap();
        assert_eq!(g.value(p).max_abs(), 0.0);
        assert!(global_prompt(&mut g, x, 3, 2, &attn, FreqFeatures::Complex).is_err());
    }

    #[test]
    fn four_token_instance_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let (c, h, w) = (2, 2, 2);
        let xt = Tensor::uniform(&[1, 4, c], -1.0, 1.0, &mut rng);
        let mut g = Graph::new();
        let x = g.input(xt.clone());
        let attn = attn_params(&mut g, 2 * c, c, &mut rng);
        let p = global_prompt(&mut g, x, h, w, &attn, FreqFeatures::Complex).unwrap();

        // Naive orthonormal DFT per channel, then explicit attention.
        let mut feats = vec![vec![0.0; 2 * c]; 4];
        for (t, f) in feats.iter_mut().enumerate() {
            let (u, v) = (t / w, t % w);
            for ch in 0..c {
                let (mut re, mut im) = (0.0, 0.0);
                for s in 0..4 {
                    let (y, x) = (s / w, s % w);
                    let ang = -2.0 * std::f64::consts::PI
                        * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                    re += xt.data()[s * c + ch] * ang.cos();
                    im += xt.data()[s * c + ch] * ang.sin();
                }
                f[ch] = re / 2.0;
                f[c + ch] = im / 2.0;
            }
        }
        let proj = |wv: Var, bv: Var, f: &[f64]| -> Vec<f64> {
            let (wt, bt) = (g.value(wv), g.value(bv));
            (0..c)
                .map(|j| bt.data()[j] + (0..2 * c).map(|i| f[i] * wt.at(&[i, j])).sum::<f64>())
                .collect()
        };
        let q: Vec<_> = feats.iter().map(|f| proj(attn.q_weight, attn.q_bias, f)).collect();
        let k: Vec<_> = feats.iter().map(|f| proj(attn.k_weight, attn.k_bias, f)).collect();
        let v: Vec<_> = feats.iter().map(|f| proj(attn.v_weight, attn.v_bias, f)).collect();
        for i in 0..4 {
            let s: Vec<f64> = (0..4)
                .map(|j| (0..c).map(|d| q[i][d] * k[j][d]).sum::<f64>() / (c as f64).sqrt())
                .collect();
            let m = s.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            assert!((e.iter().map(|v| v / z).sum::<f64>() - 1.0).abs() < 1e-12);
            for d in 0..c {
                let want: f64 = (0..4).map(|j| e[j] / z * v[j][d]).sum();
                assert!((g.value(p).at(&[0, i, d]) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn global_prompt_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        for features in [FreqFeatures::Complex, FreqFeatures::Magnitude] {
            let xt = Tensor::uniform(&[1, 6, 2], -1.0, 1.0, &mut rng);
            let weights: Vec<Tensor> = (0..6)
                .map(|i| {
                    let shape: &[usize] = if i % 2 == 0 { &[features.width(2), 2] } else { &[2] };
                    Tensor::uniform(shape, -0.5, 0.5, &mut rng)
                })
                .collect();
            let wsum = Tensor::uniform(&[1, 6, 2], -1.0, 1.0, &mut rng);
            let eval = |x: &Tensor| -> (f64, Tensor) {
                let mut g = Graph::new();
                let xv = g.input(x.clone());
                let p: Vec<Var> = weights.iter().map(|w| g.constant(w.clone())).collect();
                let attn = AttentionParams {
                    q_weight: p[0],
                    q_bias: p[1],
                    k_weight: p[2],
                    k_bias: p[3],
                    v_weight: p[4],
                    v_bias: p[5],
                };
                let out = global_prompt(&mut g, xv, 2, 3, &attn, features).unwrap();
                let s = g.weighted_sum(out, &wsum).unwrap();
                (g.value(s).item(), g.backward(s).unwrap().wrt(xv))
            };
            let (_, got) = eval(&xt);
            let want = finite_diff_grad(|x| eval(x).0, &xt, 1e-6);
            assert!(got.max_abs_diff(&want) < 1e-6, "{features:?}");
        }
    }

    #[test]
    fn fusion_is_elementwise_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let a = Tensor::uniform(&[1, 4, 2], -1.0, 1.0, &mut rng);
        let b = Tensor::uniform(&[1, 4, 2], -1.0, 1.0, &mut rng);
        let mut g = Graph::new();
        let (av, bv) = (g.input(a.clone()), g.input(b.clone()));
        let f = fuse_prompts(&mut g, av, bv).unwrap();
        for i in 0..8 {
            assert_eq!(g.value(f).data()[i], a.data()[i] + b.data()[i]);
        }
        let neg = g.constant(a.scale(-1.0));
        let z = fuse_prompts(&mut g, av, neg).unwrap();
        assert_eq!(g.value(z).max_abs(), 0.0);
        let zero = g.constant(Tensor::zeros(&[1, 4, 2]));
        let same = fuse_prompts(&mut g, av, zero).unwrap();
        assert_eq!(g.value(same), &a);
        let bad = g.constant(Tensor::zeros(&[1, 4, 3]));
        assert!(fuse_prompts(&mut g, av, bad).is_err());
    }
}
