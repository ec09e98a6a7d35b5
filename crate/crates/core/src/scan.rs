//! Prompt-guided selective scan.
//!
//! A diagonal state-space recurrence with one state per channel, run over
//! tokens in semantic order:
//!
//! ```text
//! C_s(t) = C_raw(t) + P_fused(t)
//! h_t    = Ā(t) ⊙ h_{t−1} + B(t) ⊙ x(t),   h_0 = 0
//! y_t    = C_s(t) ⊙ h_t
//! ```
//!
//! Tokens are permuted into scan order before the recurrence and the output
//! is restored to raster order afterwards.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How the per-token transition `Ā(t)` is derived from `Δ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Discretization {
    /// `Ā = exp(Δ ⊙ A)`, `A = −exp(a_log)`; always in `(0, 1)`.
    #[default]
    Zoh,
    /// `Ā = −exp(Linear(Δ))`, used directly as the multiplier.
    PaperLiteral,
    /// `Ā ≡ 0`; every step forgets the previous state.
    Memoryless,
}

impl Discretization {
    pub fn as_str(self) -> &'static str {
        match self {
            Discretization::Zoh => "zoh",
            Discretization::PaperLiteral => "paper-literal",
            Discretization::Memoryless => "memoryless",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "zoh" => Some(Discretization::Zoh),
            "paper-literal" => Some(Discretization::PaperLiteral),
            "memoryless" => Some(Discretization::Memoryless),
            _ => None,
        }
    }
}

/// Learned tensors behind the transition, matching [`Discretization`].
#[derive(Clone, Copy, Debug)]
pub enum TransitionParams {
    Zoh { a_log: Var },
    PaperLiteral { weight: Var, bias: Var },
    Memoryless,
}

/// Per-token SSM parameters, all `[B×N×C]`.
#[derive(Clone, Copy, Debug)]
pub struct SsmParams {
    pub delta: Var,
    pub b_in: Var,
    pub c_raw: Var,
    pub a_decay: Var,
}

/// Split `x_in[B×N×(3C+T)]` into `(Δ, B, C_raw, router logits)` and derive `Ā`.
pub fn derive_ssm_params(
    g: &mut Graph,
    x_in: Var,
    channels: usize,
    pool_size: usize,
    transition: &TransitionParams,
) -> Result<(SsmParams, Var)> {
    let shape = g.shape(x_in).to_vec();
    let expected = 3 * channels + pool_size;
    if shape.len() != 3 || shape[2] != expected {
        return Err(Error::dim(
            "derive_ssm_params",
            format!(
                "x_in {shape:?} must have 3C+T = 3·{channels}+{pool_size} = {expected} channels"
            ),
        ));
    }
    let delta_pre = g.narrow_last(x_in, 0, channels)?;
    let b_in = g.narrow_last(x_in, channels, channels)?;
    let c_raw = g.narrow_last(x_in, 2 * channels, channels)?;
    let logits = g.narrow_last(x_in, 3 * channels, pool_size)?;
    let delta = g.softplus(delta_pre);
    let a_decay = match *transition {
        TransitionParams::Zoh { a_log } => {
            let a_pos = g.exp(a_log);
            let a = g.scale(a_pos, -1.0);
            let da = g.mul_row(delta, a)?;
            g.exp(da)
        }
        TransitionParams::PaperLiteral { weight, bias } => {
            let lin = g.linear(delta, weight, Some(bias))?;
            let e = g.exp(lin);
            g.scale(e, -1.0)
        }
        TransitionParams::Memoryless => g.constant(Tensor::zeros(&[shape[0], shape[1], channels])),
    };
    Ok((
        SsmParams {
            delta,
            b_in,
            c_raw,
            a_decay,
        },
        logits,
    ))
}

/// Token visiting order for each batch element.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SemanticOrder {
    /// `perm[b][t]` is the raster index of the token scanned at step `t`.
    pub perm: Vec<Vec<usize>>,
    pub inv_perm: Vec<Vec<usize>>,
}

impl SemanticOrder {
    pub fn identity(batch: usize, n: usize) -> Self {
        let id: Vec<usize> = (0..n).collect();
        Self {
            perm: vec![id.clone(); batch],
            inv_perm: vec![id; batch],
        }
    }

    pub fn from_perm(perm: Vec<Vec<usize>>) -> Result<Self> {
        let mut inv_perm = Vec::with_capacity(perm.len());
        for p in &perm {
            let mut inv = vec![usize::MAX; p.len()];
            for (t, &s) in p.iter().enumerate() {
                if s >= p.len() || inv[s] != usize::MAX {
                    return Err(Error::Contract(format!("{p:?} is not a permutation")));
                }
                inv[s] = t;
            }
            inv_perm.push(inv);
        }
        Ok(Self { perm, inv_perm })
    }

    pub fn is_identity(&self) -> bool {
        self.perm
            .iter()
            .all(|p| p.iter().enumerate().all(|(i, &s)| i == s))
    }
}

/// Index of the hot entry of each routing row; errors if a row is not one-hot.
pub fn routing_keys(l: &Tensor) -> Result<Vec<Vec<usize>>> {
    if l.ndim() != 3 {
        return Err(Error::dim("semantic_order", format!("expected [B×N×T], got {:?}", l.shape())));
    }
    let (b, n, t) = (l.shape()[0], l.shape()[1], l.shape()[2]);
    let mut keys = vec![Vec::with_capacity(n); b];
    for (r, row) in l.data().chunks(t).enumerate() {
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || zeros != t - 1 {
            return Err(Error::Contract(format!(
                "routing row {} of batch {} is not one-hot: {row:?}",
                r % n,
                r / n
            )));
        }
        keys[r / n].push(row.iter().position(|&v| v == 1.0).unwrap());
    }
    Ok(keys)
}

/// Stable ascending sort of tokens by their routed prompt index.
pub fn semantic_order(l: &Tensor) -> Result<SemanticOrder> {
    let keys = routing_keys(l)?;
    let perm = keys
        .iter()
        .map(|k| {
            let mut idx: Vec<usize> = (0..k.len()).collect();
            idx.sort_by_key(|&i| k[i]);
            idx
        })
        .collect();
    SemanticOrder::from_perm(perm)
}

/// Forward recurrence on flat `[B×N×C]` buffers; returns `(y, h)`.
pub fn scan_kernel(
    x: &[f64],
    a: &[f64],
    b: &[f64],
    c: &[f64],
    dims: (usize, usize, usize),
) -> (Vec<f64>, Vec<f64>) {
    let (bs, n, ch) = dims;
    let mut y = vec![0.0; bs * n * ch];
    let mut h = vec![0.0; bs * n * ch];
    for bi in 0..bs {
        let mut state = vec![0.0; ch];
        for t in 0..n {
            let base = (bi * n + t) * ch;
            for k in 0..ch {
                let i = base + k;
                state[k] = a[i] * state[k] + b[i] * x[i];
                h[i] = state[k];
                y[i] = c[i] * state[k];
            }
        }
    }
    (y, h)
}

/// Reverse recurrence. Returns gradients for `(x, a, b, c)`.
fn scan_kernel_backward(
    x: &[f64],
    a: &[f64],
    b: &[f64],
    c: &[f64],
    h: &[f64],
    gy: &[f64],
    dims: (usize, usize, usize),
) -> [Vec<f64>; 4] {
    let (bs, n, ch) = dims;
    let len = bs * n * ch;
    let (mut gx, mut ga, mut gb, mut gc) = (vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len]);
    for bi in 0..bs {
        let mut carry = vec![0.0; ch];
        for t in (0..n).rev() {
            let base = (bi * n + t) * ch;
            for k in 0..ch {
                let i = base + k;
                gc[i] = gy[i] * h[i];
                let gh = gy[i] * c[i] + carry[k];
                let h_prev = if t > 0 { h[i - ch] } else { 0.0 };
                ga[i] = gh * h_prev;
                gb[i] = gh * x[i];
                gx[i] = gh * b[i];
                carry[k] = gh * a[i];
            }
        }
    }
    [gx, ga, gb, gc]
}

/// Intermediates of one scan, in scan order.
#[derive(Clone, Debug)]
pub struct ScanTrace {
    pub c_s: Var,
    pub states: Tensor,
    pub y_scan: Var,
}

impl Graph {
    /// Recurrence over tokens already in scan order; all inputs `[B×N×C]`.
    pub fn scan_recurrence(&mut self, x: Var, a: Var, b: Var, c: Var) -> Result<(Var, Tensor)> {
        let shape = self.shape(x).to_vec();
        for v in [a, b, c] {
            if self.shape(v) != shape.as_slice() {
                return Err(Error::dim(
                    "selective_scan",
                    format!("input {:?} does not match x {:?}", self.shape(v), shape),
                ));
            }
        }
        if shape.len() != 3 {
            return Err(Error::dim("selective_scan", format!("expected [B×N×C], got {shape:?}")));
        }
        let dims = (shape[0], shape[1], shape[2]);
        let (y, h) = scan_kernel(
            self.value(x).data(),
            self.value(a).data(),
            self.value(b).data(),
            self.value(c).data(),
            dims,
        );
        let states = Tensor::new(&shape, h)?;
        let saved = states.clone();
        let out = self.record(
            "selective_scan",
            &[x, a, b, c],
            Tensor::new(&shape, y)?,
            Box::new(move |ctx| {
                let grads = scan_kernel_backward(
                    ctx.inputs[0].data(),
                    ctx.inputs[1].data(),
                    ctx.inputs[2].data(),
                    ctx.inputs[3].data(),
                    saved.data(),
                    ctx.grad.data(),
                    dims,
                );
                grads
                    .into_iter()
                    .map(|g| Some(Tensor::new(&shape, g).expect("scan grad")))
                    .collect()
            }),
        );
        Ok((out, states))
    }
}

/// Scan `x` under `order` with the fused prompt added to the output matrix;
/// returns raster-ordered output plus scan-order intermediates.
pub fn selective_scan_traced(
    g: &mut Graph,
    x: Var,
    p: &SsmParams,
    p_fused: Var,
    order: &SemanticOrder,
) -> Result<(Var, ScanTrace)> {
    let shape = g.shape(x).to_vec();
    for v in [p.a_decay, p.b_in, p.c_raw, p_fused] {
        if g.shape(v) != shape.as_slice() {
            return Err(Error::dim(
                "selective_scan",
                format!("input {:?} does not match x {:?}", g.shape(v), shape),
            ));
        }
    }
    let xs = g.permute_tokens(x, &order.perm)?;
    let a = g.permute_tokens(p.a_decay, &order.perm)?;
    let b = g.permute_tokens(p.b_in, &order.perm)?;
    let c_raw = g.permute_tokens(p.c_raw, &order.perm)?;
    let prompt = g.permute_tokens(p_fused, &order.perm)?;
    let c_s = g.add(c_raw, prompt)?;
    let (y_scan, states) = g.scan_recurrence(xs, a, b, c_s)?;
    let y = g.permute_tokens(y_scan, &order.inv_perm)?;
    Ok((
        y,
        ScanTrace {
            c_s,
            states,
            y_scan,
        },
    ))
}

pub fn selective_scan(
    g: &mut Graph,
    x: Var,
    p: &SsmParams,
    p_fused: Var,
    order: &SemanticOrder,
) -> Result<Var> {
    Ok(selective_scan_traced(g, x, p, p_fused, order)?.0)
}

/// `‖∂y[probe]/∂x[s]‖_F` for every source token `s`, where `model_fn` maps
/// `x[1×N×C]` to `y[1×N×C']` on a fresh graph.
pub fn causal_reach(
    model_fn: impl Fn(&mut Graph, Var) -> Result<Var>,
    x: &Tensor,
    probe: usize,
) -> Result<Tensor> {
    if x.ndim() != 3 || x.shape()[0] != 1 {
        return Err(Error::dim("causal_reach", format!("expected [1×N×C], got {:?}", x.shape())));
    }
    let (n, c_in) = (x.shape()[1], x.shape()[2]);
    if probe >= n {
        return Err(Error::Contract(format!("probe {probe} outside sequence of {n}")));
    }
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let y = model_fn(&mut g, xv)?;
    let c_out = g.value(y).last_dim();
    let mut reach = vec![0.0; n];
    for k in 0..c_out {
        let pick = g.element(y, probe * c_out + k);
        let grad = g.backward(pick)?.wrt(xv);
        for (s, r) in reach.iter_mut().enumerate() {
            *r += grad.data()[s * c_in..(s + 1) * c_in].iter().map(|v| v * v).sum::<f64>();
        }
    }
    Tensor::new(&[n], reach.into_iter().map(f64::sqrt).collect())
}
