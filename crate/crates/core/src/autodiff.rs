//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every primitive applied during one forward pass.
//! Each node stores its value, the ids of its inputs, and a closure computing
//! the vector-Jacobian product. [`Graph::backward`] walks the tape once in
//! reverse, accumulating gradients across fan-out.
//!
//! Domain modules (FFT, selective scan, prompt routing) add their own
//! primitives through [`Graph::record`].

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Arithmetic precision of recorded values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F64,
    /// Every forward value is rounded to the nearest `f32`.
    F32,
}

/// Inputs to a node's vector-Jacobian product.
pub struct BackwardCtx<'a> {
    pub grad: &'a Tensor,
    pub inputs: Vec<&'a Tensor>,
    pub output: &'a Tensor,
}

pub type BackwardFn = Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Tensor>> + Send + Sync>;

struct Node {
    op: &'static str,
    value: Tensor,
    inputs: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, usize>,
    precision: Precision,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_precision(precision: Precision) -> Self {
        Self {
            precision,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool, op: &'static str) -> Var {
        let value = self.round(value);
        self.nodes.push(Node {
            op,
            value,
            inputs: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn round(&self, value: Tensor) -> Tensor {
        match self.precision {
            Precision::F64 => value,
            Precision::F32 => value.map(|v| v as f32 as f64),
        }
    }

    /// Untracked leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false, "constant")
    }

    /// Tracked leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true, "input")
    }

    /// Named tracked leaf; repeated calls with the same name share one node.
    pub fn param(&mut self, name: &str, value: &Tensor) -> Var {
        if let Some(&id) = self.params.get(name) {
            return Var(id);
        }
        let v = self.push_leaf(value.clone(), true, "param");
        self.params.insert(name.to_string(), v.0);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Record a primitive. `backward` returns one optional gradient per input.
    pub fn record(
        &mut self,
        op: &'static str,
        inputs: &[Var],
        value: Tensor,
        backward: BackwardFn,
    ) -> Var {
        let value = self.round(value);
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            inputs: inputs.iter().map(|v| v.0).collect(),
            backward: requires_grad.then_some(backward),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, seed: Var) -> Result<Gradients> {
        let seed_val = &self.nodes[seed.0].value;
        if seed_val.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar seed, node {} ({}) has shape {:?}",
                seed.0,
                self.nodes[seed.0].op,
                seed_val.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; seed.0 + 1];
        grads[seed.0] = Some(Tensor::ones(seed_val.shape()));
        for id in (0..=seed.0).rev() {
            let node = &self.nodes[id];
            let Some(back) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let ctx = BackwardCtx {
                grad: &g,
                inputs: node.inputs.iter().map(|&i| &self.nodes[i].value).collect(),
                output: &node.value,
            };
            let parent_grads = back(&ctx);
            debug_assert_eq!(parent_grads.len(), node.inputs.len(), "op {}", node.op);
            for (&pid, pg) in node.inputs.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !self.nodes[pid].requires_grad {
                    continue;
                }
                debug_assert_eq!(
                    pg.shape(),
                    self.nodes[pid].value.shape(),
                    "gradient shape from op {}",
                    node.op
                );
                match &mut grads[pid] {
                    Some(acc) => acc.add_assign(&pg),
                    slot => *slot = Some(pg),
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes[..=seed.0]
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
            params: self
                .params
                .iter()
                .filter(|(_, &id)| id <= seed.0)
                .map(|(k, &id)| (k.clone(), id))
                .collect(),
        })
    }
}

/// Result of a reverse sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
    params: BTreeMap<String, usize>,
}

impl Gradients {
    /// Gradient of the seed with respect to `v`; zeros when `v` does not
    /// influence the seed.
    pub fn wrt(&self, v: Var) -> Tensor {
        match self.grads.get(v.0) {
            Some(Some(g)) => g.clone(),
            Some(None) => Tensor::zeros(&self.shapes[v.0]),
            None => panic!("node {} was recorded after the seed", v.0),
        }
    }

    /// Gradients of every named parameter, keyed by name.
    pub fn params(&self) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .map(|(k, &id)| (k.clone(), self.wrt(Var(id))))
            .collect()
    }
}

/// Central finite differences `(f(x+h·e) − f(x−h·e)) / 2h` per element.
pub fn finite_diff_grad(mut f: impl FnMut(&Tensor) -> f64, x: &Tensor, h: f64) -> Tensor {
    assert!(h > 0.0, "finite difference step must be positive");
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = f(&probe);
        probe.data_mut()[i] = orig - h;
        let fm = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (fp - fm) / (2.0 * h);
    }
    out
}

fn bcast_err(op: &'static str, x: &Tensor, v: &Tensor) -> Error {
    Error::dim(
        op,
        format!("cannot broadcast {:?} against {:?}", v.shape(), x.shape()),
    )
}

// Sum of `g` over every axis except the last.
fn reduce_rows(g: &Tensor, c: usize) -> Tensor {
    let mut out = vec![0.0; c];
    for row in g.data().chunks(c) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Tensor::new(&[c], out).expect("row reduction shape")
}

fn unary(
    g: &mut Graph,
    op: &'static str,
    x: Var,
    f: impl Fn(f64) -> f64,
    df: fn(f64, f64) -> f64,
) -> Var {
    let value = g.value(x).map(f);
    g.record(
        op,
        &[x],
        value,
        Box::new(move |c| {
            let gx = c
                .inputs[0]
                .zip_with(c.output, df)
                .and_then(|d| d.mul(c.grad))
                .expect("unary shapes");
            vec![Some(gx)]
        }),
    )
}

pub(crate) fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else if v < -30.0 {
        v.exp()
    } else {
        v.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.record(
            "add",
            &[a, b],
            value,
            Box::new(|c| vec![Some(c.grad.clone()), Some(c.grad.clone())]),
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.record(
            "sub",
            &[a, b],
            value,
            Box::new(|c| vec![Some(c.grad.clone()), Some(c.grad.scale(-1.0))]),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).mul(self.value(b))?;
        Ok(self.record(
            "mul",
            &[a, b],
            value,
            Box::new(|c| {
                vec![
                    Some(c.grad.mul(c.inputs[1]).expect("mul")),
                    Some(c.grad.mul(c.inputs[0]).expect("mul")),
                ]
            }),
        ))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let value = self.value(x).scale(s);
        self.record(
            "scale",
            &[x],
            value,
            Box::new(move |c| vec![Some(c.grad.scale(s))]),
        )
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        let value = self.value(x).map(|v| v + s);
        self.record(
            "add_scalar",
            &[x],
            value,
            Box::new(|c| vec![Some(c.grad.clone())]),
        )
    }

    pub fn exp(&mut self, x: Var) -> Var {
        unary(self, "exp", x, f64::exp, |_, y| y)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        unary(self, "softplus", x, softplus, |x, _| sigmoid(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        unary(self, "sigmoid", x, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        unary(self, "relu", x, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// `|x|` with derivative `sign(x)` and `sign(0) = 0`.
    pub fn abs(&mut self, x: Var) -> Var {
        unary(self, "abs", x, f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let shape = self.shape(x).to_vec();
        self.record(
            "sum",
            &[x],
            value,
            Box::new(move |c| vec![Some(Tensor::full(&shape, c.grad.item()))]),
        )
    }

    /// Scalar view of one element (flat row-major index).
    pub fn element(&mut self, x: Var, index: usize) -> Var {
        let value = Tensor::scalar(self.value(x).data()[index]);
        let shape = self.shape(x).to_vec();
        self.record(
            "element",
            &[x],
            value,
            Box::new(move |c| {
                let mut gx = Tensor::zeros(&shape);
                gx.data_mut()[index] = c.grad.item();
                vec![Some(gx)]
            }),
        )
    }

    /// `Σ x ⊙ w` for a fixed weight tensor.
    pub fn weighted_sum(&mut self, x: Var, w: &Tensor) -> Result<Var> {
        let wv = self.constant(w.clone());
        let p = self.mul(x, wv)?;
        Ok(self.sum(p))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        let orig = self.shape(x).to_vec();
        Ok(self.record(
            "reshape",
            &[x],
            value,
            Box::new(move |c| vec![Some(c.grad.reshape(&orig).expect("reshape"))]),
        ))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let value = self.value(x).permute(axes)?;
        let mut inverse = vec![0; axes.len()];
        for (k, &a) in axes.iter().enumerate() {
            inverse[a] = k;
        }
        Ok(self.record(
            "permute",
            &[x],
            value,
            Box::new(move |c| vec![Some(c.grad.permute(&inverse).expect("permute"))]),
        ))
    }

    /// Slice along the last axis.
    pub fn narrow_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let value = self.value(x).narrow_last(start, len)?;
        let full = self.value(x).last_dim();
        let in_shape = self.shape(x).to_vec();
        Ok(self.record(
            "narrow_last",
            &[x],
            value,
            Box::new(move |c| {
                let mut gx = Tensor::zeros(&in_shape);
                let rows = c.grad.numel() / len;
                let gd = c.grad.data();
                let out = gx.data_mut();
                for r in 0..rows {
                    out[r * full + start..r * full + start + len]
                        .copy_from_slice(&gd[r * len..(r + 1) * len]);
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Concatenate along the last axis.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::dim(
                "concat_last",
                format!("leading extents of {sa:?} and {sb:?} differ"),
            ));
        }
        let (ca, cb) = (ta.last_dim(), tb.last_dim());
        let rows = ta.numel() / ca;
        let mut data = Vec::with_capacity(ta.numel() + tb.numel());
        for r in 0..rows {
            data.extend_from_slice(&ta.data()[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&tb.data()[r * cb..(r + 1) * cb]);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        let value = Tensor::new(&shape, data)?;
        Ok(self.record(
            "concat_last",
            &[a, b],
            value,
            Box::new(move |c| {
                vec![
                    Some(c.grad.narrow_last(0, ca).expect("concat")),
                    Some(c.grad.narrow_last(ca, cb).expect("concat")),
                ]
            }),
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.record(
            "matmul",
            &[a, b],
            value,
            Box::new(|c| {
                let at = tensor::transpose2d(c.inputs[0]).expect("matmul");
                let bt = tensor::transpose2d(c.inputs[1]).expect("matmul");
                vec![
                    Some(tensor::matmul(c.grad, &bt).expect("matmul")),
                    Some(tensor::matmul(&at, c.grad).expect("matmul")),
                ]
            }),
        ))
    }

    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = tensor::bmm(self.value(a), self.value(b))?;
        Ok(self.record(
            "bmm",
            &[a, b],
            value,
            Box::new(|c| {
                let at = tensor::transpose_last2(c.inputs[0]).expect("bmm");
                let bt = tensor::transpose_last2(c.inputs[1]).expect("bmm");
                vec![
                    Some(tensor::bmm(c.grad, &bt).expect("bmm")),
                    Some(tensor::bmm(&at, c.grad).expect("bmm")),
                ]
            }),
        ))
    }

    pub fn transpose_last2(&mut self, x: Var) -> Result<Var> {
        self.permute(x, &[0, 2, 1])
    }

    /// `x + v` with `v` broadcast along the last axis.
    pub fn add_row(&mut self, x: Var, v: Var) -> Result<Var> {
        let (tx, tv) = (self.value(x), self.value(v));
        let c = tx.last_dim();
        if tv.numel() != c {
            return Err(bcast_err("add_row", tx, tv));
        }
        let mut out = tx.clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, b) in row.iter_mut().zip(tv.data()) {
                *o += b;
            }
        }
        let vshape = tv.shape().to_vec();
        Ok(self.record(
            "add_row",
            &[x, v],
            out,
            Box::new(move |ctx| {
                let gv = reduce_rows(ctx.grad, c).reshape(&vshape).expect("add_row");
                vec![Some(ctx.grad.clone()), Some(gv)]
            }),
        ))
    }

    /// `x ⊙ v` with `v` broadcast along the last axis.
    pub fn mul_row(&mut self, x: Var, v: Var) -> Result<Var> {
        let (tx, tv) = (self.value(x), self.value(v));
        let c = tx.last_dim();
        if tv.numel() != c {
            return Err(bcast_err("mul_row", tx, tv));
        }
        let mut out = tx.clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, b) in row.iter_mut().zip(tv.data()) {
                *o *= b;
            }
        }
        let vshape = tv.shape().to_vec();
        Ok(self.record(
            "mul_row",
            &[x, v],
            out,
            Box::new(move |ctx| {
                let mut gx = ctx.grad.clone();
                for row in gx.data_mut().chunks_mut(c) {
                    for (o, b) in row.iter_mut().zip(ctx.inputs[1].data()) {
                        *o *= b;
                    }
                }
                let gv = reduce_rows(&ctx.grad.mul(ctx.inputs[0]).expect("mul_row"), c)
                    .reshape(&vshape)
                    .expect("mul_row");
                vec![Some(gx), Some(gv)]
            }),
        ))
    }

    /// `x·w + b` over the last axis; `w` is `[in×out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let k = *shape.last().unwrap_or(&1);
        let wshape = self.shape(w).to_vec();
        if wshape.len() != 2 || wshape[0] != k {
            return Err(Error::dim(
                "linear",
                format!("input {shape:?} incompatible with weight {wshape:?}"),
            ));
        }
        let rows = self.value(x).numel() / k;
        let x2 = self.reshape(x, &[rows, k])?;
        let mut y = self.matmul(x2, w)?;
        if let Some(b) = b {
            y = self.add_row(y, b)?;
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = wshape[1];
        self.reshape(y, &out_shape)
    }

    /// Per-channel bias on a `[B×C×H×W]` map.
    pub fn add_channel(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        if tx.ndim() != 4 || tb.numel() != tx.shape()[1] {
            return Err(bcast_err("add_channel", tx, tb));
        }
        let (c, hw) = (tx.shape()[1], tx.shape()[2] * tx.shape()[3]);
        let mut out = tx.clone();
        for (i, plane) in out.data_mut().chunks_mut(hw).enumerate() {
            let bv = tb.data()[i % c];
            plane.iter_mut().for_each(|v| *v += bv);
        }
        let bshape = tb.shape().to_vec();
        Ok(self.record(
            "add_channel",
            &[x, b],
            out,
            Box::new(move |ctx| {
                let mut gb = vec![0.0; c];
                for (i, plane) in ctx.grad.data().chunks(hw).enumerate() {
                    gb[i % c] += plane.iter().sum::<f64>();
                }
                vec![
                    Some(ctx.grad.clone()),
                    Some(Tensor::new(&bshape, gb).expect("add_channel")),
                ]
            }),
        ))
    }

    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let value = tensor::conv2d(self.value(x), self.value(k), stride, pad)?;
        Ok(self.record(
            "conv2d",
            &[x, k],
            value,
            Box::new(move |c| {
                let (gx, gk) =
                    tensor::conv2d_backward(c.inputs[0], c.inputs[1], c.grad, stride, pad)
                        .expect("conv2d backward");
                vec![Some(gx), Some(gk)]
            }),
        ))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (y, xhat, inv_std) =
            tensor::layer_norm(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.record(
            "layer_norm",
            &[x, gamma, beta],
            y,
            Box::new(move |c| {
                let (gx, gg, gb) = tensor::layer_norm_backward(&xhat, &inv_std, c.inputs[1], c.grad);
                vec![Some(gx), Some(gg), Some(gb)]
            }),
        ))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let value = tensor::softmax(self.value(x), axis)?;
        Ok(self.record(
            "softmax",
            &[x],
            value,
            Box::new(move |c| vec![Some(tensor::softmax_backward(c.output, c.grad, axis))]),
        ))
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let value = tensor::pixel_shuffle(self.value(x), r)?;
        Ok(self.record(
            "pixel_shuffle",
            &[x],
            value,
            Box::new(move |c| {
                vec![Some(tensor::pixel_unshuffle(c.grad, r).expect("pixel_shuffle"))]
            }),
        ))
    }

    /// Reorder tokens: `out[b, t, :] = x[b, perms[b][t], :]` for `x[B×N×C]`.
    pub fn permute_tokens(&mut self, x: Var, perms: &[Vec<usize>]) -> Result<Var> {
        let tx = self.value(x);
        if tx.ndim() != 3
            || perms.len() != tx.shape()[0]
            || perms.iter().any(|p| p.len() != tx.shape()[1])
        {
            return Err(Error::dim(
                "permute_tokens",
                format!("{} permutations do not fit {:?}", perms.len(), tx.shape()),
            ));
        }
        let (n, c) = (tx.shape()[1], tx.shape()[2]);
        let gather = move |src: &[f64], dst: &mut [f64], perms: &[Vec<usize>], forward: bool| {
            for (b, p) in perms.iter().enumerate() {
                let base = b * n * c;
                for (t, &s) in p.iter().enumerate() {
                    let (to, from) = if forward { (t, s) } else { (s, t) };
                    dst[base + to * c..base + (to + 1) * c]
                        .copy_from_slice(&src[base + from * c..base + (from + 1) * c]);
                }
            }
        };
        let mut out = Tensor::zeros(tx.shape());
        gather(tx.data(), out.data_mut(), perms, true);
        let perms = perms.to_vec();
        Ok(self.record(
            "permute_tokens",
            &[x],
            out,
            Box::new(move |ctx| {
                let mut gx = Tensor::zeros(ctx.grad.shape());
                gather(ctx.grad.data(), gx.data_mut(), &perms, false);
                vec![Some(gx)]
            }),
        ))
    }

    /// Separable linear resampling of the trailing two axes:
    /// `out = wy · x · wxᵀ` with `wy[Ho×H]`, `wx[Wo×W]`.
    pub fn resize2d(&mut self, x: Var, wy: &Tensor, wx: &Tensor) -> Result<Var> {
        let value = crate::resample::apply_separable(self.value(x), wy, wx)?;
        let wyt = tensor::transpose2d(wy)?;
        let wxt = tensor::transpose2d(wx)?;
        Ok(self.record(
            "resize2d",
            &[x],
            value,
            Box::new(move |c| {
                vec![Some(
                    crate::resample::apply_separable(c.grad, &wyt, &wxt).expect("resize2d"),
                )]
            }),
        ))
    }
}
