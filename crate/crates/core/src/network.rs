//! Network assembly: the prompt-guided SSM module, residual blocks of those
//! modules, and the full super-resolution model.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Precision, Var};
use crate::error::{Error, Result};
use crate::prompt::{self, AttentionParams, FreqFeatures, PromptPool, PromptState};
use crate::resample::{self, Factor};
use crate::scan::{self, Discretization, SemanticOrder, TransitionParams};
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-5;
pub const TAIL_INIT_SCALE: f64 = 0.01;

/// Where the router logits come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RouterKind {
    /// Last `T` channels of the in-projection.
    #[default]
    Split,
    /// Separate two-layer MLP on the module input.
    Mlp,
}

impl RouterKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RouterKind::Split => "split",
            RouterKind::Mlp => "mlp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "split" => Some(RouterKind::Split),
            "mlp" => Some(RouterKind::Mlp),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub channels: usize,
    pub blocks: usize,
    pub modules_per_block: usize,
    pub prompt_pool: usize,
    pub scale: usize,
    pub discretization: Discretization,
    pub router: RouterKind,
    pub freq_features: FreqFeatures,
    pub global_prompt: bool,
    pub spatial_prompt: bool,
    pub semantic_order: bool,
    pub gumbel_tau: f64,
    pub precision: Precision,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            blocks: 2,
            modules_per_block: 2,
            prompt_pool: 8,
            scale: 2,
            discretization: Discretization::Zoh,
            router: RouterKind::Split,
            freq_features: FreqFeatures::Complex,
            global_prompt: true,
            spatial_prompt: true,
            semantic_order: true,
            gumbel_tau: 1.0,
            precision: Precision::F64,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Eight blocks, as in the full-size reference configuration.
    pub fn paper() -> Self {
        Self {
            blocks: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale != 2 && self.scale != 4 {
            return Err(Error::Config(format!("scale must be 2 or 4, got {}", self.scale)));
        }
        if self.channels == 0 || self.blocks == 0 || self.modules_per_block == 0 {
            return Err(Error::Config(
                "channels, blocks and modules_per_block must be ≥ 1".into(),
            ));
        }
        if self.prompt_pool < 2 {
            return Err(Error::Config(format!("prompt pool needs T ≥ 2, got {}", self.prompt_pool)));
        }
        if !(self.gumbel_tau > 0.0) {
            return Err(Error::Config(format!("gumbel_tau must be > 0, got {}", self.gumbel_tau)));
        }
        Ok(())
    }

    /// Number of ×2 reconstruction stages.
    pub fn upsample_stages(&self) -> usize {
        self.scale.trailing_zeros() as usize
    }
}

/// Named learnable tensors, iterated in sorted-name order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ModelParams {
    pub tensors: BTreeMap<String, Tensor>,
}

/// Parameter-name prefix of one scan module inside a block.
pub fn module_prefix(block: usize, module: usize) -> String {
    format!("body.{block}.ssm.{module}")
}

impl ModelParams {
    /// Seeded initialization: weights `U(±1/√fan_in)` (the output conv is
    /// further scaled by [`TAIL_INIT_SCALE`]), zero biases, unit layer-norm
    /// gain, and `a_log` such that `Ā ≈ 0.9` at `Δ = softplus(0)`.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut t = BTreeMap::new();
        let c = cfg.channels;
        let tp = cfg.prompt_pool;
        let mut uniform = |shape: &[usize], fan_in: usize| {
            let b = 1.0 / (fan_in as f64).sqrt();
            Tensor::uniform(shape, -b, b, &mut rng)
        };

        t.insert("shallow.weight".into(), uniform(&[c, 1, 3, 3], 9));
        t.insert("shallow.bias".into(), Tensor::zeros(&[c]));
        let in_width = match cfg.router {
            RouterKind::Split => 3 * c + tp,
            RouterKind::Mlp => 3 * c,
        };
        let f = cfg.freq_features.width(c);
        let a_log = (-(0.9f64.ln()) / 2f64.ln()).ln();
        for b in 0..cfg.blocks {
            for m in 0..cfg.modules_per_block {
                let p = module_prefix(b, m);
                t.insert(format!("{p}.in_proj.weight"), uniform(&[c, in_width], c));
                t.insert(format!("{p}.in_proj.bias"), Tensor::zeros(&[in_width]));
                if cfg.router == RouterKind::Mlp {
                    t.insert(format!("{p}.router.fc1.weight"), uniform(&[c, c], c));
                    t.insert(format!("{p}.router.fc1.bias"), Tensor::zeros(&[c]));
                    t.insert(format!("{p}.router.fc2.weight"), uniform(&[c, tp], c));
                    t.insert(format!("{p}.router.fc2.bias"), Tensor::zeros(&[tp]));
                }
                t.insert(format!("{p}.pool"), uniform(&[tp, c], c));
                for qkv in ["q", "k", "v"] {
                    t.insert(format!("{p}.{qkv}.weight"), uniform(&[f, c], f));
                    t.insert(format!("{p}.{qkv}.bias"), Tensor::zeros(&[c]));
                }
                match cfg.discretization {
                    Discretization::Zoh => {
                        t.insert(format!("{p}.a_log"), Tensor::full(&[c], a_log));
                    }
                    Discretization::PaperLiteral => {
                        // Starts at Ā = −0.9 so the recurrence is stable at init.
                        t.insert(format!("{p}.delta_proj.weight"), Tensor::zeros(&[c, c]));
                        t.insert(format!("{p}.delta_proj.bias"), Tensor::full(&[c], 0.9f64.ln()));
                    }
                    Discretization::Memoryless => {}
                }
                t.insert(format!("{p}.norm.gamma"), Tensor::ones(&[c]));
                t.insert(format!("{p}.norm.beta"), Tensor::zeros(&[c]));
                t.insert(format!("{p}.out_proj.weight"), uniform(&[c, c], c));
                t.insert(format!("{p}.out_proj.bias"), Tensor::zeros(&[c]));
            }
        }
        for i in 0..cfg.upsample_stages() {
            t.insert(format!("upsample.{i}.weight"), uniform(&[4 * c, c, 3, 3], 9 * c));
            t.insert(format!("upsample.{i}.bias"), Tensor::zeros(&[4 * c]));
        }
        t.insert("tail.weight".into(), uniform(&[1, c, 3, 3], 9 * c).scale(TAIL_INIT_SCALE));
        t.insert("tail.bias".into(), Tensor::zeros(&[1]));
        Ok(Self { tensors: t })
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Bind a parameter into `g` as a named tracked leaf.
    pub fn bind(&self, g: &mut Graph, name: &str) -> Result<Var> {
        Ok(g.param(name, self.get(name)?))
    }
}

/// Intermediates of one module call. Scan-side values are in scan order.
#[derive(Clone, Debug)]
pub struct ModuleTrace {
    pub x_in: Var,
    pub logits: Var,
    pub prompts: PromptState,
    pub c_s: Var,
    pub states: Tensor,
    pub y_scan: Var,
    pub y_spatial: Var,
    pub output: Var,
}

/// One prompt-guided SSM module on tokens `x[B×N×C]` of an `h×w` map.
///
/// `rng` selects training mode (Gumbel noise drawn from it); `None` routes
/// deterministically.
pub fn asf_ssm_forward_traced(
    g: &mut Graph,
    x: Var,
    h: usize,
    w: usize,
    params: &ModelParams,
    prefix: &str,
    cfg: &ModelConfig,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<ModuleTrace> {
    let shape = g.shape(x).to_vec();
    let c = cfg.channels;
    if shape.len() != 3 || shape[1] != h * w || shape[2] != c {
        return Err(Error::dim(
            "asf_ssm_forward",
            format!("tokens {shape:?} do not match {h}×{w} grid with {c} channels"),
        ));
    }
    let bind = |g: &mut Graph, suffix: &str| params.bind(g, &format!("{prefix}.{suffix}"));

    let w_in = bind(g, "in_proj.weight")?;
    let b_in = bind(g, "in_proj.bias")?;
    let mut x_in = g.linear(x, w_in, Some(b_in))?;
    if cfg.router == RouterKind::Mlp {
        let (w1, b1) = (bind(g, "router.fc1.weight")?, bind(g, "router.fc1.bias")?);
        let (w2, b2) = (bind(g, "router.fc2.weight")?, bind(g, "router.fc2.bias")?);
        let hidden = g.linear(x, w1, Some(b1))?;
        let hidden = g.relu(hidden);
        let logits = g.linear(hidden, w2, Some(b2))?;
        x_in = g.concat_last(x_in, logits)?;
    }
    let transition = match cfg.discretization {
        Discretization::Zoh => TransitionParams::Zoh {
            a_log: bind(g, "a_log")?,
        },
        Discretization::PaperLiteral => TransitionParams::PaperLiteral {
            weight: bind(g, "delta_proj.weight")?,
            bias: bind(g, "delta_proj.bias")?,
        },
        Discretization::Memoryless => TransitionParams::Memoryless,
    };
    let (ssm, logits) = scan::derive_ssm_params(g, x_in, c, cfg.prompt_pool, &transition)?;

    let noise = rng.map(|r| prompt::gumbel_noise(&[shape[0], shape[1], cfg.prompt_pool], r));
    let routing = prompt::route_tokens(g, logits, cfg.gumbel_tau, noise.as_ref())?;
    let pool = PromptPool {
        pool: bind(g, "pool")?,
        temperature: cfg.gumbel_tau,
    };
    let zeros = || Tensor::zeros(&shape);
    let p_spatial = if cfg.spatial_prompt {
        prompt::gather_spatial_prompt(g, routing, &pool)?
    } else {
        g.constant(zeros())
    };
    let p_global = if cfg.global_prompt {
        let attn = AttentionParams {
            q_weight: bind(g, "q.weight")?,
            q_bias: bind(g, "q.bias")?,
            k_weight: bind(g, "k.weight")?,
            k_bias: bind(g, "k.bias")?,
            v_weight: bind(g, "v.weight")?,
            v_bias: bind(g, "v.bias")?,
        };
        prompt::global_prompt(g, x, h, w, &attn, cfg.freq_features)?
    } else {
        g.constant(zeros())
    };
    let p_fused = prompt::fuse_prompts(g, p_spatial, p_global)?;
    let order = if cfg.semantic_order {
        scan::semantic_order(g.value(routing))?
    } else {
        SemanticOrder::identity(shape[0], shape[1])
    };

    let (y_spatial, trace) = scan::selective_scan_traced(g, x, &ssm, p_fused, &order)?;
    let gamma = bind(g, "norm.gamma")?;
    let beta = bind(g, "norm.beta")?;
    let normed = g.layer_norm(y_spatial, gamma, beta, LN_EPS)?;
    let w_out = bind(g, "out_proj.weight")?;
    let b_out = bind(g, "out_proj.bias")?;
    let output = g.linear(normed, w_out, Some(b_out))?;
    Ok(ModuleTrace {
        x_in,
        logits,
        prompts: PromptState {
            routing,
            p_spatial,
            p_global,
            p_fused,
            order,
        },
        c_s: trace.c_s,
        states: trace.states,
        y_scan: trace.y_scan,
        y_spatial,
        output,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn asf_ssm_forward(
    g: &mut Graph,
    x: Var,
    h: usize,
    w: usize,
    params: &ModelParams,
    prefix: &str,
    cfg: &ModelConfig,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    Ok(asf_ssm_forward_traced(g, x, h, w, params, prefix, cfg, rng)?.output)
}

/// Residual block over a feature map `x[B×C×H×W]`: `Y = X + F(X)`.
pub fn asf_ssb_forward(
    g: &mut Graph,
    x: Var,
    params: &ModelParams,
    block: usize,
    cfg: &ModelConfig,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 4 || shape[1] != cfg.channels {
        return Err(Error::dim(
            "asf_ssb_forward",
            format!("expected [B×{}×H×W], got {shape:?}", cfg.channels),
        ));
    }
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let t = g.permute(x, &[0, 2, 3, 1])?;
    let mut tokens = g.reshape(t, &[b, h * w, c])?;
    for m in 0..cfg.modules_per_block {
        let prefix = module_prefix(block, m);
        tokens = asf_ssm_forward(g, tokens, h, w, params, &prefix, cfg, rng.as_deref_mut())?;
    }
    let grid = g.reshape(tokens, &[b, h, w, c])?;
    let f = g.permute(grid, &[0, 3, 1, 2])?;
    g.add(x, f)
}

fn conv_layer(g: &mut Graph, x: Var, params: &ModelParams, name: &str) -> Result<Var> {
    let k = params.bind(g, &format!("{name}.weight"))?;
    let b = params.bind(g, &format!("{name}.bias"))?;
    let y = g.conv2d(x, k, 1, 1)?;
    g.add_channel(y, b)
}

/// `lr[B×1×h×w]` in `[0, 255]` to `sr[B×1×sh×sw]`.
pub fn model_forward(
    g: &mut Graph,
    lr: Var,
    params: &ModelParams,
    cfg: &ModelConfig,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    cfg.validate()?;
    let shape = g.shape(lr).to_vec();
    if shape.len() != 4 || shape[1] != 1 {
        return Err(Error::dim("model_forward", format!("expected [B×1×h×w], got {shape:?}")));
    }
    if shape[2] < 8 || shape[3] < 8 {
        return Err(Error::Contract(format!(
            "input {}×{} is below the 8×8 minimum",
            shape[2], shape[3]
        )));
    }
    let x = g.scale(lr, 1.0 / 255.0);
    let shallow = conv_layer(g, x, params, "shallow")?;
    let mut f = shallow;
    for b in 0..cfg.blocks {
        f = asf_ssb_forward(g, f, params, b, cfg, rng.as_deref_mut())?;
    }
    let mut up = g.add(shallow, f)?;
    for i in 0..cfg.upsample_stages() {
        let y = conv_layer(g, up, params, &format!("upsample.{i}"))?;
        up = g.pixel_shuffle(y, 2)?;
    }
    let tail = conv_layer(g, up, params, "tail")?;
    let residual = g.scale(tail, 255.0);
    let (wy, wx) = resample::bicubic_matrices(shape[2], shape[3], Factor::Up(cfg.scale))?;
    let skip = g.resize2d(lr, &wy, &wx)?;
    g.add(residual, skip)
}

/// Run the model on a plain tensor and return the SR output.
pub fn predict(lr: &Tensor, params: &ModelParams, cfg: &ModelConfig) -> Result<Tensor> {
    let mut g = Graph::with_precision(cfg.precision);
    let x = g.constant(lr.clone());
    let y = model_forward(&mut g, x, params, cfg, None)?;
    Ok(g.value(y).clone())
}
