//! Analytic gradients against central finite differences.
//!
//! Every check reduces the operation's output to a scalar through a fixed
//! random projection, then compares the reverse-mode gradient of each input
//! with `finite_diff_grad` at step [`STEP`]. The reported error is
//! `max|a − n| / max(‖a‖∞, ‖n‖∞)` over all inputs of one instance.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{finite_diff_grad, Graph, Var};
use crate::error::{Error, Result};
use crate::loss::{self, ConvExtractor, LossWeights};
use crate::network::{self, ModelConfig, ModelParams, RouterKind};
use crate::prompt::{self, AttentionParams, FreqFeatures, PromptPool};
use crate::resample;
use crate::scan::{self, Discretization, SemanticOrder, SsmParams, TransitionParams};
use crate::tensor::{self, Tensor};

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-5;
pub const MODEL_TOLERANCE: f64 = 1e-4;
pub const INSTANCES: usize = 20;
pub const SUITES: [&str; 7] = ["core", "fft", "prompt", "scan", "ssm", "model", "loss"];

/// Worst instance of one operation.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub suite: &'static str,
    pub op: String,
    pub instances: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

/// `max|a − n| / max(‖a‖∞, ‖n‖∞)`; 0 when both are zero, ∞ on non-finite input.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    if analytic.len() != numeric.len() || analytic.iter().chain(numeric).any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
    let scale = analytic.iter().chain(numeric).map(|v| v.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn projection(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    Tensor::uniform(shape, -1.0, 1.0, &mut rng)
}

fn project(g: &mut Graph, y: Var, w: &Tensor) -> Result<Var> {
    if g.value(y).numel() == 1 {
        return Ok(y);
    }
    g.weighted_sum(y, w)
}

/// Check `f` with respect to every tensor in `inputs`.
pub fn check_inputs(
    inputs: &[Tensor],
    seed: u64,
    f: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let y = f(&mut g, &vars)?;
    let w = projection(g.shape(y), seed);
    let s = project(&mut g, y, &w)?;
    let grads = g.backward(s)?;
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (i, &v) in vars.iter().enumerate() {
        analytic.extend_from_slice(grads.wrt(v).data());
        let fd = finite_diff_grad(
            |probe| {
                let mut g = Graph::new();
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| g.input(if j == i { probe.clone() } else { t.clone() }))
                    .collect();
                f(&mut g, &vars)
                    .and_then(|y| project(&mut g, y, &w))
                    .map(|s| g.value(s).item())
                    .unwrap_or(f64::NAN)
            },
            &inputs[i],
            STEP,
        );
        numeric.extend_from_slice(fd.data());
    }
    Ok(relative_error(&analytic, &numeric))
}

/// Check `f` with respect to every named tensor in `params`.
pub fn check_params(
    params: &ModelParams,
    seed: u64,
    f: impl Fn(&mut Graph, &ModelParams) -> Result<Var>,
) -> Result<f64> {
    let mut g = Graph::new();
    let y = f(&mut g, params)?;
    let w = projection(g.shape(y), seed);
    let s = project(&mut g, y, &w)?;
    let grads = g.backward(s)?.params();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (name, value) in &params.tensors {
        let Some(gr) = grads.get(name) else { continue };
        analytic.extend_from_slice(gr.data());
        let mut local = params.clone();
        let fd = finite_diff_grad(
            |probe| {
                local.insert(name.clone(), probe.clone());
                let mut g = Graph::new();
                f(&mut g, &local)
                    .and_then(|y| project(&mut g, y, &w))
                    .map(|s| g.value(s).item())
                    .unwrap_or(f64::NAN)
            },
            value,
            STEP,
        );
        numeric.extend_from_slice(fd.data());
    }
    if analytic.is_empty() {
        return Err(Error::Contract("no parameter was bound by the checked function".into()));
    }
    Ok(relative_error(&analytic, &numeric))
}

fn uni(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

/// Magnitudes in `[0.2, 1]` with random sign, away from kinks at zero.
fn away(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.2..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn random_perms(rng: &mut ChaCha8Rng, b: usize, n: usize) -> Vec<Vec<usize>> {
    (0..b)
        .map(|_| {
            let mut p: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                p.swap(i, rng.random_range(0..=i));
            }
            p
        })
        .collect()
}

type Instance<'a> = Box<dyn Fn(&mut ChaCha8Rng, u64) -> Result<f64> + 'a>;

struct Case<'a> {
    op: &'static str,
    tolerance: f64,
    run: Instance<'a>,
}

fn case<'a>(op: &'static str, run: impl Fn(&mut ChaCha8Rng, u64) -> Result<f64> + 'a) -> Case<'a> {
    Case {
        op,
        tolerance: TOLERANCE,
        run: Box::new(run),
    }
}

fn unary<'a>(
    op: &'static str,
    shape: &'static [usize],
    gen: fn(&mut ChaCha8Rng, &[usize]) -> Tensor,
    f: impl Fn(&mut Graph, Var) -> Result<Var> + Copy + 'a,
) -> Case<'a> {
    case(op, move |rng, seed| {
        let x = gen(rng, shape);
        check_inputs(&[x], seed, |g, v| f(g, v[0]))
    })
}

fn binary<'a>(
    op: &'static str,
    a: &'static [usize],
    b: &'static [usize],
    f: impl Fn(&mut Graph, Var, Var) -> Result<Var> + Copy + 'a,
) -> Case<'a> {
    case(op, move |rng, seed| {
        let x = uni(rng, a);
        let y = uni(rng, b);
        check_inputs(&[x, y], seed, |g, v| f(g, v[0], v[1]))
    })
}

fn core_cases() -> Vec<Case<'static>> {
    vec![
        binary("add", &[2, 3], &[2, 3], |g, a, b| g.add(a, b)),
        binary("sub", &[2, 3], &[2, 3], |g, a, b| g.sub(a, b)),
        binary("mul", &[2, 3], &[2, 3], |g, a, b| g.mul(a, b)),
        unary("scale", &[2, 3], uni, |g, x| Ok(g.scale(x, -1.7))),
        unary("add_scalar", &[2, 3], uni, |g, x| Ok(g.add_scalar(x, 0.4))),
        unary("exp", &[2, 3], uni, |g, x| Ok(g.exp(x))),
        unary("softplus", &[2, 3], uni, |g, x| Ok(g.softplus(x))),
        unary("sigmoid", &[2, 3], uni, |g, x| Ok(g.sigmoid(x))),
        unary("relu", &[2, 3], away, |g, x| Ok(g.relu(x))),
        unary("abs", &[2, 3], away, |g, x| Ok(g.abs(x))),
        unary("sum", &[2, 3], uni, |g, x| {
            let s = g.sum(x);
            g.mul(s, s)
        }),
        unary("mean", &[2, 3], uni, |g, x| {
            let m = g.mean(x);
            Ok(g.exp(m))
        }),
        unary("element", &[2, 3], uni, |g, x| {
            let e = g.element(x, 4);
            Ok(g.exp(e))
        }),
        case("weighted_sum", |rng, seed| {
            let x = uni(rng, &[3, 4]);
            let w = uni(rng, &[3, 4]);
            check_inputs(&[x], seed, |g, v| {
                let s = g.weighted_sum(v[0], &w)?;
                Ok(g.exp(s))
            })
        }),
        unary("reshape", &[2, 3], uni, |g, x| g.reshape(x, &[3, 2])),
        unary("permute", &[2, 3, 4], uni, |g, x| g.permute(x, &[2, 0, 1])),
        unary("narrow_last", &[2, 5], uni, |g, x| g.narrow_last(x, 1, 3)),
        binary("concat_last", &[2, 3], &[2, 2], |g, a, b| g.concat_last(a, b)),
        binary("matmul", &[3, 4], &[4, 2], |g, a, b| g.matmul(a, b)),
        binary("bmm", &[2, 3, 4], &[2, 4, 2], |g, a, b| g.bmm(a, b)),
        unary("transpose_last2", &[2, 3, 4], uni, |g, x| g.transpose_last2(x)),
        binary("add_row", &[2, 3, 4], &[4], |g, a, b| g.add_row(a, b)),
        binary("mul_row", &[2, 3, 4], &[4], |g, a, b| g.mul_row(a, b)),
        case("linear", |rng, seed| {
            let ins = [uni(rng, &[2, 3, 4]), uni(rng, &[4, 5]), uni(rng, &[5])];
            check_inputs(&ins, seed, |g, v| g.linear(v[0], v[1], Some(v[2])))
        }),
        binary("add_channel", &[2, 3, 4, 4], &[3], |g, a, b| g.add_channel(a, b)),
        binary("conv2d_stride1", &[1, 2, 5, 5], &[3, 2, 3, 3], |g, a, b| g.conv2d(a, b, 1, 1)),
        binary("conv2d_stride2", &[2, 2, 6, 5], &[3, 2, 3, 3], |g, a, b| g.conv2d(a, b, 2, 1)),
        case("layer_norm", |rng, seed| {
            let ins = [uni(rng, &[2, 3, 5]), uni(rng, &[5]), uni(rng, &[5])];
            check_inputs(&ins, seed, |g, v| g.layer_norm(v[0], v[1], v[2], network::LN_EPS))
        }),
        unary("softmax_last", &[2, 3, 4], uni, |g, x| g.softmax(x, 2)),
        unary("softmax_middle", &[2, 3, 4], uni, |g, x| g.softmax(x, 1)),
        unary("pixel_shuffle", &[1, 8, 2, 3], uni, |g, x| g.pixel_shuffle(x, 2)),
        case("permute_tokens", |rng, seed| {
            let x = uni(rng, &[2, 5, 3]);
            let perms = random_perms(rng, 2, 5);
            check_inputs(&[x], seed, |g, v| g.permute_tokens(v[0], &perms))
        }),
        case("resize2d", |rng, seed| {
            let x = uni(rng, &[1, 2, 4, 5]);
            let wy = resample::bicubic_weights(4, 8);
            let wx = resample::bilinear_weights(5, 3);
            check_inputs(&[x], seed, |g, v| g.resize2d(v[0], &wy, &wx))
        }),
    ]
}

fn fft_cases() -> Vec<Case<'static>> {
    vec![
        unary("fft2_4x4", &[2, 4, 4], uni, |g, x| g.fft2(x)),
        unary("fft2_7x5", &[1, 7, 5], uni, |g, x| g.fft2(x)),
        unary("complex_abs", &[2, 4, 4], uni, |g, x| {
            let s = g.fft2(x)?;
            g.complex_abs(s)
        }),
        unary("complex_angle", &[1, 7, 5], uni, |g, x| {
            let s = g.fft2(x)?;
            g.complex_angle(s)
        }),
        case("wrap_angle", |rng, seed| {
            // Stay clear of the branch cut at odd multiples of π.
            let x = Tensor::from_fn(&[3, 4], |_| {
                let k = rng.random_range(-2i32..=2) as f64;
                k * std::f64::consts::TAU + rng.random_range(-3.0..3.0)
            });
            check_inputs(&[x], seed, |g, v| Ok(g.wrap_angle(v[0])))
        }),
    ]
}

fn attn_inputs(rng: &mut ChaCha8Rng, f: usize, c: usize) -> Vec<Tensor> {
    let mut v = Vec::new();
    for _ in 0..3 {
        v.push(uni(rng, &[f, c]));
        v.push(uni(rng, &[c]));
    }
    v
}

fn attn_from(v: &[Var]) -> AttentionParams {
    AttentionParams {
        q_weight: v[0],
        q_bias: v[1],
        k_weight: v[2],
        k_bias: v[3],
        v_weight: v[4],
        v_bias: v[5],
    }
}

fn global_case(op: &'static str, features: FreqFeatures) -> Case<'static> {
    case(op, move |rng, seed| {
        let (c, h, w) = (3, 2, 3);
        let mut ins = vec![uni(rng, &[2, h * w, c])];
        ins.extend(attn_inputs(rng, features.width(c), c));
        check_inputs(&ins, seed, |g, v| {
            prompt::global_prompt(g, v[0], h, w, &attn_from(&v[1..]), features)
        })
    })
}

/// Gradient of `Σ w·route(l)` against finite differences of `Σ w·softmax((l + noise)/τ)`.
pub fn route_surrogate_error(rng: &mut ChaCha8Rng, seed: u64) -> Result<f64> {
    let shape = [2, 6, 4];
    let logits = uni(rng, &shape);
    let noise = prompt::gumbel_noise(&shape, rng);
    let tau = rng.random_range(0.5..2.0);
    let w = projection(&shape, seed);
    let mut g = Graph::new();
    let l = g.input(logits.clone());
    let r = prompt::route_tokens(&mut g, l, tau, Some(&noise))?;
    let s = g.weighted_sum(r, &w)?;
    let analytic = g.backward(s)?.wrt(l);
    let numeric = finite_diff_grad(
        |probe| {
            probe
                .add(&noise)
                .and_then(|z| tensor::softmax(&z.scale(1.0 / tau), 2))
                .and_then(|soft| soft.mul(&w))
                .map(|t| t.sum())
                .unwrap_or(f64::NAN)
        },
        &logits,
        STEP,
    );
    Ok(relative_error(analytic.data(), numeric.data()))
}

fn prompt_cases() -> Vec<Case<'static>> {
    vec![
        case("route_tokens_soft_surrogate", route_surrogate_error),
        case("gather_spatial_prompt", |rng, seed| {
            let ins = [uni(rng, &[2, 5, 3]), uni(rng, &[3, 4])];
            check_inputs(&ins, seed, |g, v| {
                let pool = PromptPool {
                    pool: v[1],
                    temperature: 1.0,
                };
                prompt::gather_spatial_prompt(g, v[0], &pool)
            })
        }),
        case("frequency_tokens_complex", |rng, seed| {
            let x = uni(rng, &[2, 6, 3]);
            check_inputs(&[x], seed, |g, v| {
                prompt::frequency_tokens(g, v[0], 2, 3, FreqFeatures::Complex)
            })
        }),
        case("frequency_tokens_magnitude", |rng, seed| {
            let x = uni(rng, &[2, 6, 3]);
            check_inputs(&[x], seed, |g, v| {
                prompt::frequency_tokens(g, v[0], 3, 2, FreqFeatures::Magnitude)
            })
        }),
        global_case("global_prompt_complex", FreqFeatures::Complex),
        global_case("global_prompt_magnitude", FreqFeatures::Magnitude),
        binary("fuse_prompts", &[2, 4, 3], &[2, 4, 3], prompt::fuse_prompts),
    ]
}

fn ssm_inputs(rng: &mut ChaCha8Rng, shape: &[usize]) -> Vec<Tensor> {
    vec![
        uni(rng, shape),
        Tensor::uniform(shape, 0.0, 0.99, rng),
        uni(rng, shape),
        uni(rng, shape),
    ]
}

fn scan_cases() -> Vec<Case<'static>> {
    vec![
        case("scan_recurrence", |rng, seed| {
            let ins = ssm_inputs(rng, &[2, 7, 3]);
            check_inputs(&ins, seed, |g, v| Ok(g.scan_recurrence(v[0], v[1], v[2], v[3])?.0))
        }),
        case("selective_scan", |rng, seed| {
            let shape = [2, 6, 3];
            let mut ins = ssm_inputs(rng, &shape);
            ins.push(uni(rng, &shape));
            ins.push(Tensor::uniform(&shape, 0.1, 1.0, rng));
            let order = SemanticOrder::from_perm(random_perms(rng, 2, 6))?;
            check_inputs(&ins, seed, |g, v| {
                let p = SsmParams {
                    a_decay: v[1],
                    b_in: v[2],
                    c_raw: v[3],
                    delta: v[5],
                };
                scan::selective_scan(g, v[0], &p, v[4], &order)
            })
        }),
    ]
}

fn derive_case(op: &'static str, disc: Discretization) -> Case<'static> {
    case(op, move |rng, seed| {
        let (c, t) = (3, 2);
        let mut ins = vec![uni(rng, &[2, 4, 3 * c + t])];
        match disc {
            Discretization::Zoh => ins.push(uni(rng, &[c])),
            Discretization::PaperLiteral => {
                ins.push(uni(rng, &[c, c]));
                ins.push(uni(rng, &[c]));
            }
            Discretization::Memoryless => {}
        }
        check_inputs(&ins, seed, |g, v| {
            let tp = match disc {
                Discretization::Zoh => TransitionParams::Zoh { a_log: v[1] },
                Discretization::PaperLiteral => TransitionParams::PaperLiteral {
                    weight: v[1],
                    bias: v[2],
                },
                Discretization::Memoryless => TransitionParams::Memoryless,
            };
            let (p, logits) = scan::derive_ssm_params(g, v[0], c, t, &tp)?;
            let parts = [p.delta, p.b_in, p.c_raw, p.a_decay, logits];
            let mut acc = parts[0];
            for &q in &parts[1..] {
                acc = g.concat_last(acc, q)?;
            }
            Ok(acc)
        })
    })
}

fn small_model(seed: u64) -> ModelConfig {
    ModelConfig {
        channels: 4,
        blocks: 1,
        modules_per_block: 1,
        prompt_pool: 3,
        seed,
        ..ModelConfig::default()
    }
}

fn module_case(op: &'static str, adjust: fn(&mut ModelConfig), wrt_input: bool) -> Case<'static> {
    case(op, move |rng, seed| {
        let mut cfg = small_model(seed);
        adjust(&mut cfg);
        let mut params = ModelParams::init(&cfg)?;
        let prefix = network::module_prefix(0, 0);
        if cfg.router == RouterKind::Mlp {
            // Break logit ties at an all-zero hidden layer.
            let name = format!("{prefix}.router.fc2.bias");
            let t = uni(rng, &[cfg.prompt_pool]);
            params.insert(name, t);
        }
        let (h, w) = (3, 4);
        let x = uni(rng, &[2, h * w, cfg.channels]);
        if wrt_input {
            check_inputs(&[x], seed, |g, v| {
                network::asf_ssm_forward(g, v[0], h, w, &params, &prefix, &cfg, None)
            })
        } else {
            check_params(&params, seed, |g, p| {
                let xv = g.constant(x.clone());
                network::asf_ssm_forward(g, xv, h, w, p, &prefix, &cfg, None)
            })
        }
    })
}

fn ssm_cases() -> Vec<Case<'static>> {
    vec![
        derive_case("derive_ssm_params_zoh", Discretization::Zoh),
        derive_case("derive_ssm_params_paper_literal", Discretization::PaperLiteral),
        derive_case("derive_ssm_params_memoryless", Discretization::Memoryless),
        module_case("asf_ssm_forward_input", |_| {}, true),
        module_case("asf_ssm_forward_params", |_| {}, false),
        module_case(
            "asf_ssm_forward_mlp_router",
            |c| c.router = RouterKind::Mlp,
            false,
        ),
        module_case(
            "asf_ssm_forward_paper_literal",
            |c| c.discretization = Discretization::PaperLiteral,
            false,
        ),
        module_case(
            "asf_ssm_forward_magnitude_features",
            |c| c.freq_features = FreqFeatures::Magnitude,
            false,
        ),
        module_case(
            "asf_ssm_forward_no_prompts",
            |c| {
                c.global_prompt = false;
                c.spatial_prompt = false;
                c.semantic_order = false;
            },
            true,
        ),
    ]
}

fn model_cases() -> Vec<Case<'static>> {
    let model = |op, scale| Case {
        op,
        tolerance: MODEL_TOLERANCE,
        run: Box::new(move |rng: &mut ChaCha8Rng, seed| {
            let cfg = ModelConfig {
                scale,
                ..small_model(seed)
            };
            let params = ModelParams::init(&cfg)?;
            let lr = Tensor::uniform(&[1, 1, 8, 8], 0.0, 255.0, rng);
            check_params(&params, seed, |g, p| {
                let x = g.constant(lr.clone());
                let sr = network::model_forward(g, x, p, &cfg, None)?;
                Ok(g.mean(sr))
            })
        }),
    };
    vec![model("model_forward_x2", 2), model("model_forward_x4", 4)]
}

fn loss_pair(rng: &mut ChaCha8Rng, h: usize, w: usize) -> (Tensor, Tensor) {
    let hr = Tensor::uniform(&[1, 1, h, w], 0.0, 255.0, rng);
    // |sr − hr| ≥ 0.5 everywhere.
    let sr = Tensor::from_fn(&[1, 1, h, w], |i| {
        let d = rng.random_range(0.5..8.0);
        hr.data()[i] + if rng.random_bool(0.5) { d } else { -d }
    });
    (sr, hr)
}

fn loss_cases() -> Vec<Case<'static>> {
    vec![
        case("phase_loss", |rng, seed| {
            let (sr, hr) = loss_pair(rng, 6, 5);
            check_inputs(&[sr], seed, |g, v| loss::phase_loss(g, v[0], &hr))
        }),
        case("freq_loss", |rng, seed| {
            let (sr, hr) = loss_pair(rng, 6, 5);
            let mask = Tensor::uniform(hr.shape(), 0.05, 1.0, rng);
            check_inputs(&[sr, mask], seed, |g, v| loss::freq_loss(g, v[0], &hr, v[1]))
        }),
        case("pixel_loss", |rng, seed| {
            let (sr, hr) = loss_pair(rng, 6, 5);
            check_inputs(&[sr], seed, |g, v| loss::pixel_loss(g, v[0], &hr))
        }),
        case("total_loss", |rng, seed| {
            let (sr, hr) = loss_pair(rng, 8, 8);
            let mask = Tensor::uniform(hr.shape(), 0.05, 1.0, rng);
            check_inputs(&[sr, mask], seed, |g, v| {
                Ok(loss::total_loss(g, v[0], &hr, v[1], &LossWeights::default())?.total)
            })
        }),
        case("thermal_mask_gate", |rng, seed| {
            let hr = Tensor::uniform(&[2, 1, 16, 12], 0.0, 255.0, rng);
            let extractor = ConvExtractor::seeded(seed);
            let mut params = ModelParams::default();
            loss::init_gate(&mut params, 16, seed + 1);
            check_params(&params, seed, |g, p| loss::thermal_mask(g, &hr, p, &extractor))
        }),
        case("total_loss_through_gate", |rng, seed| {
            let (sr, hr) = loss_pair(rng, 16, 16);
            let extractor = ConvExtractor::seeded(seed);
            let mut params = ModelParams::default();
            loss::init_gate(&mut params, 16, seed + 1);
            check_params(&params, seed, |g, p| {
                let s = g.constant(sr.clone());
                let m = loss::thermal_mask(g, &hr, p, &extractor)?;
                Ok(loss::total_loss(g, s, &hr, m, &LossWeights::paper())?.total)
            })
        }),
    ]
}

fn cases(suite: &str) -> Result<Vec<Case<'static>>> {
    Ok(match suite {
        "core" => core_cases(),
        "fft" => fft_cases(),
        "prompt" => prompt_cases(),
        "scan" => scan_cases(),
        "ssm" => ssm_cases(),
        "model" => model_cases(),
        "loss" => loss_cases(),
        other => {
            return Err(Error::Config(format!(
                "unknown gradcheck module {other:?}; expected one of {}",
                SUITES.join(", ")
            )))
        }
    })
}

fn suite_name(suite: &str) -> &'static str {
    SUITES.iter().find(|s| **s == suite).copied().unwrap_or("?")
}

/// Run every operation of one suite on [`INSTANCES`] seeded instances.
pub fn run_suite(suite: &str) -> Result<Vec<CheckResult>> {
    let name = suite_name(suite);
    let mut out = Vec::new();
    for (k, c) in cases(suite)?.into_iter().enumerate() {
        let mut worst: f64 = 0.0;
        for i in 0..INSTANCES {
            let seed = (k as u64) << 32 | i as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let err = (c.run)(&mut rng, seed)?;
            worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
        }
        out.push(CheckResult {
            suite: name,
            op: c.op.to_string(),
            instances: INSTANCES,
            max_rel_err: worst,
            tolerance: c.tolerance,
        });
    }
    Ok(out)
}

pub fn run_all() -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for s in SUITES {
        out.extend(run_suite(s)?);
    }
    Ok(out)
}

/// Fixed-width table, one row per operation.
pub fn format_table(results: &[CheckResult]) -> String {
    let width = results.iter().map(|r| r.op.len()).max().unwrap_or(2).max(2);
    let mut s = format!(
        "{:<7} {:<width$} {:>9} {:>12} {:>9}  status\n",
        "module", "op", "instances", "max_rel_err", "tol"
    );
    for r in results {
        let _ = writeln!(
            s,
            "{:<7} {:<width$} {:>9} {:>12.3e} {:>9.0e}  {}",
            r.suite,
            r.op,
            r.instances,
            r.max_rel_err,
            r.tolerance,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_edges() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((relative_error(&[1.0, 2.0], &[1.0, 1.0]) - 0.5).abs() < 1e-15);
        assert_eq!(relative_error(&[f64::NAN], &[1.0]), f64::INFINITY);
        assert_eq!(relative_error(&[1.0], &[1.0, 2.0]), f64::INFINITY);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let x = Tensor::new(&[3], vec![0.3, -0.7, 1.1]).unwrap();
        let err = check_inputs(&[x], 1, |g, v| {
            let y = g.value(v[0]).map(|a| a * a);
            // Deliberately wrong backward: claims d(x²)/dx = x.
            Ok(g.record("bad_square", &[v[0]], y, Box::new(|c| vec![Some(c.inputs[0].mul(c.grad).unwrap())])))
        })
        .unwrap();
        assert!(err > 0.4, "{err}");
    }

    #[test]
    fn unknown_suite_is_rejected() {
        assert!(matches!(run_suite("nope"), Err(Error::Config(_))));
    }

    #[test]
    fn core_and_fft_suites_pass() {
        for s in ["core", "fft"] {
            let res = run_suite(s).unwrap();
            let bad: Vec<_> = res.iter().filter(|r| !r.passed()).collect();
            assert!(bad.is_empty(), "{}", format_table(&res));
        }
    }
}
