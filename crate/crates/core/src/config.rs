//! Run configuration as flat `key = value` text.
//!
//! Keys are dotted (`model.channels`); a `[model]` header prefixes the keys
//! that follow it. Lines starting with `#` are comments. Unknown keys,
//! duplicates and bad values are rejected with their line number. The
//! optional `preset = desk | paper` key is applied before every other key,
//! wherever it appears.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::autodiff::Precision;
use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::network::{ModelConfig, RouterKind};
use crate::prompt::FreqFeatures;
use crate::scan::Discretization;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub train: TrainConfig,
    pub data_dir: Option<String>,
    pub out_dir: Option<String>,
}

impl RunConfig {
    pub fn paper() -> Self {
        Self {
            model: ModelConfig::paper(),
            loss: LossWeights::paper(),
            train: TrainConfig::paper(),
            ..Self::default()
        }
    }

    pub fn seed(&self) -> u64 {
        self.model.seed
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.train.validate(self.model.scale)
    }

    /// Sorted `key = value` lines; floats use the shortest exact form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    fn entries(&self) -> BTreeMap<&'static str, String> {
        let m = &self.model;
        let t = &self.train;
        let mut e = BTreeMap::from([
            ("model.channels", m.channels.to_string()),
            ("model.blocks", m.blocks.to_string()),
            ("model.modules_per_block", m.modules_per_block.to_string()),
            ("model.prompt_pool", m.prompt_pool.to_string()),
            ("model.scale", m.scale.to_string()),
            ("model.discretization", m.discretization.as_str().to_string()),
            ("model.router", m.router.as_str().to_string()),
            ("model.freq_features", m.freq_features.as_str().to_string()),
            ("model.global_prompt", m.global_prompt.to_string()),
            ("model.spatial_prompt", m.spatial_prompt.to_string()),
            ("model.semantic_order", m.semantic_order.to_string()),
            ("model.gumbel_tau", format!("{:?}", m.gumbel_tau)),
            ("model.precision", precision_str(m.precision).to_string()),
            ("loss.lambda_phase", format!("{:?}", self.loss.lambda_phase)),
            ("loss.lambda_freq", format!("{:?}", self.loss.lambda_freq)),
            ("loss.lambda_pix", format!("{:?}", self.loss.lambda_pix)),
            ("train.steps", t.steps.to_string()),
            ("train.batch", t.batch.to_string()),
            ("train.patch", t.patch.to_string()),
            ("train.lr", format!("{:?}", t.lr)),
            ("train.beta1", format!("{:?}", t.beta1)),
            ("train.beta2", format!("{:?}", t.beta2)),
            ("train.eps", format!("{:?}", t.eps)),
            ("train.checkpoint_every", t.checkpoint_every.to_string()),
            ("seed", m.seed.to_string()),
        ]);
        if let Some(d) = &self.data_dir {
            e.insert("paths.data", d.clone());
        }
        if let Some(d) = &self.out_dir {
            e.insert("paths.out", d.clone());
        }
        e
    }

    /// Parse config text; `source` names the input in error messages.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            source_name: source.to_string(),
            location: format!("line {line}"),
            message: msg,
        };
        let mut section = String::new();
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err(line_no, format!("malformed section header {line:?}")))?
                    .trim();
                section = if name.is_empty() { String::new() } else { format!("{name}.") };
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(line_no, format!("expected key = value, got {line:?}")))?;
            let key = format!("{section}{}", k.trim());
            if let Some(prev) = seen.insert(key.clone(), line_no) {
                return Err(err(line_no, format!("duplicate key {key} (first set on line {prev})")));
            }
            pairs.push((line_no, key, v.trim().to_string()));
        }

        let mut cfg = RunConfig::default();
        if let Some((line, _, v)) = pairs.iter().find(|(_, k, _)| k == "preset") {
            cfg = match v.as_str() {
                "desk" => RunConfig::default(),
                "paper" => RunConfig::paper(),
                other => return Err(err(*line, format!("unknown preset {other:?}"))),
            };
        }
        for (line, key, value) in &pairs {
            if key == "preset" {
                continue;
            }
            cfg.set(key, value).map_err(|m| err(*line, m))?;
        }
        cfg.validate().map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{source}: {m}")),
            other => other,
        })?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("{key}: cannot parse {v:?}"))
        }
        fn float(key: &str, v: &str) -> std::result::Result<f64, String> {
            let x: f64 = num(key, v)?;
            if x.is_finite() {
                Ok(x)
            } else {
                Err(format!("{key}: value must be finite"))
            }
        }
        fn flag(key: &str, v: &str) -> std::result::Result<bool, String> {
            match v {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(format!("{key}: expected true or false, got {v:?}")),
            }
        }
        fn choice<T>(key: &str, v: &str, parsed: Option<T>, allowed: &str) -> std::result::Result<T, String> {
            parsed.ok_or_else(|| format!("{key}: expected one of {allowed}, got {v:?}"))
        }
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "model.channels" => m.channels = num(key, value)?,
            "model.blocks" => m.blocks = num(key, value)?,
            "model.modules_per_block" => m.modules_per_block = num(key, value)?,
            "model.prompt_pool" => m.prompt_pool = num(key, value)?,
            "model.scale" => m.scale = num(key, value)?,
            "model.discretization" => {
                m.discretization = choice(
                    key,
                    value,
                    Discretization::parse(value),
                    "zoh, paper-literal, memoryless",
                )?
            }
            "model.router" => m.router = choice(key, value, RouterKind::parse(value), "split, mlp")?,
            "model.freq_features" => {
                m.freq_features = choice(key, value, FreqFeatures::parse(value), "complex, magnitude")?
            }
            "model.global_prompt" => m.global_prompt = flag(key, value)?,
            "model.spatial_prompt" => m.spatial_prompt = flag(key, value)?,
            "model.semantic_order" => m.semantic_order = flag(key, value)?,
            "model.gumbel_tau" => m.gumbel_tau = float(key, value)?,
            "model.precision" => m.precision = choice(key, value, parse_precision(value), "f64, f32")?,
            "loss.lambda_phase" => self.loss.lambda_phase = float(key, value)?,
            "loss.lambda_freq" => self.loss.lambda_freq = float(key, value)?,
            "loss.lambda_pix" => self.loss.lambda_pix = float(key, value)?,
            "train.steps" => t.steps = num(key, value)?,
            "train.batch" => t.batch = num(key, value)?,
            "train.patch" => t.patch = num(key, value)?,
            "train.lr" => t.lr = float(key, value)?,
            "train.beta1" => t.beta1 = float(key, value)?,
            "train.beta2" => t.beta2 = float(key, value)?,
            "train.eps" => t.eps = float(key, value)?,
            "train.checkpoint_every" => t.checkpoint_every = num(key, value)?,
            "seed" => m.seed = num(key, value)?,
            "paths.data" => self.data_dir = Some(value.to_string()),
            "paths.out" => self.out_dir = Some(value.to_string()),
            _ => return Err(format!("unknown key {key}")),
        }
        Ok(())
    }
}

fn precision_str(p: Precision) -> &'static str {
    match p {
        Precision::F64 => "f64",
        Precision::F32 => "f32",
    }
}

fn parse_precision(s: &str) -> Option<Precision> {
    match s {
        "f64" => Some(Precision::F64),
        "f32" => Some(Precision::F32),
        _ => None,
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::parse(&text, &path.display().to_string())
}
