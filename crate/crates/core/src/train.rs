//! Training loop, evaluation over image sets, and receptive-field maps.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Graph;
use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::image;
use crate::loss::{self, ConvExtractor, FeatureExtractor};
use crate::metrics::{self, ErrorHistogram, Psnr};
use crate::network::{self, ModelConfig, ModelParams};
use crate::optim::AdamState;
use crate::resample::{self, Factor};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    /// HR patch side; the LR patch is `patch / scale`.
    pub patch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Write a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch: 4,
            patch: 32,
            lr: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn paper() -> Self {
        Self {
            batch: 32,
            lr: 1e-5,
            ..Self::default()
        }
    }

    pub fn validate(&self, scale: usize) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Config("train.batch must be ≥ 1".into()));
        }
        if !self.patch.is_multiple_of(scale) || self.patch / scale < 8 {
            return Err(Error::Config(format!(
                "train.patch {} must be a multiple of the scale {scale} with LR side ≥ 8",
                self.patch
            )));
        }
        if !(self.lr >= 0.0) {
            return Err(Error::Config(format!("train.lr must be ≥ 0, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("train.{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("train.eps must be > 0, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Aligned LR/HR grayscale images, both `[1×h×w]`-shaped planes.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub lr: Tensor,
    pub hr: Tensor,
    pub scale: usize,
    pub id: String,
}

impl ImagePair {
    /// Crop `hr` to a multiple of `scale` and synthesize LR by bicubic downscaling.
    pub fn from_hr(hr: &Tensor, scale: usize, id: impl Into<String>) -> Result<Self> {
        let factor = Factor::from_ratio(1, scale)?;
        let nd = hr.ndim();
        if nd < 2 {
            return Err(Error::dim("ImagePair", format!("expected an image, got {:?}", hr.shape())));
        }
        let (h, w) = (hr.shape()[nd - 2], hr.shape()[nd - 1]);
        let hr = resample::modcrop(&hr.reshape(&[1, h, w])?, scale)?;
        let lr = resample::bicubic_resize(&hr, factor)?;
        Ok(Self {
            lr,
            hr,
            scale,
            id: id.into(),
        })
    }

    pub fn lr_dims(&self) -> (usize, usize) {
        (self.lr.shape()[1], self.lr.shape()[2])
    }
}

/// Sorted `*.pgm` files in `dir`.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
        .collect();
    files.sort();
    Ok(files)
}

fn file_id(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Every `*.pgm` in `dir` as an HR image with its bicubic LR partner.
pub fn load_dataset(dir: &Path, scale: usize) -> Result<Vec<ImagePair>> {
    let files = list_images(dir)?;
    if files.is_empty() {
        return Err(Error::Contract(format!("no .pgm images in {}", dir.display())));
    }
    files
        .iter()
        .map(|p| {
            let (hr, _) = image::read_image(p)?;
            ImagePair::from_hr(&hr, scale, file_id(p))
        })
        .collect()
}

pub const LOG_HEADER: &str = "step\tloss_total\tloss_phase\tloss_freq\tloss_pix\twall_ms";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRecord {
    pub step: usize,
    pub total: f64,
    pub phase: f64,
    pub freq: f64,
    pub pix: f64,
    pub wall_ms: f64,
}

impl LogRecord {
    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{:?}\t{:?}\t{:?}\t{:?}\t{:.3}",
            self.step, self.total, self.phase, self.freq, self.pix, self.wall_ms
        )
    }
}

/// Training state: parameters (including the loss gate), optimizer and RNGs.
pub struct Trainer {
    pub cfg: RunConfig,
    pub params: ModelParams,
    pub adam: AdamState,
    extractor: ConvExtractor,
    sample_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    pub step: usize,
}

impl Trainer {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.seed();
        let extractor = ConvExtractor::seeded(seed.wrapping_add(1));
        let mut params = ModelParams::init(&cfg.model)?;
        loss::init_gate(&mut params, extractor.channels(), seed.wrapping_add(2));
        let mut adam = AdamState::new(cfg.train.lr);
        adam.beta1 = cfg.train.beta1;
        adam.beta2 = cfg.train.beta2;
        adam.eps = cfg.train.eps;
        let mut sample_rng = ChaCha8Rng::seed_from_u64(seed);
        sample_rng.set_stream(1);
        let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
        noise_rng.set_stream(2);
        Ok(Self {
            cfg: cfg.clone(),
            params,
            adam,
            extractor,
            sample_rng,
            noise_rng,
            step: 0,
        })
    }

    pub fn extractor(&self) -> &dyn FeatureExtractor {
        &self.extractor
    }

    /// Random aligned crops: `lr[B×1×p×p]`, `hr[B×1×P×P]`.
    pub fn sample_batch(&mut self, data: &[ImagePair]) -> Result<(Tensor, Tensor)> {
        let t = &self.cfg.train;
        let s = self.cfg.model.scale;
        let (pl, ph) = (t.patch / s, t.patch);
        let mut lr = Vec::with_capacity(t.batch * pl * pl);
        let mut hr = Vec::with_capacity(t.batch * ph * ph);
        for _ in 0..t.batch {
            let pair = &data[self.sample_rng.random_range(0..data.len())];
            if pair.scale != s {
                return Err(Error::Contract(format!(
                    "{} was prepared for ×{}, model is ×{s}",
                    pair.id, pair.scale
                )));
            }
            let (h, w) = pair.lr_dims();
            if h < pl || w < pl {
                return Err(Error::Contract(format!(
                    "{} LR size {h}×{w} is smaller than the {pl}×{pl} patch",
                    pair.id
                )));
            }
            let y = self.sample_rng.random_range(0..=h - pl);
            let x = self.sample_rng.random_range(0..=w - pl);
            for r in 0..pl {
                let base = (y + r) * w + x;
                lr.extend_from_slice(&pair.lr.data()[base..base + pl]);
            }
            let hw = w * s;
            for r in 0..ph {
                let base = (y * s + r) * hw + x * s;
                hr.extend_from_slice(&pair.hr.data()[base..base + ph]);
            }
        }
        Ok((
            Tensor::new(&[t.batch, 1, pl, pl], lr)?,
            Tensor::new(&[t.batch, 1, ph, ph], hr)?,
        ))
    }

    /// One optimization step. On a non-finite loss nothing is updated.
    pub fn step(&mut self, data: &[ImagePair]) -> Result<LogRecord> {
        let start = Instant::now();
        let (lr, hr) = self.sample_batch(data)?;
        let mut g = Graph::with_precision(self.cfg.model.precision);
        let x = g.constant(lr);
        let sr = network::model_forward(&mut g, x, &self.params, &self.cfg.model, Some(&mut self.noise_rng))?;
        let mask = loss::thermal_mask(&mut g, &hr, &self.params, &self.extractor)?;
        let terms = loss::total_loss(&mut g, sr, &hr, mask, &self.cfg.loss)?;
        let total = g.value(terms.total).item();
        if !total.is_finite() {
            return Err(Error::Numerical(format!("loss is {total} at step {}", self.step + 1)));
        }
        let grads = g.backward(terms.total)?.params();
        self.adam.step(&mut self.params.tensors, &grads)?;
        self.step += 1;
        Ok(LogRecord {
            step: self.step,
            total,
            phase: g.value(terms.phase).item(),
            freq: g.value(terms.freq).item(),
            pix: g.value(terms.pix).item(),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<LogRecord>,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const LOG_FILE: &str = "train_log.tsv";
pub const CONFIG_ECHO_FILE: &str = "config.txt";

/// Run `cfg.train.steps` steps. With `out_dir`, the config is echoed, the
/// log is written line by line and checkpoints are saved; if the loss turns
/// non-finite the last good parameters are saved before the error returns.
pub fn train_loop(data: &[ImagePair], cfg: &RunConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    let mut trainer = Trainer::new(cfg)?;
    let mut log_file = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let echo = dir.join(CONFIG_ECHO_FILE);
            fs::write(&echo, cfg.to_text()).map_err(|e| Error::io(&echo, e))?;
            let path = dir.join(LOG_FILE);
            let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            writeln!(f, "{LOG_HEADER}").map_err(|e| Error::io(&path, e))?;
            Some((f, path))
        }
        None => None,
    };
    let save = |params: &ModelParams| -> Result<()> {
        match out_dir {
            Some(dir) => checkpoint::save(&dir.join(CHECKPOINT_FILE), cfg, params),
            None => Ok(()),
        }
    };
    let mut log = Vec::with_capacity(cfg.train.steps);
    for _ in 0..cfg.train.steps {
        let rec = match trainer.step(data) {
            Ok(r) => r,
            Err(e) => {
                save(&trainer.params)?;
                return Err(e);
            }
        };
        if let Some((f, path)) = log_file.as_mut() {
            writeln!(f, "{}", rec.to_tsv()).map_err(|e| Error::io(&*path, e))?;
        }
        log.push(rec);
        let every = cfg.train.checkpoint_every;
        if every > 0 && trainer.step % every == 0 {
            save(&trainer.params)?;
        }
    }
    save(&trainer.params)?;
    Ok(TrainOutcome {
        params: trainer.params,
        log,
    })
}

/// Normalized gradient magnitude of the central SR pixel with respect to
/// every LR pixel of `lr[h×w]` (inference routing).
pub fn erf_map(params: &ModelParams, cfg: &ModelConfig, lr: &Tensor) -> Result<Tensor> {
    let nd = lr.ndim();
    if nd < 2 {
        return Err(Error::dim("erf_map", format!("expected an image, got {:?}", lr.shape())));
    }
    let (h, w) = (lr.shape()[nd - 2], lr.shape()[nd - 1]);
    let mut g = Graph::with_precision(cfg.precision);
    let x = g.input(lr.reshape(&[1, 1, h, w])?);
    let sr = network::model_forward(&mut g, x, params, cfg, None)?;
    let (sh, sw) = (h * cfg.scale, w * cfg.scale);
    let center = g.element(sr, (sh / 2) * sw + sw / 2);
    let grad = g.backward(center)?.wrt(x).map(f64::abs);
    let peak = grad.max_abs();
    let norm = if peak > 0.0 { grad.scale(1.0 / peak) } else { grad };
    norm.reshape(&[h, w])
}

/// Per-image evaluation record.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub image: String,
    pub psnr: Psnr,
    pub ssim: f64,
    pub hist: ErrorHistogram,
}

/// Metrics of an SR plane against its HR reference; SR is first quantized
/// to 8-bit as if it had been written to disk.
pub fn eval_pair(id: &str, sr: &Tensor, hr: &Tensor) -> Result<EvalRow> {
    let nd = hr.ndim();
    let plane = [hr.shape()[nd - 2], hr.shape()[nd - 1]];
    let sr = sr.reshape(&plane)?.map(|v| image::quantize(v) as f64);
    let hr = hr.reshape(&plane)?;
    Ok(EvalRow {
        image: id.to_string(),
        psnr: metrics::psnr(&sr, &hr)?,
        ssim: metrics::ssim(&sr, &hr)?,
        hist: metrics::error_histogram(&sr, &hr)?,
    })
}

/// Apply `f` to every item on up to `workers` threads; results keep input order.
pub fn parallel_map<T: Sync, R: Send>(
    items: &[T],
    workers: usize,
    f: impl Fn(&T) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    let workers = workers.max(1).min(items.len().max(1));
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let f = &f;
    let parts: Vec<Result<Vec<R>>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(f).collect::<Result<Vec<R>>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("eval worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Run the model on every pair and score it.
pub fn evaluate_model(
    params: &ModelParams,
    cfg: &ModelConfig,
    data: &[ImagePair],
    workers: usize,
) -> Result<Vec<EvalRow>> {
    parallel_map(data, workers, |pair| {
        let (h, w) = pair.lr_dims();
        let sr = network::predict(&pair.lr.reshape(&[1, 1, h, w])?, params, cfg)?;
        eval_pair(&pair.id, &sr, &pair.hr)
    })
}

pub const EVAL_HEADER: &str = "image\tpsnr_db\tmse\tssim\tf0_5\tf5_10\tf10_20\tf20_inf";

fn eval_line(name: &str, psnr: Psnr, ssim: f64, hist: &ErrorHistogram) -> String {
    let f = hist.fractions();
    format!(
        "{name}\t{psnr}\t{:.6}\t{ssim:.4}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
        psnr.mse, f[0], f[1], f[2], f[3]
    )
}

/// TSV with one row per image and a final `mean` row. The mean PSNR is the
/// average of per-image values (INF if any image is exact); histogram
/// fractions in the mean row are pooled over all pixels.
pub fn format_eval_tsv(rows: &[EvalRow]) -> String {
    let mut out = format!("{EVAL_HEADER}\n");
    for r in rows {
        out.push_str(&eval_line(&r.image, r.psnr, r.ssim, &r.hist));
        out.push('\n');
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        let mut pooled = ErrorHistogram::default();
        rows.iter().for_each(|r| pooled.merge(&r.hist));
        let mean = Psnr {
            db: rows.iter().map(|r| r.psnr.db).sum::<f64>() / n,
            mse: rows.iter().map(|r| r.psnr.mse).sum::<f64>() / n,
        };
        let ssim = rows.iter().map(|r| r.ssim).sum::<f64>() / n;
        out.push_str(&eval_line("mean", mean, ssim, &pooled));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.model.channels = 4;
        cfg.model.blocks = 1;
        cfg.model.modules_per_block = 1;
        cfg.model.prompt_pool = 2;
        cfg.train.batch = 2;
        cfg.train.patch = 16;
        cfg.train.steps = 3;
        cfg
    }

    fn dataset() -> Vec<ImagePair> {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        (0..2)
            .map(|i| {
                let hr = Tensor::uniform(&[24, 20], 0.0, 255.0, &mut rng).map(f64::round);
                ImagePair::from_hr(&hr, 2, format!("img{i}")).unwrap()
            })
            .collect()
    }

    #[test]
    fn pair_shapes() {
        let p = ImagePair::from_hr(&Tensor::full(&[17, 21], 9.0), 4, "x").unwrap();
        assert_eq!(p.hr.shape(), &[1, 16, 20]);
        assert_eq!(p.lr.shape(), &[1, 4, 5]);
        assert!(ImagePair::from_hr(&Tensor::zeros(&[8, 8]), 3, "x").is_err());
    }

    #[test]
    fn crops_are_aligned() {
        let mut cfg = tiny_cfg();
        cfg.train.batch = 3;
        let mut t = Trainer::new(&cfg).unwrap();
        // HR value encodes its coordinates so alignment can be checked.
        let hr = Tensor::from_fn(&[1, 20, 24], |i| i as f64);
        let lr = Tensor::from_fn(&[1, 10, 12], |i| {
            let (y, x) = (i / 12, i % 12);
            (2 * y * 24 + 2 * x) as f64
        });
        let pair = ImagePair { lr, hr, scale: 2, id: "c".into() };
        let (l, h) = t.sample_batch(std::slice::from_ref(&pair)).unwrap();
        assert_eq!(l.shape(), &[3, 1, 8, 8]);
        assert_eq!(h.shape(), &[3, 1, 16, 16]);
        for b in 0..3 {
            assert_eq!(l.at(&[b, 0, 0, 0]), h.at(&[b, 0, 0, 0]));
            assert_eq!(l.at(&[b, 0, 3, 5]), h.at(&[b, 0, 6, 10]));
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut cfg = tiny_cfg();
        cfg.train.lr = 0.0;
        let init = Trainer::new(&cfg).unwrap().params;
        let out = train_loop(&dataset(), &cfg, None).unwrap();
        assert_eq!(out.log.len(), 3);
        for (name, t) in &init.tensors {
            let same = t.data().iter().zip(out.params.tensors[name].data()).all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same, "{name}");
        }
    }

    #[test]
    fn replay_is_identical() {
        let cfg = tiny_cfg();
        let data = dataset();
        let dir = tempfile::tempdir().unwrap();
        let a = train_loop(&data, &cfg, Some(&dir.path().join("a"))).unwrap();
        let b = train_loop(&data, &cfg, Some(&dir.path().join("b"))).unwrap();
        let strip = |l: &[LogRecord]| l.iter().map(|r| (r.step, r.total, r.phase, r.freq, r.pix)).collect::<Vec<_>>();
        assert_eq!(strip(&a.log), strip(&b.log));
        let ca = fs::read(dir.path().join("a").join(CHECKPOINT_FILE)).unwrap();
        let cb = fs::read(dir.path().join("b").join(CHECKPOINT_FILE)).unwrap();
        assert_eq!(ca, cb);
        let log = fs::read_to_string(dir.path().join("a").join(LOG_FILE)).unwrap();
        assert!(log.starts_with(LOG_HEADER));
        assert_eq!(log.lines().count(), 4);
        let echo = fs::read_to_string(dir.path().join("a").join(CONFIG_ECHO_FILE)).unwrap();
        assert_eq!(RunConfig::parse(&echo, "echo").unwrap(), cfg);
    }

    #[test]
    fn non_finite_loss_aborts_and_keeps_last_good() {
        let cfg = tiny_cfg();
        let mut data = dataset();
        for pair in &mut data {
            pair.lr.data_mut().fill(f64::NAN);
        }
        let dir = tempfile::tempdir().unwrap();
        let err = train_loop(&data, &cfg, Some(dir.path())).err().unwrap();
        assert!(matches!(err, Error::Numerical(_)), "{err}");
        let (_, params) = checkpoint::load(&dir.path().join(CHECKPOINT_FILE)).unwrap();
        assert_eq!(params, Trainer::new(&cfg).unwrap().params);
    }

    #[test]
    fn eval_rows_and_tsv() {
        let hr = Tensor::from_fn(&[1, 12, 12], |i| (i % 200) as f64);
        let row = eval_pair("a.pgm", &hr, &hr).unwrap();
        assert!(row.psnr.db.is_infinite());
        let tsv = format_eval_tsv(&[row]);
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines[0], EVAL_HEADER);
        assert_eq!(
            lines[1],
            "a.pgm\tINF\t0.000000\t1.0000\t1.000000\t0.000000\t0.000000\t0.000000"
        );
        assert!(lines[2].starts_with("mean\tINF"));
    }

    #[test]
    fn parallel_map_keeps_order() {
        let items: Vec<usize> = (0..17).collect();
        for workers in [1, 2, 4, 32] {
            let out = parallel_map(&items, workers, |&i| Ok(i * i)).unwrap();
            assert_eq!(out, items.iter().map(|i| i * i).collect::<Vec<_>>());
        }
    }

    #[test]
    fn erf_of_zero_model_is_bicubic_footprint() {
        let cfg = tiny_cfg().model;
        let mut params = ModelParams::init(&cfg).unwrap();
        for t in params.tensors.values_mut() {
            *t = Tensor::zeros(t.shape());
        }
        let lr = Tensor::from_fn(&[10, 10], |i| (i * 7 % 255) as f64);
        let erf = erf_map(&params, &cfg, &lr).unwrap();
        let (wy, wx) = resample::bicubic_matrices(10, 10, Factor::Up(2)).unwrap();
        let (cy, cx) = (10, 10);
        let footprint = Tensor::from_fn(&[10, 10], |i| (wy.at(&[cy, i / 10]) * wx.at(&[cx, i % 10])).abs());
        let peak = footprint.max_abs();
        assert!(erf.max_abs_diff(&footprint.scale(1.0 / peak)) < 1e-15);
    }
}
