//! Command-line driver: `train`, `eval`, `gradcheck`, `erf` and `spectrum`.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::checkpoint;
use crate::config::{load_config, RunConfig};
use crate::error::{Error, Result};
use crate::fft;
use crate::gradcheck;
use crate::image;
use crate::train::{self, EvalRow};

#[derive(Parser, Debug)]
#[command(name = "promptssm", version, about = "Prompt-guided state-space super-resolution for grayscale images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train from a config file; writes the config echo, a TSV log and checkpoints.
    Train {
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Directory of HR `.pgm` images (overrides `paths.data`).
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        /// Output directory (overrides `paths.out`).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Score SR output against HR images and print a TSV report.
    Eval {
        /// Checkpoint to run on bicubic-degraded copies of the HR images.
        #[arg(long, value_name = "FILE", required_unless_present = "sr", conflicts_with = "sr")]
        ckpt: Option<PathBuf>,
        /// Directory of precomputed SR images, matched to HR by file name.
        #[arg(long, value_name = "DIR")]
        sr: Option<PathBuf>,
        /// Directory of HR `.pgm` images.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(["2", "4"]))]
        scale: Option<String>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Write the report here instead of standard output.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Compare every analytic gradient with central finite differences.
    Gradcheck {
        /// Restrict to one suite: core, fft, prompt, scan, ssm, model or loss.
        #[arg(long, value_name = "NAME")]
        module: Option<String>,
    },
    /// Effective receptive field of the central output pixel, as an image.
    Erf {
        #[arg(long, value_name = "FILE")]
        ckpt: PathBuf,
        /// LR input image.
        #[arg(long, value_name = "FILE")]
        image: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Write centred log-magnitude and phase maps of an image's spectrum.
    Spectrum {
        #[arg(long, value_name = "FILE")]
        image: PathBuf,
        /// Outputs are `<P>_logmag.pgm` and `<P>_phase.pgm`.
        #[arg(long, value_name = "P")]
        out_prefix: PathBuf,
    },
}

/// Parse `argv` (program name first), run, and return the exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_command_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// [`run_command`] with explicit output streams.
pub fn run_command_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    2
                }
            };
        }
    };
    match dispatch(cli.command, out) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io(Path::new("<stdout>"), e))
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<bool> {
    match cmd {
        Command::Train { config, data, out: dir } => {
            let cfg = load_config(&config)?;
            train_cmd(cfg, data, dir, out)?;
        }
        Command::Eval {
            ckpt,
            sr,
            data,
            scale,
            workers,
            out: report,
        } => {
            let scale = scale.map(|s| s.parse::<usize>().expect("validated by clap"));
            let rows = match (ckpt, sr) {
                (Some(ckpt), _) => eval_checkpoint(&ckpt, &data, scale, workers)?,
                (None, Some(sr)) => eval_sr_dir(&sr, &data, scale.unwrap_or(1), workers)?,
                (None, None) => unreachable!("clap requires one of --ckpt/--sr"),
            };
            let tsv = train::format_eval_tsv(&rows);
            match report {
                Some(p) => fs::write(&p, &tsv).map_err(|e| Error::io(&p, e))?,
                None => emit(out, &tsv)?,
            }
        }
        Command::Gradcheck { module } => {
            let results = match module {
                Some(m) => gradcheck::run_suite(&m)?,
                None => gradcheck::run_all()?,
            };
            emit(out, &gradcheck::format_table(&results))?;
            let failed = results.iter().filter(|r| !r.passed()).count();
            emit(out, &format!("{} checks, {failed} failed\n", results.len()))?;
            return Ok(failed == 0);
        }
        Command::Erf { ckpt, image: img, out: dest } => {
            let (cfg, params) = checkpoint::load(&ckpt)?;
            let (lr, _) = image::read_image(&img)?;
            let map = train::erf_map(&params, &cfg.model, &lr)?;
            image::write_image(&map.scale(255.0), &dest)?;
            emit(out, &format!("wrote {}\n", dest.display()))?;
        }
        Command::Spectrum { image: img, out_prefix } => {
            let (x, _) = image::read_image(&img)?;
            let (mag, phase) = spectrum_maps(&x)?;
            for (suffix, t) in [("logmag", mag), ("phase", phase)] {
                let path = suffixed(&out_prefix, suffix);
                image::write_image(&t, &path)?;
                emit(out, &format!("wrote {}\n", path.display()))?;
            }
        }
    }
    Ok(true)
}

fn train_cmd(
    mut cfg: RunConfig,
    data: Option<PathBuf>,
    dir: Option<PathBuf>,
    out: &mut dyn Write,
) -> Result<()> {
    if let Some(d) = data {
        cfg.data_dir = Some(d.to_string_lossy().into_owned());
    }
    if let Some(d) = dir {
        cfg.out_dir = Some(d.to_string_lossy().into_owned());
    }
    cfg.validate()?;
    let data_dir = PathBuf::from(
        cfg.data_dir
            .clone()
            .ok_or_else(|| Error::Config("no data directory: pass --data or set paths.data".into()))?,
    );
    let out_dir = PathBuf::from(
        cfg.out_dir
            .clone()
            .ok_or_else(|| Error::Config("no output directory: pass --out or set paths.out".into()))?,
    );
    let pairs = train::load_dataset(&data_dir, cfg.model.scale)?;
    let outcome = train::train_loop(&pairs, &cfg, Some(&out_dir))?;
    if let Some(last) = outcome.log.last() {
        emit(out, &format!("{}\n{}\n", train::LOG_HEADER, last.to_tsv()))?;
    }
    emit(out, &format!("checkpoint {}\n", out_dir.join(train::CHECKPOINT_FILE).display()))
}

fn eval_checkpoint(ckpt: &Path, data: &Path, scale: Option<usize>, workers: usize) -> Result<Vec<EvalRow>> {
    let (cfg, params) = checkpoint::load(ckpt)?;
    if let Some(s) = scale {
        if s != cfg.model.scale {
            return Err(Error::Config(format!(
                "--scale {s} does not match checkpoint scale {}",
                cfg.model.scale
            )));
        }
    }
    let pairs = train::load_dataset(data, cfg.model.scale)?;
    train::evaluate_model(&params, &cfg.model, &pairs, workers)
}

fn eval_sr_dir(sr_dir: &Path, data: &Path, scale: usize, workers: usize) -> Result<Vec<EvalRow>> {
    let files = train::list_images(data)?;
    if files.is_empty() {
        return Err(Error::Contract(format!("no .pgm images in {}", data.display())));
    }
    train::parallel_map(&files, workers, |hr_path| {
        let name = hr_path.file_name().unwrap_or_default();
        let (hr, _) = image::read_image(hr_path)?;
        let hr = crate::resample::modcrop(&hr, scale)?;
        let (sr, _) = image::read_image(&sr_dir.join(name))?;
        if sr.shape() != hr.shape() {
            return Err(Error::dim(
                "eval",
                format!("{}: SR {:?} vs HR {:?}", name.to_string_lossy(), sr.shape(), hr.shape()),
            ));
        }
        train::eval_pair(&name.to_string_lossy(), &sr, &hr)
    })
}

fn suffixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(format!("_{suffix}.pgm"));
    PathBuf::from(s)
}

/// Centred `log(1 + |S|)` scaled so its peak is 255, and phase mapped from
/// `[−π, π]` onto `[0, 255]`.
pub fn spectrum_maps(img: &crate::Tensor) -> Result<(crate::Tensor, crate::Tensor)> {
    let spec = fft::fft2d(img)?;
    let mag = fft::fftshift(&spec.magnitude().map(f64::ln_1p))?;
    let peak = mag.max_abs();
    let mag = if peak > 0.0 { mag.scale(255.0 / peak) } else { mag };
    let pi = std::f64::consts::PI;
    let phase = fft::fftshift(&spec.phase())?.map(|p| (p + pi) / (2.0 * pi) * 255.0);
    Ok((mag, phase))
}
