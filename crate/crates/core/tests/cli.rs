use std::fs;
use std::path::Path;

use promptssm::cli::run_command_with;
use promptssm::image;
use promptssm::Tensor;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("promptssm").chain(args.iter().copied());
    let code = run_command_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn scene(h: usize, w: usize, phase: f64) -> Tensor {
    Tensor::from_fn(&[h, w], |i| {
        let (y, x) = ((i / w) as f64, (i % w) as f64);
        (128.0 + 60.0 * (0.5 * x + phase).sin() + 40.0 * (0.3 * y).cos()).round()
    })
}

#[test]
fn spectrum_of_constant_image_is_a_single_dc_pixel() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("flat.pgm");
    image::write_image(&Tensor::full(&[8, 6], 90.0), &img).unwrap();
    let prefix = dir.path().join("spec");
    let (code, out, err) = run(&["spectrum", "--image", s(&img), "--out-prefix", s(&prefix)]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("spec_logmag.pgm"));
    let (mag, _) = image::read_image(&dir.path().join("spec_logmag.pgm")).unwrap();
    let bright: Vec<usize> = (0..mag.numel()).filter(|&i| mag.data()[i] > 0.0).collect();
    // fftshift moves DC to (h/2, w/2).
    assert_eq!(bright, vec![4 * 6 + 3]);
    assert_eq!(mag.data()[4 * 6 + 3], 255.0);
    let (phase, _) = image::read_image(&dir.path().join("spec_phase.pgm")).unwrap();
    assert_eq!(phase.shape(), &[8, 6]);
}

#[test]
fn train_eval_and_erf_round_trip() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    let out = root.path().join("run");
    fs::create_dir(&data).unwrap();
    image::write_image(&scene(32, 32, 0.0), &data.join("a.pgm")).unwrap();
    image::write_image(&scene(24, 36, 1.0), &data.join("b.pgm")).unwrap();
    let cfg = root.path().join("run.cfg");
    fs::write(
        &cfg,
        "# tiny run\nseed = 5\n\n[model]\nchannels = 4\nblocks = 1\nmodules_per_block = 1\nprompt_pool = 2\n\n\
         [train]\nsteps = 3\nbatch = 2\npatch = 16\ncheckpoint_every = 2\n",
    )
    .unwrap();

    let (code, stdout, err) = run(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&out)]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("checkpoint"));
    let log = fs::read_to_string(out.join("train_log.tsv")).unwrap();
    assert_eq!(log.lines().count(), 4);
    assert!(log.starts_with("step\tloss_total"));
    let echo = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(echo.contains("model.channels = 4"));
    assert!(echo.contains("seed = 5"));

    let ckpt = out.join("checkpoint.ckpt");
    let (code, tsv, err) = run(&["eval", "--ckpt", s(&ckpt), "--data", s(&data), "--scale", "2", "--workers", "2"]);
    assert_eq!(code, 0, "{err}");
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines.len(), 4);
    for row in &lines[1..] {
        let cols: Vec<&str> = row.split('\t').collect();
        assert_eq!(cols.len(), 8);
        let psnr: f64 = cols[1].parse().unwrap();
        assert!(psnr > 10.0 && psnr < 80.0, "{row}");
        let fr: f64 = cols[4..].iter().map(|c| c.parse::<f64>().unwrap()).sum();
        assert!((fr - 1.0).abs() < 1e-5);
    }
    let (code, _, err) = run(&["eval", "--ckpt", s(&ckpt), "--data", s(&data), "--scale", "4"]);
    assert_eq!(code, 1);
    assert!(err.contains("scale"), "{err}");

    let lr = root.path().join("lr.pgm");
    image::write_image(&scene(10, 12, 0.5), &lr).unwrap();
    let map = root.path().join("erf.pgm");
    let (code, _, err) = run(&["erf", "--ckpt", s(&ckpt), "--image", s(&lr), "--out", s(&map)]);
    assert_eq!(code, 0, "{err}");
    let (erf, _) = image::read_image(&map).unwrap();
    assert_eq!(erf.shape(), &[10, 12]);
    assert_eq!(erf.data().iter().cloned().fold(0.0, f64::max), 255.0);

    // Same config and data reproduce the same checkpoint bytes.
    let first = fs::read(&ckpt).unwrap();
    fs::remove_dir_all(&out).unwrap();
    let (code, _, err) = run(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&out)]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(first, fs::read(&ckpt).unwrap());
}

#[test]
fn config_errors_exit_one_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "model.channels = 4\nmodel.chanels = 5\n").unwrap();
    let (code, _, err) = run(&["train", "--config", s(&cfg), "--data", ".", "--out", "x"]);
    assert_eq!(code, 1);
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn eval_reports_missing_sr_image() {
    let dir = tempfile::tempdir().unwrap();
    let hr = dir.path().join("hr");
    let sr = dir.path().join("sr");
    fs::create_dir(&hr).unwrap();
    fs::create_dir(&sr).unwrap();
    image::write_image(&scene(16, 16, 0.0), &hr.join("x.pgm")).unwrap();
    let (code, _, err) = run(&["eval", "--sr", s(&sr), "--data", s(&hr)]);
    assert_eq!(code, 1);
    assert!(err.contains("x.pgm"), "{err}");
}

#[test]
fn gradcheck_single_module_prints_table() {
    let (code, out, err) = run(&["gradcheck", "--module", "scan"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("max_rel_err"));
    assert!(out.contains("selective_scan"));
    assert!(out.contains("0 failed"));
}
