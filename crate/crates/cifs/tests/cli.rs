use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cifs::cli::builtin_lambda_table;
use cifs::formats::{read_lambda_table, read_report, read_trace, KeyValues};
use cifs::pnm::save_image;
use cifs_core::noise::{add_gaussian_noise, NoiseSpec};
use cifs_core::synth::{synthetic_image, Pattern};
use tempfile::TempDir;

const TINY: [&str; 10] = [
    "--epochs",
    "40",
    "--patience",
    "10",
    "--input-depth",
    "4",
    "--channels-down",
    "8,8",
    "--channels-up",
    "8,8",
];
const TINY_SKIP: [&str; 2] = ["--channels-skip", "2,2"];

fn cifs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cifs")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> String {
    assert!(o.status.success(), "exit {:?}\nstderr: {}", o.status.code(), stderr(&o));
    stdout(&o)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Clean and noisy 16×16 colour images in `dir`.
fn images(dir: &Path) -> (PathBuf, PathBuf) {
    let clean = synthetic_image(Pattern::Discs, 3, 16, 16, 4).quantized();
    let noisy = add_gaussian_noise(&clean, &NoiseSpec::new(25.0, 9)).quantized();
    let (c, n) = (dir.join("clean.ppm"), dir.join("noisy.ppm"));
    save_image(&c, &clean).unwrap();
    save_image(&n, &noisy).unwrap();
    (c, n)
}

fn denoise(dir: &Path, out: &str, extra: &[&str]) -> String {
    let (c, n) = images(dir);
    let out = dir.join(out);
    let mut args = vec!["denoise", "--input", p(&n), "--clean", p(&c), "--out", p(&out)];
    args.extend(TINY);
    args.extend(TINY_SKIP);
    args.extend(extra);
    ok(cifs(&args))
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(cifs(&["--help"]).status.code(), Some(0));
    assert_eq!(cifs(&["--version"]).status.code(), Some(0));
    assert_eq!(cifs(&["denoise", "--help"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(cifs(&[]).status.code(), Some(1));
    assert_eq!(cifs(&["frobnicate"]).status.code(), Some(1));
    let dir = TempDir::new().unwrap();
    let (_, n) = images(dir.path());
    // neither --sigma nor --lambda
    let o = cifs(&["denoise", "--input", p(&n), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    // T must exceed S
    let o = cifs(&[
        "denoise", "--input", p(&n), "--lambda", "1", "--out", p(&dir.path().join("o")), "--epochs", "10", "--patience", "10",
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("S + 1"), "{}", stderr(&o));
}

#[test]
fn missing_and_malformed_inputs_exit_two() {
    let dir = TempDir::new().unwrap();
    let o = cifs(&["jpeg-size", "--input", p(&dir.path().join("absent.ppm"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("absent.ppm"));

    let bad = dir.path().join("bad.ppm");
    fs::write(&bad, b"P6\n4 4\n65535\n").unwrap();
    let o = cifs(&["jpeg-size", "--input", p(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("255"), "{}", stderr(&o));

    let trace = dir.path().join("trace.csv");
    fs::write(
        &trace,
        "epoch,loss,cifs_bytes,regularizer,criterion,psnr\n1,0.5,100,1.0,1.5,\n2,zero,100,1.0,1.5,\n",
    )
    .unwrap();
    let o = cifs(&["detect", "--trace", p(&trace), "--lambda", "1", "--patience", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn divergence_exits_three() {
    let dir = TempDir::new().unwrap();
    let (_, n) = images(dir.path());
    let out = dir.path().join("o");
    let mut args = vec!["denoise", "--input", p(&n), "--lambda", "1", "--out", p(&out), "--lr", "1e30"];
    args.extend(TINY);
    args.extend(TINY_SKIP);
    let o = cifs(&args);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn jpeg_size_reports_the_saved_stream_length() {
    let dir = TempDir::new().unwrap();
    let (c, _) = images(dir.path());
    let save = dir.path().join("c.jpg");
    for sub in ["420", "444"] {
        let n: usize = ok(cifs(&["jpeg-size", "--input", p(&c), "--subsampling", sub, "--save", p(&save)]))
            .trim()
            .parse()
            .unwrap();
        let bytes = fs::read(&save).unwrap();
        assert_eq!(n, bytes.len());
        let mut d = jpeg_decoder::Decoder::new(&bytes[..]);
        d.decode().unwrap();
        let info = d.info().unwrap();
        assert_eq!((info.width, info.height), (16, 16));
    }
}

#[test]
fn jpeg_size_grows_along_a_noise_ladder() {
    let dir = TempDir::new().unwrap();
    let clean = synthetic_image(Pattern::Gradient, 3, 48, 48, 2);
    let mut last = 0;
    for sigma in [0.0, 10.0, 20.0, 40.0, 80.0] {
        let path = dir.path().join(format!("s{sigma}.ppm"));
        save_image(&path, &add_gaussian_noise(&clean, &NoiseSpec::new(sigma, 3))).unwrap();
        let n: usize = ok(cifs(&["jpeg-size", "--input", p(&path)])).trim().parse().unwrap();
        assert!(n > last, "sigma {sigma}: {n} <= {last}");
        last = n;
    }
}

#[test]
fn denoise_writes_artifacts_deterministically() {
    let dir = TempDir::new().unwrap();
    let a = denoise(dir.path(), "a", &["--lambda", "1000"]);
    let b = denoise(dir.path(), "b", &["--lambda", "1000"]);
    assert_eq!(a, b);
    for f in ["denoised.ppm", "trace.csv", "summary.txt"] {
        let (x, y) = (fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap());
        assert!(x == y, "{f} differs between identical runs");
    }
    let rows = read_trace(dir.path().join("a/trace.csv")).unwrap();
    assert_eq!(rows.len(), 40);
    assert!(rows.iter().all(|r| r.psnr.is_some()));
    let summary = KeyValues::parse(&a).unwrap();
    let t: usize = summary.get("t_star").unwrap().parse().unwrap();
    assert!((1..=40).contains(&t));
    assert_ne!(summary.get("psnr_at_tstar"), Some("none"));
}

#[test]
fn summary_marks_missing_psnr_without_a_reference() {
    let dir = TempDir::new().unwrap();
    let (_, n) = images(dir.path());
    let out = dir.path().join("o");
    let mut args = vec!["denoise", "--input", p(&n), "--lambda", "10", "--out", p(&out)];
    args.extend(TINY);
    args.extend(TINY_SKIP);
    let s = KeyValues::parse(&ok(cifs(&args))).unwrap();
    assert_eq!(s.get("psnr_no_es"), Some("none"));
    assert!(read_trace(out.join("trace.csv")).unwrap().iter().all(|r| r.psnr.is_none()));
}

#[test]
fn rerun_reproduces_a_denoise_run() {
    let dir = TempDir::new().unwrap();
    denoise(dir.path(), "a", &["--lambda", "300", "--stride", "2"]);
    let out = dir.path().join("a");
    let before: Vec<Vec<u8>> = ["denoised.ppm", "trace.csv", "summary.txt"]
        .iter()
        .map(|f| fs::read(out.join(f)).unwrap())
        .collect();
    ok(cifs(&["rerun", "--config", p(&out.join("config.txt"))]));
    let after: Vec<Vec<u8>> = ["denoised.ppm", "trace.csv", "summary.txt"]
        .iter()
        .map(|f| fs::read(out.join(f)).unwrap())
        .collect();
    assert!(before == after);
    assert_eq!(read_trace(out.join("trace.csv")).unwrap().len(), 20);
}

#[test]
fn detect_replays_the_in_run_decision() {
    let dir = TempDir::new().unwrap();
    for lambda in ["0", "30", "1e4"] {
        let name = format!("l{lambda}");
        let s = KeyValues::parse(&denoise(dir.path(), &name, &["--lambda", lambda])).unwrap();
        let trace = dir.path().join(&name).join("trace.csv");
        let d = KeyValues::parse(&ok(cifs(&["detect", "--trace", p(&trace), "--lambda", lambda, "--patience", "10"]))).unwrap();
        for k in ["t_star", "fallback", "candidates"] {
            assert_eq!(s.get(k), d.get(k), "{k} at lambda {lambda}");
        }
    }
}

#[test]
fn sigma_lookup_uses_the_bundled_table() {
    let dir = TempDir::new().unwrap();
    let s = KeyValues::parse(&denoise(dir.path(), "o", &["--sigma", "25"])).unwrap();
    let expected = builtin_lambda_table().lambda_for_sigma(25.0).unwrap();
    assert_eq!(s.get("lambda").unwrap().parse::<f64>().unwrap(), expected);
}

#[test]
fn calibrate_upserts_the_table() {
    let dir = TempDir::new().unwrap();
    let table = dir.path().join("table.csv");
    let run = |sigma: &str, grid: &str, work: &str| {
        let w = dir.path().join(work);
        let mut args = vec![
            "calibrate", "--synthetic", "2", "--synthetic-size", "16", "--sigma", sigma, "--grid", grid, "--out", p(&table),
            "--work-dir", p(&w), "--workers", "1",
        ];
        args.extend(TINY);
        args.extend(TINY_SKIP);
        KeyValues::parse(&ok(cifs(&args))).unwrap()
    };
    // a single-point grid can only return that point
    let s = run("25", "7:7:1", "w1");
    assert_eq!(s.get("lambda"), Some("7"));
    assert_eq!(read_lambda_table(&table).unwrap().rows(), &[(25.0, 7.0)]);
    assert_eq!(fs::read_dir(dir.path().join("w1/traces")).unwrap().count(), 2);
    run("50", "3", "w2");
    run("25", "2,5", "w3");
    let rows = read_lambda_table(&table).unwrap().rows().to_vec();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1], (50.0, 3.0));
    assert!(rows[0].0 == 25.0 && (rows[0].1 == 2.0 || rows[0].1 == 5.0));
}

#[test]
fn benchmark_reports_every_run() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("bench");
    let mut args = vec![
        "benchmark", "--synthetic", "2", "--synthetic-size", "16", "--sigmas", "10,30", "--lambda", "100", "--out", p(&out),
        "--workers", "2",
    ];
    args.extend(TINY);
    args.extend(TINY_SKIP);
    let text = ok(cifs(&args));
    assert_eq!(text.lines().count(), 2, "{text}");
    let rows = read_report(out.join("report.csv")).unwrap();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        assert!(r.psnr_peak >= r.psnr_es && r.psnr_peak >= r.psnr_no_es);
    }
    assert_eq!(fs::read_dir(out.join("traces")).unwrap().count(), 4);
    assert!(out.join("aggregate.csv").exists());
    assert!(!out.join("failures.csv").exists());
}

#[test]
fn detect_falls_back_on_a_decreasing_criterion() {
    let dir = TempDir::new().unwrap();
    let trace = dir.path().join("t.csv");
    let mut text = String::from("epoch,loss,cifs_bytes,regularizer,criterion,psnr\n");
    for t in 1..=12 {
        let loss = 1.0 / t as f64;
        text.push_str(&format!("{t},{loss},10,0.5,{},\n", loss + 0.5));
    }
    fs::write(&trace, text).unwrap();
    let d = KeyValues::parse(&ok(cifs(&["detect", "--trace", p(&trace), "--lambda", "1", "--patience", "3"]))).unwrap();
    assert_eq!(d.get("t_star"), Some("12"));
    assert_eq!(d.get("fallback"), Some("true"));
    assert_eq!(d.get("candidates"), Some(""));
    // λ = 0 leaves the constant regularizer: the first epoch qualifies
    let d = KeyValues::parse(&ok(cifs(&["detect", "--trace", p(&trace), "--lambda", "0", "--patience", "3"]))).unwrap();
    assert_eq!(d.get("t_star"), Some("1"));
}

#[test]
fn unclamped_benchmark_reruns_from_its_config() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("bench");
    let mut args = vec![
        "benchmark", "--synthetic", "1", "--synthetic-size", "16", "--sigmas", "50", "--lambda", "100", "--out", p(&out),
        "--clamp-noise", "false",
    ];
    args.extend(TINY);
    args.extend(TINY_SKIP);
    let first = ok(cifs(&args));
    let report = fs::read(out.join("report.csv")).unwrap();
    assert!(fs::read_to_string(out.join("config.txt")).unwrap().contains("clamp-noise=false"));
    assert_eq!(ok(cifs(&["rerun", "--config", p(&out.join("config.txt"))])), first);
    assert!(fs::read(out.join("report.csv")).unwrap() == report);
}
