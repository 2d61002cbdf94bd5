//! Argument definitions and subcommand drivers for the `cifs` binary.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use cifs_core::adam::AdamConfig;
use cifs_core::calibration::{default_lambda_grid, EpochSelection, LambdaTable};
use cifs_core::dip::NetworkConfig;
use cifs_core::es::{criterion, detect_es, run_dip_with_es, EsConfig};
use cifs_core::jpeg::{encode, JpegConfig, Subsampling};
use cifs_core::synth::{synthetic_suite, Pattern};

use crate::bench::{calibrate_parallel, run_benchmark, trace_file_name, BenchmarkConfig, Job, LambdaSource};
use crate::error::{Error, Result};
use crate::formats::{
    format_list, format_opt, parse_lambda_table, read_lambda_table, read_trace, write_calibration_report,
    write_lambda_table, write_report, write_trace, KeyValues,
};
use crate::pnm::{list_images, load_image, save_image};

/// The σ→λ table shipped with the crate, produced by `cifs calibrate`.
pub const BUILTIN_LAMBDA_TABLE: &str = include_str!("../data/lambda_table.csv");

pub fn builtin_lambda_table() -> LambdaTable {
    parse_lambda_table(BUILTIN_LAMBDA_TABLE).expect("bundled table is valid")
}

#[derive(Debug, Parser)]
#[command(name = "cifs", version, about = "Deep-image-prior denoising stopped by JPEG file size")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Denoise one image and write the output at the detected epoch
    Denoise(DenoiseArgs),
    /// Print the JPEG byte count of an image
    JpegSize(JpegSizeArgs),
    /// Pick λ for one noise level from clean images and store it in a table
    Calibrate(CalibrateArgs),
    /// ES / No-ES / Peak PSNR over a set of clean images
    Benchmark(BenchmarkArgs),
    /// Detect the stopping epoch from an exported trace
    Detect(DetectArgs),
    /// Repeat a run from its echoed config.txt
    Rerun(RerunArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Chroma {
    #[value(name = "420")]
    S420,
    #[value(name = "444")]
    S444,
}

impl Chroma {
    fn mode(self) -> Subsampling {
        match self {
            Chroma::S420 => Subsampling::S420,
            Chroma::S444 => Subsampling::S444,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Chroma::S420 => "420",
            Chroma::S444 => "444",
        }
    }
}

/// Optimizer, schedule, codec and network settings shared by every training
/// subcommand.
#[derive(Clone, Debug, Args)]
pub struct TrainArgs {
    /// Total epochs T
    #[arg(long, default_value_t = 20_000)]
    pub epochs: usize,
    /// Patience window S in epochs
    #[arg(long, default_value_t = 1_000)]
    pub patience: usize,
    /// Evaluate the criterion every k-th epoch
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[arg(long, default_value_t = 95, value_parser = clap::value_parser!(u8).range(1..=100))]
    pub quality: u8,
    #[arg(long, value_enum, default_value_t = Chroma::S420)]
    pub subsampling: Chroma,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    /// Master seed; every random stream derives from it
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 32)]
    pub input_depth: usize,
    #[arg(long, value_delimiter = ',', default_value = "16,32,64")]
    pub channels_down: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "16,32,64")]
    pub channels_up: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "4,4,4")]
    pub channels_skip: Vec<usize>,
    /// Std of the per-epoch latent perturbation
    #[arg(long, default_value_t = 1.0 / 30.0)]
    pub perturb_std: f64,
}

impl TrainArgs {
    pub fn network(&self, channels: usize) -> NetworkConfig {
        NetworkConfig {
            input_depth: self.input_depth,
            channels_down: self.channels_down.clone(),
            channels_up: self.channels_up.clone(),
            channels_skip: self.channels_skip.clone(),
            output_channels: channels,
            perturb_std: self.perturb_std,
            ..NetworkConfig::default()
        }
    }

    pub fn jpeg(&self) -> JpegConfig {
        JpegConfig {
            quality: self.quality,
            subsampling: self.subsampling.mode(),
            restart_interval: 0,
        }
    }

    pub fn es(&self, lambda: f64) -> EsConfig {
        EsConfig {
            lambda,
            epochs: self.epochs,
            patience: self.patience,
            jpeg: self.jpeg(),
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            seed: self.seed,
            stride: self.stride,
        }
    }

    fn echo(&self, kv: &mut KeyValues) {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        kv.push("epochs", self.epochs)
            .push("patience", self.patience)
            .push("stride", self.stride)
            .push("quality", self.quality)
            .push("subsampling", self.subsampling.name())
            .push("lr", self.lr)
            .push("seed", self.seed)
            .push("input-depth", self.input_depth)
            .push("channels-down", list(&self.channels_down))
            .push("channels-up", list(&self.channels_up))
            .push("channels-skip", list(&self.channels_skip))
            .push("perturb-std", self.perturb_std);
    }
}

#[derive(Clone, Debug, Args)]
#[command(group = clap::ArgGroup::new("weight").required(true).args(["sigma", "lambda"]))]
pub struct DenoiseArgs {
    /// Noisy input image (PPM or PGM)
    #[arg(long)]
    pub input: PathBuf,
    /// Noise level on the 0–255 scale; λ is looked up in the table
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Criterion weight, bypassing the table
    #[arg(long)]
    pub lambda: Option<f64>,
    /// σ→λ table CSV (default: the bundled one)
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Clean reference; enables PSNR columns
    #[arg(long)]
    pub clean: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Clone, Debug, Args)]
pub struct JpegSizeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 95, value_parser = clap::value_parser!(u8).range(1..=100))]
    pub quality: u8,
    #[arg(long, value_enum, default_value_t = Chroma::S420)]
    pub subsampling: Chroma,
    /// Also write the JFIF stream here
    #[arg(long)]
    pub save: Option<PathBuf>,
}

/// Clean images from a directory, or a generated synthetic suite.
#[derive(Clone, Debug, Args)]
pub struct ImageSource {
    /// Directory of clean PPM/PGM images
    #[arg(long, conflicts_with = "synthetic")]
    pub image_dir: Option<PathBuf>,
    /// Use this many generated images instead of a directory
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Side length of generated images
    #[arg(long, default_value_t = 64)]
    pub synthetic_size: usize,
    #[arg(long, default_value_t = 1)]
    pub synthetic_seed: u64,
}

impl ImageSource {
    pub fn jobs(&self) -> Result<Vec<Job>> {
        match (&self.image_dir, self.synthetic) {
            (Some(dir), None) => {
                let paths = list_images(dir)?;
                if paths.is_empty() {
                    return Err(Error::usage(format!("{}: no .ppm or .pgm images", dir.display())));
                }
                paths
                    .iter()
                    .map(|p| {
                        Ok(Job {
                            id: p.file_name().unwrap().to_string_lossy().into_owned(),
                            clean: load_image(p)?,
                        })
                    })
                    .collect()
            }
            (None, Some(0)) => Err(Error::usage("--synthetic must be at least 1")),
            (None, Some(n)) => Ok(synthetic_jobs(n, self.synthetic_size, self.synthetic_seed)),
            _ => Err(Error::usage("give either an image directory or --synthetic N")),
        }
    }

    fn echo(&self, dir_key: &str, kv: &mut KeyValues) {
        if let Some(d) = &self.image_dir {
            kv.push(dir_key, d.display());
        }
        if let Some(n) = self.synthetic {
            kv.push("synthetic", n)
                .push("synthetic-size", self.synthetic_size)
                .push("synthetic-seed", self.synthetic_seed);
        }
    }
}

/// Colour synthetic images named `synthetic-<i>-<pattern>`.
pub fn synthetic_jobs(count: usize, size: usize, seed: u64) -> Vec<Job> {
    synthetic_suite(count, 3, size, size, seed)
        .into_iter()
        .enumerate()
        .map(|(i, clean)| Job {
            id: format!("synthetic-{i}-{}", Pattern::ALL[i % Pattern::ALL.len()].name()),
            clean,
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Selection {
    /// Global argmin of the criterion over the run
    Argmin,
    /// The windowed stopping rule with the run's patience
    Windowed,
}

#[derive(Clone, Debug, Args)]
pub struct CalibrateArgs {
    /// Directory of clean PPM/PGM images
    #[arg(long, conflicts_with = "synthetic")]
    pub clean_dir: Option<PathBuf>,
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long, default_value_t = 64)]
    pub synthetic_size: usize,
    #[arg(long, default_value_t = 1)]
    pub synthetic_seed: u64,
    #[arg(long)]
    pub sigma: f64,
    /// `default`, `lo:hi:n` (log-spaced, inclusive) or a comma list
    #[arg(long, default_value = "default")]
    pub grid: String,
    #[arg(long, value_enum, default_value_t = Selection::Argmin)]
    pub selection: Selection,
    /// Clamp synthesized noisy images to [0, 1]
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub clamp_noise: bool,
    /// σ→λ table to update (created when missing)
    #[arg(long)]
    pub out: PathBuf,
    /// Report, traces and config echo (default: the table's directory)
    #[arg(long)]
    pub work_dir: Option<PathBuf>,
    /// Parallel runs; 0 = one per core
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Clone, Debug, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub source: ImageSource,
    /// Noise levels on the 0–255 scale
    #[arg(long, value_delimiter = ',', required = true)]
    pub sigmas: Vec<f64>,
    /// Clamp synthesized noisy images to [0, 1]
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub clamp_noise: bool,
    #[arg(long, conflicts_with = "table")]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Parallel runs; 0 = one per core
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Clone, Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub lambda: f64,
    /// Patience S in epochs
    #[arg(long)]
    pub patience: usize,
}

#[derive(Clone, Debug, Args)]
pub struct RerunArgs {
    /// A config.txt written by an earlier run
    #[arg(long)]
    pub config: PathBuf,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// `default`, `lo:hi:n` or `a,b,c`.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::usage(format!("bad --grid `{spec}`; expected `default`, `lo:hi:n` or a comma list"));
    let spec = spec.trim();
    let grid = if spec == "default" {
        default_lambda_grid()
    } else if let Some((range, n)) = spec.rsplit_once(':') {
        let (lo, hi) = range.split_once(':').ok_or_else(bad)?;
        let (lo, hi): (f64, f64) = (lo.parse().map_err(|_| bad())?, hi.parse().map_err(|_| bad())?);
        let n: usize = n.parse().map_err(|_| bad())?;
        if !(lo > 0.0 && hi >= lo) || n == 0 || (n == 1 && hi != lo) {
            return Err(bad());
        }
        if n == 1 {
            vec![lo]
        } else {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
        }
    } else {
        spec.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect::<Result<Vec<f64>>>()?
    };
    if grid.is_empty() || grid.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
        return Err(bad());
    }
    Ok(grid)
}

fn lambda_table(path: Option<&Path>) -> Result<LambdaTable> {
    match path {
        Some(p) => read_lambda_table(p),
        None => Ok(builtin_lambda_table()),
    }
}

/// Runs a parsed command; text for stdout is returned.
pub fn execute(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Denoise(a) => denoise(&a),
        Command::JpegSize(a) => jpeg_size(&a),
        Command::Calibrate(a) => calibrate(&a),
        Command::Benchmark(a) => benchmark(&a),
        Command::Detect(a) => detect(&a),
        Command::Rerun(a) => rerun(&a),
    }
}

fn denoise(a: &DenoiseArgs) -> Result<String> {
    let noisy = load_image(&a.input)?;
    let clean = a.clean.as_ref().map(load_image).transpose()?;
    let lambda = match (a.lambda, a.sigma) {
        (Some(l), None) => l,
        (None, Some(s)) => lambda_table(a.table.as_deref())?.lambda_for_sigma(s)?,
        _ => return Err(Error::usage("give exactly one of --sigma or --lambda")),
    };
    let net = a.train.network(noisy.channels());
    let es = a.train.es(lambda);
    create_dir(&a.out)?;

    let mut echo = KeyValues::new();
    echo.push("command", "denoise").push("input", a.input.display());
    if let Some(s) = a.sigma {
        echo.push("sigma", s);
    }
    if let Some(l) = a.lambda {
        echo.push("lambda", l);
    }
    if let Some(t) = &a.table {
        echo.push("table", t.display());
    }
    if let Some(c) = &a.clean {
        echo.push("clean", c.display());
    }
    echo.push("out", a.out.display());
    a.train.echo(&mut echo);
    echo.write(a.out.join("config.txt"))?;

    let out = run_dip_with_es(&noisy, &net, &es, clean.as_ref())?;
    let ext = if noisy.channels() == 1 { "pgm" } else { "ppm" };
    save_image(a.out.join(format!("denoised.{ext}")), &out.result.image)?;
    write_trace(a.out.join("trace.csv"), &out.trace.rows)?;
    let p = out.psnr;
    let mut summary = KeyValues::new();
    summary
        .push("t_star", out.result.t_star)
        .push("fallback", out.result.fallback)
        .push("candidates", format_list(&out.result.candidates))
        .push("psnr_at_tstar", format_opt(p.map(|p| p.at_t_star)))
        .push("psnr_no_es", format_opt(p.map(|p| p.no_es)))
        .push("psnr_peak", format_opt(p.map(|p| p.peak)))
        .push("lambda", lambda)
        .push("epochs", es.epochs)
        .push("patience", es.patience);
    summary.write(a.out.join("summary.txt"))?;
    Ok(summary.render())
}

fn jpeg_size(a: &JpegSizeArgs) -> Result<String> {
    let img = load_image(&a.input)?;
    let cfg = JpegConfig {
        quality: a.quality,
        subsampling: a.subsampling.mode(),
        restart_interval: 0,
    };
    let bytes = encode(&img, &cfg)?;
    if let Some(p) = &a.save {
        fs::write(p, &bytes).map_err(|e| Error::io(p, e))?;
    }
    Ok(format!("{}\n", bytes.len()))
}

fn calibrate(a: &CalibrateArgs) -> Result<String> {
    let source = ImageSource {
        image_dir: a.clean_dir.clone(),
        synthetic: a.synthetic,
        synthetic_size: a.synthetic_size,
        synthetic_seed: a.synthetic_seed,
    };
    let jobs = source.jobs()?;
    let grid = parse_grid(&a.grid)?;
    if !(a.sigma >= 0.0) {
        return Err(Error::usage("--sigma must be >= 0"));
    }
    let work = match &a.work_dir {
        Some(d) => d.clone(),
        None => a.out.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let work = if work.as_os_str().is_empty() { PathBuf::from(".") } else { work };
    create_dir(&work.join("traces"))?;
    let mut table = if a.out.exists() { read_lambda_table(&a.out)? } else { LambdaTable::default() };

    let mut echo = KeyValues::new();
    echo.push("command", "calibrate");
    source.echo("clean-dir", &mut echo);
    echo.push("sigma", a.sigma)
        .push("clamp-noise", a.clamp_noise)
        .push("grid", &a.grid)
        .push("selection", match a.selection {
            Selection::Argmin => "argmin",
            Selection::Windowed => "windowed",
        })
        .push("out", a.out.display())
        .push("work-dir", work.display())
        .push("workers", a.workers);
    a.train.echo(&mut echo);
    echo.write(work.join("config.txt"))?;

    let channels = jobs[0].clean.channels();
    if jobs.iter().any(|j| j.clean.channels() != channels) {
        return Err(Error::usage("calibration images mix grey and colour"));
    }
    let selection = match a.selection {
        Selection::Argmin => EpochSelection::GlobalArgmin,
        Selection::Windowed => EpochSelection::Windowed { patience: a.train.patience },
    };
    let es = a.train.es(0.0);
    let outcome = calibrate_parallel(&jobs, a.sigma, a.clamp_noise, &grid, &a.train.network(channels), &es, selection, a.workers)?;
    for (job, trace) in jobs.iter().zip(&outcome.run.traces) {
        write_trace(work.join("traces").join(trace_file_name(&job.id, a.sigma)), &trace.rows)?;
    }
    write_calibration_report(work.join("calibration_report.csv"), &outcome.scores)?;
    if !(outcome.lambda > 0.0) {
        return Err(Error::Core(cifs_core::Error::Config(format!(
            "best grid value is λ = {}, which a table cannot hold (λ must be > 0)",
            outcome.lambda
        ))));
    }
    table.upsert(a.sigma, outcome.lambda)?;
    write_lambda_table(&a.out, &table, "self-calibrated: written by `cifs calibrate`")?;
    Ok(format!("sigma={}\nlambda={}\n", a.sigma, outcome.lambda))
}

fn benchmark(a: &BenchmarkArgs) -> Result<String> {
    let jobs = a.source.jobs()?;
    let lambda = match (a.lambda, &a.table) {
        (Some(l), _) => LambdaSource::Fixed(l),
        (None, t) => LambdaSource::Table(lambda_table(t.as_deref())?),
    };
    create_dir(&a.out)?;
    let mut echo = KeyValues::new();
    echo.push("command", "benchmark");
    a.source.echo("image-dir", &mut echo);
    echo.push(
        "sigmas",
        a.sigmas.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
    );
    echo.push("clamp-noise", a.clamp_noise);
    if let Some(l) = a.lambda {
        echo.push("lambda", l);
    }
    if let Some(t) = &a.table {
        echo.push("table", t.display());
    }
    echo.push("out", a.out.display()).push("workers", a.workers);
    a.train.echo(&mut echo);
    echo.write(a.out.join("config.txt"))?;

    let channels = jobs[0].clean.channels();
    let cfg = BenchmarkConfig {
        sigmas: a.sigmas.clone(),
        lambda,
        net: a.train.network(channels),
        es: a.train.es(0.0),
        master_seed: a.train.seed,
        clamp_noise: a.clamp_noise,
        workers: a.workers,
        trace_dir: Some(a.out.join("traces")),
    };
    let bench = run_benchmark(&jobs, &cfg)?;
    write_report(a.out.join("report.csv"), &bench.rows)?;
    crate::formats::write_aggregates(a.out.join("aggregate.csv"), &bench.aggregates)?;
    if !bench.failures.is_empty() {
        crate::formats::write_failures(a.out.join("failures.csv"), &bench.failures)?;
    }
    let mut text = String::new();
    for g in &bench.aggregates {
        text.push_str(&format!(
            "sigma={} n={} es={:.3}±{:.3} no_es={:.3}±{:.3} peak={:.3}±{:.3}\n",
            g.sigma, g.count, g.es.mean, g.es.std, g.no_es.mean, g.no_es.std, g.peak.mean, g.peak.std
        ));
    }
    if !bench.failures.is_empty() {
        text.push_str(&format!("failed runs: {}\n", bench.failures.len()));
    }
    Ok(text)
}

fn detect(a: &DetectArgs) -> Result<String> {
    let rows = read_trace(&a.trace)?;
    let stride = match rows.as_slice() {
        [r0, r1, ..] => r1.epoch - r0.epoch,
        _ => 1,
    };
    if rows.windows(2).any(|w| w[1].epoch - w[0].epoch != stride) {
        return Err(Error::parse(&a.trace, "epochs are not evenly spaced"));
    }
    if a.patience == 0 || a.patience % stride != 0 {
        return Err(Error::usage(format!(
            "--patience {} must be a positive multiple of the trace stride {stride}",
            a.patience
        )));
    }
    let e: Vec<f64> = rows.iter().map(|r| criterion(a.lambda, r.loss, r.regularizer)).collect();
    let d = detect_es(&e, a.patience / stride)?;
    let epoch = |i: usize| rows[i - 1].epoch;
    let candidates: Vec<usize> = d.candidates.iter().map(|&i| epoch(i)).collect();
    let mut kv = KeyValues::new();
    kv.push("t_star", epoch(d.t_star))
        .push("fallback", d.fallback)
        .push("candidates", format_list(&candidates));
    Ok(kv.render())
}

/// Flags rebuilt from an echoed config: `key=value` becomes `--key value`.
pub fn rerun_argv(config: &KeyValues) -> Result<Vec<String>> {
    let command = config
        .get("command")
        .ok_or_else(|| Error::usage("config has no `command` entry"))?;
    let mut argv = vec!["cifs".to_string(), command.to_string()];
    for (k, v) in &config.0 {
        if k != "command" {
            argv.push(format!("--{k}"));
            argv.push(v.clone());
        }
    }
    Ok(argv)
}

fn rerun(a: &RerunArgs) -> Result<String> {
    let kv = KeyValues::read(&a.config)?;
    let argv = rerun_argv(&kv)?;
    let cli = Cli::try_parse_from(&argv).map_err(|e| Error::usage(format!("{}: {e}", a.config.display())))?;
    if matches!(cli.command, Command::Rerun(_)) {
        return Err(Error::usage("a rerun config cannot point at another rerun"));
    }
    execute(cli)
}
