//! Parallel (image, σ) runs and the ES / No-ES / Peak report.

use std::path::PathBuf;

use cifs_core::calibration::{lambda_for_sigma, run_noisy, CalibrationOutcome, CalibrationRun, EpochSelection, LambdaTable};
use cifs_core::dip::NetworkConfig;
use cifs_core::es::{DipOutcome, EsConfig};
use cifs_core::seed::JobSeeds;
use cifs_core::Image;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::formats::{write_trace, ReportRow};

/// A clean image and the identifier its seeds derive from.
#[derive(Clone, Debug)]
pub struct Job {
    pub id: String,
    pub clean: Image,
}

#[derive(Clone, Debug)]
pub enum LambdaSource {
    Fixed(f64),
    Table(LambdaTable),
}

impl LambdaSource {
    pub fn resolve(&self, sigma: f64) -> Result<f64> {
        match self {
            LambdaSource::Fixed(l) => Ok(*l),
            LambdaSource::Table(t) => Ok(lambda_for_sigma(t, sigma)?),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchmarkConfig {
    pub sigmas: Vec<f64>,
    pub lambda: LambdaSource,
    pub net: NetworkConfig,
    /// Template for every run; `lambda` and `seed` are set per job.
    pub es: EsConfig,
    pub master_seed: u64,
    /// Clamp noisy images to `[0, 1]`.
    pub clamp_noise: bool,
    /// 0 uses rayon's default.
    pub workers: usize,
    /// When set, one trace CSV per job is written here.
    pub trace_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population statistics; `None` for an empty slice.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(MeanStd { mean, std: var.sqrt() })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub sigma: f64,
    pub count: usize,
    pub es: MeanStd,
    pub no_es: MeanStd,
    pub peak: MeanStd,
}

#[derive(Clone, Debug)]
pub struct Failure {
    pub image: String,
    pub sigma: f64,
    pub error: String,
}

#[derive(Debug)]
pub struct Benchmark {
    /// Ordered by job then σ, as given.
    pub rows: Vec<ReportRow>,
    pub aggregates: Vec<Aggregate>,
    pub failures: Vec<Failure>,
    pub outcomes: Vec<DipOutcome>,
}

/// File name used for a job's trace.
pub fn trace_file_name(image: &str, sigma: f64) -> String {
    let stem: String = image
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{stem}_sigma{sigma}.csv")
}

pub fn run_job(job: &Job, sigma: f64, lambda: f64, cfg: &BenchmarkConfig) -> Result<DipOutcome> {
    let seeds = JobSeeds::new(cfg.master_seed, &job.id, sigma);
    let es = EsConfig {
        lambda,
        ..cfg.es.clone()
    };
    let out = run_noisy(&job.clean, sigma, cfg.clamp_noise, seeds, &cfg.net, &es)?;
    if let Some(dir) = &cfg.trace_dir {
        write_trace(dir.join(trace_file_name(&job.id, sigma)), &out.trace.rows)?;
    }
    Ok(out)
}

pub fn report_row(image: &str, sigma: f64, out: &DipOutcome) -> ReportRow {
    let p = out.psnr.expect("benchmark runs record PSNR");
    ReportRow {
        image: image.to_string(),
        sigma,
        psnr_es: p.at_t_star,
        psnr_no_es: p.no_es,
        psnr_peak: p.peak,
        t_star: out.result.t_star,
        fallback: out.result.fallback,
    }
}

pub fn aggregate(rows: &[ReportRow]) -> Vec<Aggregate> {
    let mut sigmas: Vec<f64> = Vec::new();
    for r in rows {
        if !sigmas.contains(&r.sigma) {
            sigmas.push(r.sigma);
        }
    }
    sigmas
        .into_iter()
        .map(|sigma| {
            let sel: Vec<&ReportRow> = rows.iter().filter(|r| r.sigma == sigma).collect();
            let col = |f: fn(&ReportRow) -> f64| MeanStd::of(&sel.iter().map(|r| f(r)).collect::<Vec<_>>()).unwrap();
            Aggregate {
                sigma,
                count: sel.len(),
                es: col(|r| r.psnr_es),
                no_es: col(|r| r.psnr_no_es),
                peak: col(|r| r.psnr_peak),
            }
        })
        .collect()
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::usage(format!("cannot start {workers} workers: {e}")))
}

/// Runs every (job, σ) pair. Failed runs are collected in
/// [`Benchmark::failures`]; the call fails only when nothing succeeded.
pub fn run_benchmark(jobs: &[Job], cfg: &BenchmarkConfig) -> Result<Benchmark> {
    if jobs.is_empty() {
        return Err(Error::usage("no images to benchmark"));
    }
    if cfg.sigmas.is_empty() {
        return Err(Error::usage("no noise levels given"));
    }
    if let Some(dir) = &cfg.trace_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let pairs: Vec<(&Job, f64)> = jobs.iter().flat_map(|j| cfg.sigmas.iter().map(move |&s| (j, s))).collect();
    let results: Vec<Result<DipOutcome>> = pool(cfg.workers)?.install(|| {
        pairs
            .par_iter()
            .map(|&(job, sigma)| run_job(job, sigma, cfg.lambda.resolve(sigma)?, cfg))
            .collect()
    });
    let mut rows = Vec::new();
    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for ((job, sigma), res) in pairs.into_iter().zip(results) {
        match res {
            Ok(out) => {
                rows.push(report_row(&job.id, sigma, &out));
                outcomes.push(out);
            }
            Err(e) => failures.push(Failure {
                image: job.id.clone(),
                sigma,
                error: e.to_string(),
            }),
        }
    }
    if rows.is_empty() {
        let first = failures.first().map(|f| f.error.clone()).unwrap_or_default();
        return Err(Error::Core(cifs_core::Error::State(format!("every benchmark run failed; first error: {first}"))));
    }
    Ok(Benchmark {
        aggregates: aggregate(&rows),
        rows,
        failures,
        outcomes,
    })
}

/// [`cifs_core::calibration::calibrate`] with the per-image runs spread over
/// `workers` threads. Seeds derive from each job's id.
pub fn calibrate_parallel(
    jobs: &[Job],
    sigma: f64,
    clamp_noise: bool,
    grid: &[f64],
    net: &NetworkConfig,
    es: &EsConfig,
    selection: EpochSelection,
    workers: usize,
) -> Result<CalibrationOutcome> {
    if jobs.is_empty() {
        return Err(Error::usage("no calibration images"));
    }
    let traces = pool(workers)?.install(|| {
        jobs.par_iter()
            .map(|job| {
                let seeds = JobSeeds::new(es.seed, &job.id, sigma);
                Ok(run_noisy(&job.clean, sigma, clamp_noise, seeds, net, es)?.trace)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(CalibrationRun::new(sigma, grid.to_vec(), selection, traces)?.evaluate()?)
}
