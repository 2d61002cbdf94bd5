//! Choosing the criterion weight λ: one DIP run per clean calibration image,
//! then every λ of a grid is scored from the stored traces by the PSNR at the
//! epoch its criterion selects.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;

use crate::dip::NetworkConfig;
use crate::error::{Error, Result};
use crate::es::{detect_es, run_dip_with_es, DipOutcome, EpochTrace, EsConfig};
use crate::image::Image;
use crate::noise::{add_gaussian_noise, NoiseSpec};
use crate::seed::JobSeeds;

/// How the scored epoch is chosen from a criterion series.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpochSelection {
    /// First index of the global minimum over the whole run.
    GlobalArgmin,
    /// The windowed rule of [`detect_es`] with patience in epochs.
    Windowed { patience: usize },
}

/// Half-decade logarithmic grid `10^lo, 10^(lo+½), …, 10^hi`.
pub fn log_grid(lo_exp: i32, hi_exp: i32) -> Vec<f64> {
    (2 * lo_exp..=2 * hi_exp)
        .map(|k| 10f64.powf(k as f64 / 2.0))
        .collect()
}

/// Default λ grid: half-decade steps from 1e-2 to 1e8.
pub fn default_lambda_grid() -> Vec<f64> {
    log_grid(-2, 8)
}

/// 0-based row index chosen for `lambda` on `trace`.
pub fn select_row(trace: &EpochTrace, lambda: f64, selection: EpochSelection) -> Result<usize> {
    if trace.rows.is_empty() {
        return Err(Error::input("empty trace"));
    }
    match selection {
        EpochSelection::GlobalArgmin => {
            let e = trace.criterion_series(lambda)?;
            let mut best = 0;
            for (i, &v) in e.iter().enumerate() {
                if v < e[best] {
                    best = i;
                }
            }
            Ok(best)
        }
        EpochSelection::Windowed { patience } => {
            let stride = trace.stride();
            if patience % stride != 0 {
                return Err(Error::config(format!(
                    "patience {patience} is not a multiple of the trace stride {stride}"
                )));
            }
            let d = detect_es(&trace.criterion_series(lambda)?, patience / stride)?;
            Ok(d.t_star - 1)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaScore {
    pub lambda: f64,
    pub mean_psnr: f64,
    /// Population standard deviation over images.
    pub std_psnr: f64,
}

/// Stored traces of one noise level, ready for λ scoring.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationRun {
    pub sigma: f64,
    pub grid: Vec<f64>,
    pub selection: EpochSelection,
    pub traces: Vec<EpochTrace>,
}

impl CalibrationRun {
    pub fn new(sigma: f64, grid: Vec<f64>, selection: EpochSelection, traces: Vec<EpochTrace>) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::config("lambda grid is empty"));
        }
        if grid.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
            return Err(Error::config("lambda grid values must be finite and >= 0"));
        }
        if traces.is_empty() {
            return Err(Error::config("no calibration traces"));
        }
        let epochs: Vec<usize> = traces[0].rows.iter().map(|r| r.epoch).collect();
        for t in &traces {
            if t.rows.iter().map(|r| r.epoch).ne(epochs.iter().copied()) {
                return Err(Error::input("calibration traces cover different epochs"));
            }
            if t.rows.iter().any(|r| r.psnr.is_none()) {
                return Err(Error::input("calibration traces need per-epoch PSNR"));
            }
        }
        Ok(CalibrationRun {
            sigma,
            grid,
            selection,
            traces,
        })
    }

    /// Mean and spread of the selected-epoch PSNR for every grid value.
    pub fn scores(&self) -> Result<Vec<LambdaScore>> {
        self.grid
            .iter()
            .map(|&lambda| {
                let values = self
                    .traces
                    .iter()
                    .map(|t| {
                        let i = select_row(t, lambda, self.selection)?;
                        Ok(t.rows[i].psnr.expect("checked in new"))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                let n = values.len() as f64;
                let mean = values.iter().sum::<f64>() / n;
                let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                Ok(LambdaScore {
                    lambda,
                    mean_psnr: mean,
                    std_psnr: Float::sqrt(var),
                })
            })
            .collect()
    }

    /// The grid value with the highest mean PSNR; the smallest such λ on ties.
    pub fn best(&self) -> Result<LambdaScore> {
        let scores = self.scores()?;
        Ok(best_score(&scores))
    }
}

pub fn best_score(scores: &[LambdaScore]) -> LambdaScore {
    let mut best = scores[0];
    for s in &scores[1..] {
        if s.mean_psnr > best.mean_psnr {
            best = *s;
        }
    }
    best
}

/// Adds noise of level `sigma` to `clean` (clamped to `[0, 1]` when `clamp`)
/// and fits the network to the noisy image, recording per-epoch PSNR against
/// `clean`. `es.seed` is replaced by `seeds.dip`.
pub fn run_noisy(
    clean: &Image,
    sigma: f64,
    clamp: bool,
    seeds: JobSeeds,
    net: &NetworkConfig,
    es: &EsConfig,
) -> Result<DipOutcome> {
    let spec = NoiseSpec {
        clamp,
        ..NoiseSpec::new(sigma, seeds.noise)
    };
    let noisy = add_gaussian_noise(clean, &spec);
    let es = EsConfig {
        seed: seeds.dip,
        ..es.clone()
    };
    run_dip_with_es(&noisy, net, &es, Some(clean))
}

/// Identifier of the `index`-th image in [`calibrate`]; seeds derive from it.
pub fn calibration_image_id(index: usize) -> String {
    format!("calibration-{index}")
}

#[derive(Clone, Debug)]
pub struct CalibrationOutcome {
    pub lambda: f64,
    pub scores: Vec<LambdaScore>,
    pub run: CalibrationRun,
}

impl CalibrationRun {
    /// Scores the grid and picks the best λ.
    pub fn evaluate(self) -> Result<CalibrationOutcome> {
        let scores = self.scores()?;
        let best = best_score(&scores);
        Ok(CalibrationOutcome {
            lambda: best.lambda,
            scores,
            run: self,
        })
    }
}

/// Sequential calibration: one run per clean image at noise level `sigma`,
/// seeded from `es.seed` and [`calibration_image_id`], then a λ grid search
/// over the stored traces.
pub fn calibrate(
    clean_images: &[Image],
    sigma: f64,
    grid: &[f64],
    net: &NetworkConfig,
    es: &EsConfig,
    selection: EpochSelection,
) -> Result<CalibrationOutcome> {
    if clean_images.is_empty() {
        return Err(Error::config("no calibration images"));
    }
    if grid.is_empty() {
        return Err(Error::config("lambda grid is empty"));
    }
    let traces = clean_images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let seeds = JobSeeds::new(es.seed, &calibration_image_id(i), sigma);
            Ok(run_noisy(img, sigma, true, seeds, net, es)?.trace)
        })
        .collect::<Result<Vec<_>>>()?;
    CalibrationRun::new(sigma, grid.to_vec(), selection, traces)?.evaluate()
}

/// Noise level to λ mapping, interpolated linearly in `(σ, ln λ)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LambdaTable {
    rows: Vec<(f64, f64)>,
}

impl LambdaTable {
    pub fn new(rows: Vec<(f64, f64)>) -> Result<Self> {
        if rows.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err(Error::input("lambda table sigmas must be strictly increasing"));
        }
        if rows.iter().any(|&(s, l)| !s.is_finite() || !(l > 0.0) || !l.is_finite()) {
            return Err(Error::input("lambda table entries must be finite with lambda > 0"));
        }
        Ok(LambdaTable { rows })
    }

    pub fn rows(&self) -> &[(f64, f64)] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Inserts a row, replacing any existing row with the same σ.
    pub fn upsert(&mut self, sigma: f64, lambda: f64) -> Result<()> {
        if !sigma.is_finite() || !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::input(format!(
                "cannot tabulate sigma {sigma}, lambda {lambda}: lambda must be positive"
            )));
        }
        match self.rows.binary_search_by(|r| r.0.total_cmp(&sigma)) {
            Ok(i) => self.rows[i].1 = lambda,
            Err(i) => self.rows.insert(i, (sigma, lambda)),
        }
        Ok(())
    }

    pub fn lambda_for_sigma(&self, sigma: f64) -> Result<f64> {
        lambda_for_sigma(self, sigma)
    }
}

/// Piecewise-linear in `(σ, ln λ)`, clamped at both ends.
pub fn lambda_for_sigma(table: &LambdaTable, sigma: f64) -> Result<f64> {
    let rows = &table.rows;
    let (first, last) = match (rows.first(), rows.last()) {
        (Some(f), Some(l)) => (*f, *l),
        _ => return Err(Error::config("lambda table is empty")),
    };
    if sigma <= first.0 {
        return Ok(first.1);
    }
    if sigma >= last.0 {
        return Ok(last.1);
    }
    let i = rows.partition_point(|r| r.0 <= sigma);
    let (s0, l0) = rows[i - 1];
    let (s1, l1) = rows[i];
    if sigma == s0 {
        return Ok(l0);
    }
    let t = (sigma - s0) / (s1 - s0);
    Ok(Float::exp(Float::ln(l0) * (1.0 - t) + Float::ln(l1) * t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn trace(losses: &[f64], bytes: &[usize], psnrs: &[f64]) -> EpochTrace {
        let mut t = EpochTrace::new(4, 4, 0.0);
        for i in 0..losses.len() {
            t.push(i + 1, losses[i], bytes[i], Some(psnrs[i])).unwrap();
        }
        t
    }

    #[test]
    fn single_point_grid() {
        let tr = trace(&[0.5, 0.4, 0.3], &[10, 20, 30], &[20.0, 21.0, 19.0]);
        let run = CalibrationRun::new(25.0, vec![3.5], EpochSelection::GlobalArgmin, vec![tr]).unwrap();
        assert_eq!(run.best().unwrap().lambda, 3.5);
    }

    #[test]
    fn zero_lambda_selects_smallest_size() {
        let tr = trace(&[0.5, 0.4, 0.3, 0.2], &[30, 12, 20, 40], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(select_row(&tr, 0.0, EpochSelection::GlobalArgmin).unwrap(), 1);
    }

    #[test]
    fn larger_lambda_prefers_lower_loss() {
        // R = bytes²/16: 6.25, 25, 56.25 ; loss 1.0, 0.5, 0.0
        let tr = trace(&[1.0, 0.5, 0.0], &[10, 20, 30], &[10.0, 30.0, 20.0]);
        let run = CalibrationRun::new(15.0, vec![0.0, 50.0, 1000.0], EpochSelection::GlobalArgmin, vec![tr]).unwrap();
        let s = run.scores().unwrap();
        assert_eq!(s.iter().map(|s| s.mean_psnr).collect::<Vec<_>>(), vec![10.0, 30.0, 20.0]);
        assert_eq!(run.best().unwrap().lambda, 50.0);
    }

    #[test]
    fn run_validation() {
        let a = trace(&[1.0, 0.5], &[10, 20], &[1.0, 2.0]);
        let b = trace(&[1.0], &[10], &[1.0]);
        assert!(CalibrationRun::new(1.0, vec![], EpochSelection::GlobalArgmin, vec![a.clone()]).is_err());
        assert!(CalibrationRun::new(1.0, vec![1.0], EpochSelection::GlobalArgmin, vec![]).is_err());
        assert!(CalibrationRun::new(1.0, vec![1.0], EpochSelection::GlobalArgmin, vec![a, b]).is_err());
    }

    #[test]
    fn interpolation_rules() {
        let t = LambdaTable::new(vec![(10.0, 100.0), (30.0, 10_000.0)]).unwrap();
        assert_eq!(t.lambda_for_sigma(10.0).unwrap(), 100.0);
        assert_eq!(t.lambda_for_sigma(30.0).unwrap(), 10_000.0);
        assert!((t.lambda_for_sigma(20.0).unwrap() - 1000.0).abs() < 1e-9);
        assert_eq!(t.lambda_for_sigma(1.0).unwrap(), 100.0);
        assert_eq!(t.lambda_for_sigma(99.0).unwrap(), 10_000.0);
        assert!(LambdaTable::default().lambda_for_sigma(5.0).is_err());
    }

    #[test]
    fn table_invariants_and_upsert() {
        assert!(LambdaTable::new(vec![(10.0, 1.0), (10.0, 2.0)]).is_err());
        assert!(LambdaTable::new(vec![(10.0, 0.0)]).is_err());
        let mut t = LambdaTable::default();
        t.upsert(25.0, 3.0).unwrap();
        t.upsert(15.0, 2.0).unwrap();
        t.upsert(25.0, 5.0).unwrap();
        assert_eq!(t.rows(), &[(15.0, 2.0), (25.0, 5.0)]);
        assert!(t.upsert(50.0, 0.0).is_err());
    }

    #[test]
    fn log_grid_spacing() {
        let g = log_grid(-2, 4);
        assert_eq!(g.len(), 13);
        assert!((g[0] - 0.01).abs() < 1e-15);
        assert!((g[12] - 1e4).abs() < 1e-9);
    }
}
