//! Compressed-size early stopping for deep-image-prior denoising.
//!
//! Every epoch records the reconstruction loss `𝓛`, the JPEG byte count `L` of
//! the current output, the regularizer `R = L² / (H·W)` and the criterion
//! `E = λ·𝓛 + R`. After the run, the stopping epoch is the earliest epoch whose
//! criterion is not exceeded anywhere in the following `S` epochs.

use alloc::boxed::Box;
use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adam::{AdamConfig, AdamState};
use crate::autograd::Tape;
use crate::dip::{build_network, sample_latent, NetworkConfig};
use crate::error::{Diverged, Error, Result};
use crate::image::Image;
use crate::jpeg::{cifs, JpegConfig};
use crate::metrics::psnr;
use crate::seed;

/// `R(L) = L² / (H·W)`.
pub fn regularizer(bytes: usize, height: usize, width: usize) -> Result<f64> {
    if height == 0 || width == 0 {
        return Err(Error::config(format!(
            "regularizer needs positive image dimensions, got {height}x{width}"
        )));
    }
    let l = bytes as f64;
    Ok(l * l / (height as f64 * width as f64))
}

/// `E = λ·loss + reg`.
#[inline]
pub fn criterion(lambda: f64, loss: f64, reg: f64) -> f64 {
    lambda * loss + reg
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Detection {
    /// Qualifying epochs, 1-based and ascending.
    pub candidates: Vec<usize>,
    pub t_star: usize,
    /// Set when no epoch qualified and `t_star` fell back to the last epoch.
    pub fallback: bool,
}

/// Finds every 1-based `t` with `t + S ≤ T` and `M(t) ≤ M(τ)` for all
/// `τ ∈ [t, t + S]`, where `T = metric.len()`.
///
/// Runs in O(T) with a monotone deque over the window `(t, t + S]`.
pub fn detect_es(metric: &[f64], patience: usize) -> Result<Detection> {
    let total = metric.len();
    if patience == 0 {
        return Err(Error::config("patience S must be >= 1"));
    }
    if total <= patience {
        return Err(Error::config(format!(
            "need more than S = {patience} epochs to detect, got {total}"
        )));
    }
    // indices (0-based) of the window, values increasing from front to back
    let mut window: VecDeque<usize> = VecDeque::with_capacity(patience + 1);
    let mut candidates = Vec::new();
    // walk t from the last eligible index down to 0, window = (t, t + S]
    let last = total - 1 - patience;
    for j in (last + 1..total).rev() {
        while window.back().is_some_and(|&b| metric[b] >= metric[j]) {
            window.pop_back();
        }
        window.push_back(j);
    }
    for t in (0..=last).rev() {
        while window.front().is_some_and(|&f| f > t + patience) {
            window.pop_front();
        }
        let min_after = metric[*window.front().expect("window holds S entries")];
        if metric[t] <= min_after {
            candidates.push(t + 1);
        }
        while window.back().is_some_and(|&b| metric[b] >= metric[t]) {
            window.pop_back();
        }
        window.push_back(t);
    }
    candidates.reverse();
    Ok(match candidates.first() {
        Some(&t_star) => Detection {
            t_star,
            candidates,
            fallback: false,
        },
        None => Detection {
            candidates,
            t_star: total,
            fallback: true,
        },
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EsConfig {
    pub lambda: f64,
    /// Total epochs T (one optimizer step each).
    pub epochs: usize,
    /// Patience window S.
    pub patience: usize,
    pub jpeg: JpegConfig,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Evaluate the criterion on epochs that are multiples of this.
    pub stride: usize,
}

impl Default for EsConfig {
    fn default() -> Self {
        EsConfig {
            lambda: 1.0,
            epochs: 20_000,
            patience: 1_000,
            jpeg: JpegConfig::default(),
            adam: AdamConfig::default(),
            seed: 0,
            stride: 1,
        }
    }
}

impl EsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if self.patience == 0 {
            return Err(Error::config("patience S must be >= 1"));
        }
        if self.epochs < self.patience + 1 {
            return Err(Error::config(format!(
                "epochs T = {} must be at least S + 1 = {}",
                self.epochs,
                self.patience + 1
            )));
        }
        if self.stride == 0 || self.epochs % self.stride != 0 || self.patience % self.stride != 0 {
            return Err(Error::config(format!(
                "stride {} must be >= 1 and divide both T = {} and S = {}",
                self.stride, self.epochs, self.patience
            )));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub epoch: usize,
    pub loss: f64,
    pub cifs_bytes: usize,
    pub regularizer: f64,
    pub criterion: f64,
    pub psnr: Option<f64>,
}

/// Per-epoch record of one run. `lambda` is the weight used for `criterion`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochTrace {
    pub height: usize,
    pub width: usize,
    pub lambda: f64,
    pub rows: Vec<TraceRow>,
}

impl EpochTrace {
    pub fn new(height: usize, width: usize, lambda: f64) -> Self {
        EpochTrace {
            height,
            width,
            lambda,
            rows: Vec::new(),
        }
    }

    /// Appends a row for `epoch`, deriving `R` and `E` from `loss` and `bytes`.
    pub fn push(&mut self, epoch: usize, loss: f64, bytes: usize, psnr: Option<f64>) -> Result<&TraceRow> {
        let reg = regularizer(bytes, self.height, self.width)?;
        self.rows.push(TraceRow {
            epoch,
            loss,
            cifs_bytes: bytes,
            regularizer: reg,
            criterion: criterion(self.lambda, loss, reg),
            psnr,
        });
        Ok(self.rows.last().expect("just pushed"))
    }

    /// The criterion recomputed from the stored loss and byte counts.
    pub fn criterion_series(&self, lambda: f64) -> Result<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| Ok(criterion(lambda, r.loss, regularizer(r.cifs_bytes, self.height, self.width)?)))
            .collect()
    }

    pub fn psnr_series(&self) -> Option<Vec<f64>> {
        self.rows.iter().map(|r| r.psnr).collect()
    }

    /// Epochs between consecutive rows.
    pub fn stride(&self) -> usize {
        match self.rows.as_slice() {
            [a, b, ..] => b.epoch - a.epoch,
            _ => 1,
        }
    }

    /// Runs [`detect_es`] on the recomputed criterion. `patience` is in
    /// epochs and is converted to rows for strided traces.
    pub fn detect(&self, lambda: f64, patience: usize) -> Result<Detection> {
        let stride = self.stride();
        if patience % stride != 0 {
            return Err(Error::config(format!(
                "patience {patience} is not a multiple of the trace stride {stride}"
            )));
        }
        let d = detect_es(&self.criterion_series(lambda)?, patience / stride)?;
        let epoch = |i: usize| self.rows[i - 1].epoch;
        Ok(Detection {
            candidates: d.candidates.iter().map(|&i| epoch(i)).collect(),
            t_star: epoch(d.t_star),
            fallback: d.fallback,
        })
    }

    pub fn row_for_epoch(&self, epoch: usize) -> Option<&TraceRow> {
        let stride = self.stride();
        let first = self.rows.first()?.epoch;
        if epoch < first || (epoch - first) % stride != 0 {
            return None;
        }
        self.rows.get((epoch - first) / stride).filter(|r| r.epoch == epoch)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EsResult {
    pub candidates: Vec<usize>,
    pub t_star: usize,
    pub fallback: bool,
    /// Network output at `t_star`.
    pub image: Image,
}

/// PSNR against the clean image, available in benchmark mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PsnrSummary {
    pub at_t_star: f64,
    /// PSNR at the final epoch.
    pub no_es: f64,
    /// Maximum PSNR over the run.
    pub peak: f64,
    pub peak_epoch: usize,
}

#[derive(Clone, Debug)]
pub struct DipOutcome {
    pub trace: EpochTrace,
    pub result: EsResult,
    pub final_image: Image,
    pub psnr: Option<PsnrSummary>,
}

/// Fits the network to `x0` for `es.epochs` iterations and detects the stopping
/// epoch on the recorded criterion. With `clean`, per-epoch PSNR is recorded.
pub fn run_dip_with_es(x0: &Image, net: &NetworkConfig, es: &EsConfig, clean: Option<&Image>) -> Result<DipOutcome> {
    run_dip_with_es_observed(x0, net, es, clean, |_| {})
}

/// [`run_dip_with_es`] with a callback invoked after each recorded row.
pub fn run_dip_with_es_observed(
    x0: &Image,
    net_config: &NetworkConfig,
    es: &EsConfig,
    clean: Option<&Image>,
    mut observe: impl FnMut(&TraceRow),
) -> Result<DipOutcome> {
    es.validate()?;
    net_config.validate()?;
    // unclamped noisy targets may leave [0, 1]; the sigmoid output cannot
    if x0.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::input("noisy image has non-finite values"));
    }
    if net_config.output_channels != x0.channels() {
        return Err(Error::config(format!(
            "network produces {} channels but the image has {}",
            net_config.output_channels,
            x0.channels()
        )));
    }
    if let Some(c) = clean {
        if !c.same_shape(x0) {
            return Err(Error::input("clean and noisy images differ in shape"));
        }
    }
    let (h, w) = (x0.height(), x0.width());
    net_config.check_spatial(h, w)?;

    let mut net = build_network::<f32>(net_config, seed::derive(es.seed, "network"))?;
    let latent = sample_latent::<f32>(net_config.input_depth, h, w, seed::derive(es.seed, "latent"))?
        .with_perturbation(net_config.perturb_std);
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(es.seed, "perturb"));
    let mut adam = AdamState::new(es.adam, &net.params);
    let target = x0.to_tensor();

    let mut trace = EpochTrace::new(h, w, es.lambda);
    // running minimum of E, frozen once it has survived S epochs
    let mut best: Option<(f64, usize, Image)> = None;
    let mut frozen = false;
    let mut last_output = None;

    for epoch in 1..=es.epochs {
        let mut tape = Tape::new();
        let out = net.forward(&mut tape, latent.perturbed(&mut rng))?;
        let tgt = tape.constant(target.clone());
        let loss = tape.mse_loss(out, tgt)?;
        let loss_value = tape.value(loss).data()[0] as f64;
        if !loss_value.is_finite() {
            return Err(Error::Diverged(Box::new(Diverged {
                epoch,
                what: "loss",
                trace,
            })));
        }
        let evaluate = epoch % es.stride == 0;
        let output = (evaluate || epoch == es.epochs).then(|| Image::from_tensor(tape.value(out)));
        let grads = tape.backward(loss)?;
        net.params.absorb(&grads);
        adam.step(&mut net.params)?;

        let Some(output) = output.transpose()? else {
            continue;
        };
        if evaluate {
            let bytes = cifs(&output, &es.jpeg)?;
            let p = clean.map(|c| psnr(c, &output)).transpose()?;
            let row = trace.push(epoch, loss_value, bytes, p)?;
            observe(row);
            let e = row.criterion;
            if !frozen {
                // the earliest candidate is a strict running minimum that no
                // later value undercuts within S epochs
                if best.as_ref().is_none_or(|(b, _, _)| e < *b) {
                    best = Some((e, epoch, output.clone()));
                }
                if best.as_ref().is_some_and(|(_, b, _)| epoch >= b + es.patience) {
                    frozen = true;
                }
            }
        }
        if epoch == es.epochs {
            last_output = Some(output);
        }
    }

    let detection = trace.detect(es.lambda, es.patience)?;
    let final_image = last_output.expect("final epoch is always evaluated");
    let image = match &best {
        Some((_, epoch, img)) if frozen && *epoch == detection.t_star => img.clone(),
        _ if detection.t_star == es.epochs => final_image.clone(),
        _ => return Err(Error::state("detected epoch is not a running minimum of the criterion")),
    };
    let psnr = clean.map(|_| {
        let series = trace.psnr_series().expect("psnr recorded for every row");
        let (peak_idx, peak) = series
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, p)| if p > acc.1 { (i, p) } else { acc });
        PsnrSummary {
            at_t_star: trace.row_for_epoch(detection.t_star).and_then(|r| r.psnr).unwrap_or(f64::NAN),
            no_es: *series.last().expect("at least S + 1 rows"),
            peak,
            peak_epoch: trace.rows[peak_idx].epoch,
        }
    });
    Ok(DipOutcome {
        trace,
        result: EsResult {
            candidates: detection.candidates,
            t_star: detection.t_star,
            fallback: detection.fallback,
            image,
        },
        final_image,
        psnr,
    })
}
