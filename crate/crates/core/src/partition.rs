//! Loss-based clean/noisy split.
//!
//! Per-sample cross-entropy losses are min-max normalised and modelled by a
//! two-component 1-D Gaussian mixture fitted with EM. The posterior of the
//! low-mean component is the probability that a sample's label is clean;
//! thresholding it splits the training set into a labeled part and an
//! unlabeled part.

use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::SegmentSet;
use crate::nn::{loss, predict, ModelParams, NetworkConfig, NnError};

pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;
/// Fewest losses [`fit_gmm_em`] accepts.
pub const MIN_SAMPLES: usize = 10;

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("no samples to score")]
    Empty,
    #[error("need at least {MIN_SAMPLES} losses to fit a mixture, got {0}")]
    TooFew(usize),
    #[error("{0} posteriors for {1} ids")]
    LengthMismatch(usize, usize),
    #[error("non-finite loss at sample {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub sample_id: usize,
    pub loss: f64,
}

/// Unreduced cross-entropy of every sample against its current label, dropout off.
pub fn per_sample_losses(
    params: &ModelParams,
    cfg: &NetworkConfig,
    data: &SegmentSet,
    batch_size: usize,
) -> Result<Vec<LossRecord>, PartitionError> {
    if data.is_empty() {
        return Err(PartitionError::Empty);
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let chunks: Vec<Vec<f64>> = idx
        .par_chunks(batch_size.max(1))
        .map(|chunk| -> Result<Vec<f64>, NnError> {
            let probs = predict(params, cfg, &data.batch(chunk)?)?;
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            loss::per_sample_cross_entropy(&probs, &loss::one_hot(&labels, cfg.classes))
        })
        .collect::<Result<_, _>>()?;
    Ok(chunks
        .into_iter()
        .flatten()
        .enumerate()
        .map(|(sample_id, loss)| LossRecord { sample_id, loss })
        .collect())
}

/// Affine map of the losses onto `[0, 1]`. Constant input maps to 0.5 and
/// sets the returned degeneracy flag.
pub fn normalize_losses(losses: &[f64]) -> (Vec<f64>, bool) {
    let lo = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if losses.is_empty() || hi <= lo {
        return (vec![0.5; losses.len()], true);
    }
    let span = hi - lo;
    (losses.iter().map(|l| (l - lo) / span).collect(), false)
}

/// Two-component 1-D Gaussian mixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gmm2 {
    pub means: [f64; 2],
    pub variances: [f64; 2],
    pub weights: [f64; 2],
}

impl Gmm2 {
    fn log_joint(&self, k: usize, x: f64) -> f64 {
        let var = self.variances[k];
        self.weights[k].ln()
            - 0.5 * (2.0 * std::f64::consts::PI * var).ln()
            - (x - self.means[k]).powi(2) / (2.0 * var)
    }

    pub fn log_density(&self, x: f64) -> f64 {
        log_add(self.log_joint(0, x), self.log_joint(1, x))
    }

    /// Mean log-likelihood of the data under the mixture.
    pub fn mean_log_likelihood(&self, xs: &[f64]) -> f64 {
        xs.iter().map(|&x| self.log_density(x)).sum::<f64>() / xs.len() as f64
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub gmm: Gmm2,
    /// Mean log-likelihood at initialisation followed by one entry per EM iteration.
    pub log_likelihoods: Vec<f64>,
    pub iterations: usize,
    /// All inputs identical: the mixture collapsed onto a single point.
    pub degenerate: bool,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Fits a two-component mixture by EM, starting from the 25th/75th
/// percentiles with the global variance and equal weights. Stops when the
/// mean log-likelihood improves by less than `tol` or after `max_iter`
/// iterations. Components are returned with ascending means.
pub fn fit_gmm_em(xs: &[f64], max_iter: usize, tol: f64) -> Result<GmmFit, PartitionError> {
    if xs.len() < MIN_SAMPLES {
        return Err(PartitionError::TooFew(xs.len()));
    }
    if let Some(i) = xs.iter().position(|x| !x.is_finite()) {
        return Err(PartitionError::NonFinite(i));
    }
    let n = xs.len() as f64;
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if sorted[0] == sorted[sorted.len() - 1] {
        let gmm = Gmm2 {
            means: [sorted[0]; 2],
            variances: [VARIANCE_FLOOR; 2],
            weights: [0.5; 2],
        };
        return Ok(GmmFit {
            gmm,
            log_likelihoods: vec![gmm.mean_log_likelihood(xs)],
            iterations: 0,
            degenerate: true,
        });
    }
    let mut gmm = Gmm2 {
        means: [percentile(&sorted, 0.25), percentile(&sorted, 0.75)],
        variances: [var.max(VARIANCE_FLOOR); 2],
        weights: [0.5; 2],
    };
    let mut history = vec![gmm.mean_log_likelihood(xs)];
    let mut resp = vec![0.0; xs.len()];
    let mut iterations = 0;
    while iterations < max_iter {
        // E-step: responsibility of component 0.
        for (r, &x) in resp.iter_mut().zip(xs) {
            let a = gmm.log_joint(0, x);
            let b = gmm.log_joint(1, x);
            *r = (a - log_add(a, b)).exp();
        }
        // M-step.
        let n0: f64 = resp.iter().sum();
        let n1 = n - n0;
        let mut next = gmm;
        for (k, nk) in [(0usize, n0), (1, n1)] {
            if nk <= f64::MIN_POSITIVE {
                continue;
            }
            let w = |r: f64| if k == 0 { r } else { 1.0 - r };
            let mu = resp.iter().zip(xs).map(|(&r, &x)| w(r) * x).sum::<f64>() / nk;
            let v = resp
                .iter()
                .zip(xs)
                .map(|(&r, &x)| w(r) * (x - mu).powi(2))
                .sum::<f64>()
                / nk;
            next.means[k] = mu;
            next.variances[k] = v.max(VARIANCE_FLOOR);
            next.weights[k] = nk / n;
        }
        let wsum = next.weights[0] + next.weights[1];
        next.weights = [next.weights[0] / wsum, next.weights[1] / wsum];
        gmm = next;
        iterations += 1;
        let ll = gmm.mean_log_likelihood(xs);
        let gain = ll - history.last().unwrap();
        history.push(ll);
        if gain < tol {
            break;
        }
    }
    if gmm.means[0] > gmm.means[1] {
        gmm.means.swap(0, 1);
        gmm.variances.swap(0, 1);
        gmm.weights.swap(0, 1);
    }
    Ok(GmmFit {
        gmm,
        log_likelihoods: history,
        iterations,
        degenerate: false,
    })
}

/// Posterior probability that `loss` belongs to the low-mean component.
pub fn clean_posterior(g: &Gmm2, loss: f64) -> f64 {
    let a = g.log_joint(0, loss);
    let b = g.log_joint(1, loss);
    (a - log_add(a, b)).exp().clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionResult {
    pub clean_ids: Vec<usize>,
    pub noisy_ids: Vec<usize>,
    pub posteriors: Vec<f64>,
    pub threshold: f64,
}

/// `ω > τ` goes to the clean (labeled) set, everything else to the noisy set.
pub fn partition(
    ids: &[usize],
    posteriors: &[f64],
    tau: f64,
) -> Result<PartitionResult, PartitionError> {
    if ids.len() != posteriors.len() {
        return Err(PartitionError::LengthMismatch(posteriors.len(), ids.len()));
    }
    let (mut clean_ids, mut noisy_ids) = (Vec::new(), Vec::new());
    for (&id, &w) in ids.iter().zip(posteriors) {
        if w > tau {
            clean_ids.push(id);
        } else {
            noisy_ids.push(id);
        }
    }
    Ok(PartitionResult {
        clean_ids,
        noisy_ids,
        posteriors: posteriors.to_vec(),
        threshold: tau,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionConfig {
    pub tau: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
        }
    }
}

/// Full split from raw losses. Too few or identical losses put every sample
/// in the clean set (`ω = 1`) and yield no mixture.
pub fn partition_losses(
    records: &[LossRecord],
    cfg: &PartitionConfig,
) -> Result<(PartitionResult, Option<GmmFit>), PartitionError> {
    let ids: Vec<usize> = records.iter().map(|r| r.sample_id).collect();
    let raw: Vec<f64> = records.iter().map(|r| r.loss).collect();
    let (norm, flat) = normalize_losses(&raw);
    if flat || norm.len() < MIN_SAMPLES {
        log::warn!("loss distribution degenerate; treating all samples as clean");
        return Ok((partition(&ids, &vec![1.0; ids.len()], cfg.tau)?, None));
    }
    let fit = fit_gmm_em(&norm, cfg.max_iter, cfg.tol)?;
    let omega: Vec<f64> = norm.iter().map(|&l| clean_posterior(&fit.gmm, l)).collect();
    Ok((partition(&ids, &omega, cfg.tau)?, Some(fit)))
}

/// Writes `sample_id,loss,omega,assigned_set` rows for offline inspection.
pub fn write_diagnostics<W: Write>(
    w: &mut W,
    records: &[LossRecord],
    result: &PartitionResult,
) -> std::io::Result<()> {
    writeln!(w, "sample_id,loss,omega,assigned_set")?;
    for (r, &omega) in records.iter().zip(&result.posteriors) {
        let set = if omega > result.threshold {
            "clean"
        } else {
            "noisy"
        };
        writeln!(w, "{},{},{},{}", r.sample_id, r.loss, omega, set)?;
    }
    Ok(())
}
