//! Semi-supervised self-learning loop for the segment classifier.
//!
//! After a warm-up of plain cross-entropy on the inherited labels, every
//! epoch re-scores the training set, splits it into a clean labeled part and
//! a noisy unlabeled part (see [`crate::partition`]), replaces the noisy
//! labels with sharpened predictions, and optimises
//! `L_MIX + λ·L_KL` over mixed pairs plus a dropout-consistency term on the
//! unlabeled samples. `baseline` mode trains plain cross-entropy throughout.

pub mod mixing;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::SegmentSet;
use crate::nn::{
    self, loss, rng_from_seed, ModelParams, NetworkConfig, NnError, RngState, Sgd, Tensor,
};
use crate::partition::{self, LossRecord, PartitionConfig, PartitionError, PartitionResult};

pub use mixing::{
    make_pseudo_labeled, mix_loss, mix_loss_two_term, mixup, rdrop_kl_loss, sample_delta, sharpen,
    total_loss, SoftLabel,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("not a probability vector: {0:?}")]
    InvalidSoftLabel(Vec<f64>),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
}

/// When sharpened pseudo-labels for the unlabeled set are recomputed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PseudoRefresh {
    Epoch,
    Batch,
}

impl FromStr for PseudoRefresh {
    type Err = TrainError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "epoch" => Ok(Self::Epoch),
            "batch" => Ok(Self::Batch),
            other => Err(TrainError::InvalidConfig(format!(
                "pseudo_refresh `{other}`"
            ))),
        }
    }
}

impl fmt::Display for PseudoRefresh {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Epoch => "epoch",
            Self::Batch => "batch",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warm_up_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Fractions of `epochs` after which the learning rate is multiplied by `lr_decay`.
    pub lr_milestones: Vec<f64>,
    pub lr_decay: f64,
    pub temperature: f64,
    pub tau: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub baseline: bool,
    pub pseudo_refresh: PseudoRefresh,
    pub gmm_max_iter: usize,
    pub gmm_tol: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            warm_up_epochs: 5,
            batch_size: 64,
            lr: 0.01,
            momentum: 0.9,
            lr_milestones: vec![0.6, 0.8],
            lr_decay: 0.1,
            temperature: 0.5,
            tau: partition::DEFAULT_TAU,
            lambda: 1.0,
            alpha: 0.75,
            baseline: false,
            pseudo_refresh: PseudoRefresh::Epoch,
            gmm_max_iter: partition::DEFAULT_MAX_ITER,
            gmm_tol: partition::DEFAULT_TOL,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.warm_up_epochs > self.epochs {
            return bad(format!(
                "warm_up_epochs {} exceeds epochs {}",
                self.warm_up_epochs, self.epochs
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!(
                "temperature must be positive, got {}",
                self.temperature
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau must be in [0, 1], got {}", self.tau));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite())
            || self.lr_milestones.iter().any(|m| !(0.0..=1.0).contains(m))
        {
            return bad("lr schedule milestones must lie in [0, 1] with a positive decay".into());
        }
        Ok(())
    }

    /// Step-decayed learning rate for a zero-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self
            .lr_milestones
            .iter()
            .filter(|&&m| epoch >= (m * self.epochs as f64).floor() as usize)
            .count();
        self.lr * self.lr_decay.powi(passed as i32)
    }

    pub fn partition_config(&self) -> PartitionConfig {
        PartitionConfig {
            tau: self.tau,
            max_iter: self.gmm_max_iter,
            tol: self.gmm_tol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Baseline,
    Warmup,
    /// Partition produced an empty clean set; the epoch ran as warm-up.
    Fallback,
    Sssl,
}

/// One line of training metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub phase: Phase,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clean: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noisy: Option<usize>,
    pub l_mix: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_kl: Option<f64>,
    pub total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub held_out_acc: Option<f64>,
}

/// State handed to the per-epoch observer.
pub struct EpochSnapshot<'a> {
    pub report: &'a EpochReport,
    pub params: &'a ModelParams,
    pub losses: Option<&'a [LossRecord]>,
    pub partition: Option<&'a PartitionResult>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub reports: Vec<EpochReport>,
}

/// Accuracy of `argmax` predictions against the set's labels, dropout off.
pub fn accuracy(
    params: &ModelParams,
    net: &NetworkConfig,
    data: &SegmentSet,
    batch_size: usize,
) -> Result<f64, TrainError> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let preds = predict_classes(params, net, data, batch_size)?;
    let hits = preds
        .iter()
        .zip(&data.labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / data.len() as f64)
}

/// Per-segment class probabilities in storage order, dropout off.
pub fn predict_probs(
    params: &ModelParams,
    net: &NetworkConfig,
    data: &SegmentSet,
    batch_size: usize,
) -> Result<Vec<Vec<f64>>, TrainError> {
    use rayon::prelude::*;
    let idx: Vec<usize> = (0..data.len()).collect();
    let chunks: Vec<Vec<Vec<f64>>> = idx
        .par_chunks(batch_size.max(1))
        .map(|chunk| -> Result<Vec<Vec<f64>>, NnError> {
            let p = nn::predict(params, net, &data.batch(chunk)?)?;
            Ok((0..chunk.len()).map(|r| p.row(r).to_vec()).collect())
        })
        .collect::<Result<_, _>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

pub fn predict_classes(
    params: &ModelParams,
    net: &NetworkConfig,
    data: &SegmentSet,
    batch_size: usize,
) -> Result<Vec<usize>, TrainError> {
    Ok(predict_probs(params, net, data, batch_size)?
        .iter()
        .map(|p| mixing::argmax(p))
        .collect())
}

/// Trains a segment classifier. `observe` is called after every epoch.
pub fn train<F>(
    cfg: &TrainConfig,
    net: &NetworkConfig,
    data: &SegmentSet,
    held_out: Option<&SegmentSet>,
    mut observe: F,
) -> Result<TrainOutcome, TrainError>
where
    F: FnMut(&EpochSnapshot<'_>),
{
    cfg.validate()?;
    net.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    if data.sample_shape != net.input_shape || data.classes != net.classes {
        return Err(TrainError::ShapeMismatch(format!(
            "data {:?} with {} classes vs network {:?} with {} classes",
            data.sample_shape, data.classes, net.input_shape, net.classes
        )));
    }
    if !cfg.baseline && cfg.lambda > 0.0 && !net.has_dropout() {
        log::warn!("network has no active dropout; the consistency term is identically zero");
    }
    let mut rng = rng_from_seed(cfg.seed);
    let mut params = ModelParams::init(net, &mut rng)?;
    let mut opt = Sgd::new(cfg.momentum)?;
    let mut reports = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let plain = cfg.baseline || epoch < cfg.warm_up_epochs;
        let mut losses = None;
        let mut split = None;
        let mut report = if plain {
            let l = plain_epoch(
                &mut params,
                &mut opt,
                net,
                data,
                cfg.batch_size,
                lr,
                &mut rng,
            )?;
            EpochReport {
                epoch,
                phase: if cfg.baseline {
                    Phase::Baseline
                } else {
                    Phase::Warmup
                },
                lr,
                clean: None,
                noisy: None,
                l_mix: l,
                l_kl: None,
                total: l,
                held_out_acc: None,
            }
        } else {
            let records = partition::per_sample_losses(&params, net, data, cfg.batch_size)?;
            let (part, _) = partition::partition_losses(&records, &cfg.partition_config())?;
            let report = if part.clean_ids.is_empty() {
                log::warn!(
                    "epoch {epoch}: partition left no clean samples; running a warm-up epoch"
                );
                let l = plain_epoch(
                    &mut params,
                    &mut opt,
                    net,
                    data,
                    cfg.batch_size,
                    lr,
                    &mut rng,
                )?;
                EpochReport {
                    epoch,
                    phase: Phase::Fallback,
                    lr,
                    clean: Some(0),
                    noisy: Some(part.noisy_ids.len()),
                    l_mix: l,
                    l_kl: None,
                    total: l,
                    held_out_acc: None,
                }
            } else {
                let (l_mix, l_kl) =
                    sssl_epoch(&mut params, &mut opt, cfg, net, data, &part, lr, &mut rng)?;
                EpochReport {
                    epoch,
                    phase: Phase::Sssl,
                    lr,
                    clean: Some(part.clean_ids.len()),
                    noisy: Some(part.noisy_ids.len()),
                    l_mix,
                    l_kl: Some(l_kl),
                    total: total_loss(l_mix, l_kl, cfg.lambda),
                    held_out_acc: None,
                }
            };
            losses = Some(records);
            split = Some(part);
            report
        };
        if let Some(h) = held_out {
            report.held_out_acc = Some(accuracy(&params, net, h, cfg.batch_size)?);
        }
        log::info!(
            "epoch {epoch} {:?}: total {:.4} held-out {:?}",
            report.phase,
            report.total,
            report.held_out_acc
        );
        observe(&EpochSnapshot {
            report: &report,
            params: &params,
            losses: losses.as_deref(),
            partition: split.as_ref(),
        });
        reports.push(report);
    }
    Ok(TrainOutcome { params, reports })
}

/// One epoch of plain cross-entropy on the inherited labels; returns the mean loss.
fn plain_epoch(
    params: &mut ModelParams,
    opt: &mut Sgd,
    net: &NetworkConfig,
    data: &SegmentSet,
    batch_size: usize,
    lr: f64,
    rng: &mut RngState,
) -> Result<f64, TrainError> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut sum = 0.0;
    for chunk in order.chunks(batch_size) {
        let x = data.batch(chunk)?;
        let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
        let y = loss::one_hot(&labels, net.classes);
        let (probs, cache) = nn::forward(params, net, &x, true, rng)?;
        let (l, dlogits) = loss::cross_entropy_with_grad(&probs, &y)?;
        let grads = nn::backward(params, net, &cache, &dlogits)?;
        opt.step(params, &grads, lr)?;
        sum += l * chunk.len() as f64;
    }
    Ok(sum / data.len() as f64)
}

/// One partitioned epoch; returns `(mean L_MIX, mean L_KL)`.
#[allow(clippy::too_many_arguments)]
fn sssl_epoch(
    params: &mut ModelParams,
    opt: &mut Sgd,
    cfg: &TrainConfig,
    net: &NetworkConfig,
    data: &SegmentSet,
    part: &PartitionResult,
    lr: f64,
    rng: &mut RngState,
) -> Result<(f64, f64), TrainError> {
    let k = net.classes;
    // Labeled samples keep their inherited one-hot labels; unlabeled ones get
    // sharpened predictions.
    let mut pool: Vec<(usize, SoftLabel)> = part
        .clean_ids
        .iter()
        .map(|&i| (i, SoftLabel::one_hot(data.labels[i], k)))
        .collect();
    let first_unlabeled = pool.len();
    pool.extend(make_pseudo_labeled(
        params,
        net,
        data,
        &part.noisy_ids,
        cfg.temperature,
        cfg.batch_size,
    )?);
    let mut unlabeled_flag = vec![false; pool.len()];
    unlabeled_flag[first_unlabeled..].fill(true);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(rng);
    let mut kl_order = part.noisy_ids.clone();
    kl_order.shuffle(rng);
    let mut kl_cursor = 0;
    let use_kl = cfg.lambda > 0.0 && !kl_order.is_empty();

    let n = order.len();
    let (mut mix_sum, mut kl_sum, mut kl_count) = (0.0, 0.0, 0usize);
    for start in (0..n).step_by(cfg.batch_size) {
        let end = (start + cfg.batch_size).min(n);
        if cfg.pseudo_refresh == PseudoRefresh::Batch {
            let mut stale: Vec<usize> = (start..=end)
                .map(|j| order[j % n])
                .filter(|&p| unlabeled_flag[p])
                .collect();
            stale.sort_unstable();
            stale.dedup();
            let ids: Vec<usize> = stale.iter().map(|&p| pool[p].0).collect();
            let fresh =
                make_pseudo_labeled(params, net, data, &ids, cfg.temperature, cfg.batch_size)?;
            for (p, (_, label)) in stale.into_iter().zip(fresh) {
                pool[p].1 = label;
            }
        }
        let bsz = end - start;
        let mut xs = Vec::with_capacity(bsz * data.sample_len());
        let mut ys = Vec::with_capacity(bsz * k);
        for j in start..end {
            let (a, b) = (&pool[order[j]], &pool[order[(j + 1) % n]]);
            let delta = sample_delta(cfg.alpha, rng)?;
            let (x, y) = mixup((data.feature(a.0), &a.1), (data.feature(b.0), &b.1), delta)?;
            xs.extend_from_slice(&x);
            ys.extend_from_slice(y.probs());
        }
        let mut shape = vec![bsz];
        shape.extend_from_slice(&data.sample_shape);
        let x = Tensor::new(shape, xs)?;
        let y = Tensor::new(vec![bsz, k], ys)?;
        let (probs, cache) = nn::forward(params, net, &x, true, rng)?;
        let (l_mix, dlogits) = loss::cross_entropy_with_grad(&probs, &y)?;
        let mut grads = nn::backward(params, net, &cache, &dlogits)?;
        mix_sum += l_mix * bsz as f64;

        if use_kl {
            let take = cfg.batch_size.min(kl_order.len());
            let ids: Vec<usize> = (0..take)
                .map(|t| kl_order[(kl_cursor + t) % kl_order.len()])
                .collect();
            kl_cursor = (kl_cursor + take) % kl_order.len();
            let xu = data.batch(&ids)?;
            let (p1, c1) = nn::forward(params, net, &xu, true, rng)?;
            let (p2, c2) = nn::forward(params, net, &xu, true, rng)?;
            let (l_kl, g1, g2) = loss::symmetric_kl_with_grad(&p1, &p2)?;
            grads.add_scaled(&nn::backward(params, net, &c1, &g1)?, cfg.lambda);
            grads.add_scaled(&nn::backward(params, net, &c2, &g2)?, cfg.lambda);
            kl_sum += l_kl;
            kl_count += 1;
        }
        opt.step(params, &grads, lr)?;
    }
    let l_kl = if kl_count > 0 {
        kl_sum / kl_count as f64
    } else {
        0.0
    };
    Ok((mix_sum / n as f64, l_kl))
}
