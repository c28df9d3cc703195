//! Pseudo-labeling and mixup primitives.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;

use super::TrainError;
use crate::dataset::SegmentSet;
use crate::nn::{loss, predict, ModelParams, NetworkConfig, Tensor};

/// Row-stochastic tolerance for soft labels.
pub const STOCHASTIC_TOL: f64 = 1e-6;

/// Probability vector over classes.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabel(Vec<f64>);

impl SoftLabel {
    pub fn new(probs: Vec<f64>) -> Result<Self, TrainError> {
        let sum: f64 = probs.iter().sum();
        if probs.is_empty()
            || probs.iter().any(|p| !p.is_finite() || *p < 0.0)
            || (sum - 1.0).abs() > STOCHASTIC_TOL
        {
            return Err(TrainError::InvalidSoftLabel(probs));
        }
        Ok(Self(probs))
    }

    pub fn one_hot(class: usize, classes: usize) -> Self {
        let mut v = vec![0.0; classes];
        v[class] = 1.0;
        Self(v)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Temperature sharpening `p_k^{1/T} / Σ_j p_j^{1/T}`, evaluated in log
/// space so small temperatures do not underflow.
pub fn sharpen(p: &SoftLabel, temperature: f64) -> Result<SoftLabel, TrainError> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(TrainError::InvalidConfig(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if temperature == 1.0 {
        return Ok(p.clone());
    }
    let logs: Vec<f64> = p.0.iter().map(|v| v.ln() / temperature).collect();
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(SoftLabel(exps.into_iter().map(|e| e / z).collect()))
}

/// Sharpened model predictions for the unlabeled samples `ids`, dropout off.
/// Their original labels are not consulted.
pub fn make_pseudo_labeled(
    params: &ModelParams,
    cfg: &NetworkConfig,
    data: &SegmentSet,
    ids: &[usize],
    temperature: f64,
    batch_size: usize,
) -> Result<Vec<(usize, SoftLabel)>, TrainError> {
    let chunks: Vec<Vec<(usize, SoftLabel)>> = ids
        .par_chunks(batch_size.max(1))
        .map(|chunk| -> Result<Vec<(usize, SoftLabel)>, TrainError> {
            let probs = predict(params, cfg, &data.batch(chunk)?)?;
            chunk
                .iter()
                .enumerate()
                .map(|(r, &id)| Ok((id, sharpen(&SoftLabel(probs.row(r).to_vec()), temperature)?)))
                .collect()
        })
        .collect::<Result<_, _>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Draws `δ ~ Beta(α, α)` and folds it onto `[0.5, 1]` via `max(δ, 1 − δ)`.
pub fn sample_delta<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64, TrainError> {
    let beta = Beta::new(alpha, alpha)
        .map_err(|e| TrainError::InvalidConfig(format!("beta parameter {alpha}: {e}")))?;
    let d: f64 = beta.sample(rng);
    Ok(d.max(1.0 - d))
}

/// Convex combination `δ·a + (1 − δ)·b` of features and labels.
pub fn mixup(
    a: (&[f64], &SoftLabel),
    b: (&[f64], &SoftLabel),
    delta: f64,
) -> Result<(Vec<f64>, SoftLabel), TrainError> {
    if a.0.len() != b.0.len() || a.1 .0.len() != b.1 .0.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "cannot mix features {}/{} with labels {}/{}",
            a.0.len(),
            b.0.len(),
            a.1 .0.len(),
            b.1 .0.len()
        )));
    }
    if !(0.0..=1.0).contains(&delta) {
        return Err(TrainError::InvalidConfig(format!(
            "mixing weight {delta} outside [0, 1]"
        )));
    }
    let mix = |x: &[f64], y: &[f64]| -> Vec<f64> {
        x.iter()
            .zip(y)
            .map(|(p, q)| delta * p + (1.0 - delta) * q)
            .collect()
    };
    Ok((mix(a.0, b.0), SoftLabel(mix(&a.1 .0, &b.1 .0))))
}

/// Mixup loss in its label-side form: cross-entropy of the predictions on
/// mixed inputs against the mixed soft labels. This is the form used for
/// training; it equals [`mix_loss_two_term`] because cross-entropy is linear
/// in the label argument.
pub fn mix_loss(probs: &Tensor, mixed_labels: &Tensor) -> Result<f64, TrainError> {
    Ok(loss::cross_entropy(probs, mixed_labels)?)
}

/// Mixup loss as `mean_i δ_i·CE(p_i, y_p) + (1 − δ_i)·CE(p_i, y_q)`.
pub fn mix_loss_two_term(
    probs: &Tensor,
    labels_p: &Tensor,
    labels_q: &Tensor,
    deltas: &[f64],
) -> Result<f64, TrainError> {
    let lp = loss::per_sample_cross_entropy(probs, labels_p)?;
    let lq = loss::per_sample_cross_entropy(probs, labels_q)?;
    if deltas.len() != lp.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} mixing weights for {} samples",
            deltas.len(),
            lp.len()
        )));
    }
    if lp.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = lp
        .iter()
        .zip(&lq)
        .zip(deltas)
        .map(|((a, b), d)| d * a + (1.0 - d) * b)
        .sum();
    Ok(total / lp.len() as f64)
}

/// Dropout-consistency loss between two stochastic passes over the same batch.
pub fn rdrop_kl_loss(p1: &Tensor, p2: &Tensor) -> Result<f64, TrainError> {
    Ok(loss::symmetric_kl(p1, p2)?)
}

/// `L_MIX + λ·L_KL`.
pub fn total_loss(l_mix: f64, l_kl: f64, lambda: f64) -> f64 {
    l_mix + lambda * l_kl
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng_from_seed;

    fn sl(v: &[f64]) -> SoftLabel {
        SoftLabel::new(v.to_vec()).unwrap()
    }

    #[test]
    fn sharpen_examples() {
        let p = sl(&[0.2, 0.5, 0.3]);
        assert_eq!(sharpen(&p, 1.0).unwrap(), p);
        let s = sharpen(&sl(&[0.6, 0.4]), 0.5).unwrap();
        assert!((s.probs()[0] - 0.36 / 0.52).abs() < 1e-12);
        assert!((s.probs()[0] - 0.6923).abs() < 1e-4);
        assert!((s.probs()[1] - 0.3077).abs() < 1e-4);
        for t in [0.1, 0.5, 2.0, 7.0] {
            let u = sharpen(&sl(&[0.25; 4]), t).unwrap();
            assert!(u.probs().iter().all(|v| (v - 0.25).abs() < 1e-15));
        }
        assert!(sharpen(&p, 0.0).is_err());
        assert!(sharpen(&p, -1.0).is_err());
    }

    #[test]
    fn sharpen_limits() {
        let one_hot = sl(&[0.0, 1.0, 0.0]);
        for t in [1e-3, 0.5, 3.0] {
            assert_eq!(sharpen(&one_hot, t).unwrap(), one_hot);
        }
        let s = sharpen(&sl(&[0.3, 0.34, 0.36]), 1e-4).unwrap();
        assert!((s.probs()[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mixup_examples() {
        let a = ([1.0, 2.0], sl(&[1.0, 0.0]));
        let b = ([5.0, -3.0], sl(&[0.0, 1.0]));
        let (x, y) = mixup((&a.0, &a.1), (&b.0, &b.1), 1.0).unwrap();
        assert_eq!((x.as_slice(), &y), (&a.0[..], &a.1));
        let (x, y) = mixup((&a.0, &a.1), (&b.0, &b.1), 0.0).unwrap();
        assert_eq!((x.as_slice(), &y), (&b.0[..], &b.1));

        let zeros = [0.0; 3];
        let twos = [2.0; 3];
        let (x, y) = mixup((&zeros, &sl(&[0.2, 0.8])), (&twos, &sl(&[0.6, 0.4])), 0.5).unwrap();
        assert_eq!(x, vec![1.0; 3]);
        assert!((y.probs()[0] - 0.4).abs() < 1e-15);

        let (_, y) = mixup((&zeros, &sl(&[1.0, 0.0])), (&twos, &sl(&[0.0, 1.0])), 0.7).unwrap();
        assert!((y.probs()[0] - 0.7).abs() < 1e-15 && (y.probs()[1] - 0.3).abs() < 1e-15);

        assert!(mixup((&zeros, &a.1), (&a.0, &a.1), 0.5).is_err());
    }

    #[test]
    fn delta_range_and_mean() {
        let mut rng = rng_from_seed(17);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let d = sample_delta(1.0, &mut rng).unwrap();
            assert!((0.5..=1.0).contains(&d));
            sum += d;
        }
        assert!((sum / n as f64 - 0.75).abs() < 0.01);
        let a: Vec<f64> = {
            let mut r = rng_from_seed(3);
            (0..5)
                .map(|_| sample_delta(0.75, &mut r).unwrap())
                .collect()
        };
        let b: Vec<f64> = {
            let mut r = rng_from_seed(3);
            (0..5)
                .map(|_| sample_delta(0.75, &mut r).unwrap())
                .collect()
        };
        assert_eq!(a, b);
        assert!(sample_delta(0.0, &mut rng).is_err());
    }

    #[test]
    fn total_loss_examples() {
        assert_eq!(total_loss(0.3, 0.9, 0.0), 0.3);
        assert_eq!(total_loss(0.3, 0.0, 4.0), 0.3);
        assert!((total_loss(0.3, 0.2, 1.0) - 0.5).abs() < 1e-15);
    }
}
