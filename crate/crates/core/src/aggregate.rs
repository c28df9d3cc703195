//! Song-level decisions: order-free statistics over a song's segment
//! probabilities and a linear one-vs-rest hinge classifier on top.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::SegmentSet;
use crate::nn::{rng_from_seed, ModelParams, NetworkConfig};
use crate::train::{self, TrainError};

/// Statistics per class: max, min, Q1, median, Q3, mean, fraction above θ.
pub const STATS_PER_CLASS: usize = 7;
pub const DEFAULT_THETA: f64 = 0.5;

#[derive(Debug, Error)]
pub enum AggregateError {
    #[error("song `{0}` has no segments (shorter than the segment duration)")]
    EmptySong(String),
    #[error("empty probability sequence")]
    EmptySequence,
    #[error("threshold must lie in (0, 1), got {0}")]
    InvalidTheta(f64),
    #[error("segment {0} is not a probability vector over {1} classes")]
    NotStochastic(usize, usize),
    #[error("training set contains fewer than two classes")]
    SingleClass,
    #[error("feature dimension {found} does not match model dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("invalid fold count: {0}")]
    InvalidFolds(String),
    #[error("invalid song classifier config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Probability rows of one song's segments, in temporal order.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentProbSeq {
    pub song_id: String,
    pub probs: Vec<Vec<f64>>,
}

/// `7·K` statistics, class-major: `values[k * 7 + j]` is statistic `j` of class `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SongFeature {
    pub song_id: String,
    pub values: Vec<f64>,
    pub theta: f64,
}

impl SongFeature {
    pub fn classes(&self) -> usize {
        self.values.len() / STATS_PER_CLASS
    }

    pub fn stats(&self, class: usize) -> &[f64] {
        &self.values[class * STATS_PER_CLASS..(class + 1) * STATS_PER_CLASS]
    }
}

/// Runs the segment model (dropout off) over the segments of `song_id` in
/// `data`, ordered by start time.
pub fn segment_probs(
    params: &ModelParams,
    net: &NetworkConfig,
    data: &SegmentSet,
    song_id: &str,
    batch_size: usize,
) -> Result<SegmentProbSeq, AggregateError> {
    let mut idx: Vec<usize> = (0..data.len())
        .filter(|&i| data.song_ids[i] == song_id)
        .collect();
    if idx.is_empty() {
        return Err(AggregateError::EmptySong(song_id.to_string()));
    }
    idx.sort_by(|&a, &b| data.starts[a].total_cmp(&data.starts[b]));
    let probs = train::predict_probs(params, net, &data.subset(&idx), batch_size)?;
    Ok(SegmentProbSeq {
        song_id: song_id.to_string(),
        probs,
    })
}

/// Quantile of sorted data by linear interpolation at position `(n − 1)·q`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if frac == 0.0 || lo + 1 >= sorted.len() {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

pub fn song_features(seq: &SegmentProbSeq, theta: f64) -> Result<SongFeature, AggregateError> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(AggregateError::InvalidTheta(theta));
    }
    let first = seq.probs.first().ok_or(AggregateError::EmptySequence)?;
    let k = first.len();
    for (s, row) in seq.probs.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if row.len() != k
            || k == 0
            || row.iter().any(|p| !(0.0..=1.0).contains(p))
            || (sum - 1.0).abs() > 1e-6
        {
            return Err(AggregateError::NotStochastic(s, k));
        }
    }
    let n = seq.probs.len() as f64;
    let mut values = Vec::with_capacity(STATS_PER_CLASS * k);
    let mut col = Vec::with_capacity(seq.probs.len());
    for c in 0..k {
        col.clear();
        col.extend(seq.probs.iter().map(|row| row[c]));
        col.sort_by(f64::total_cmp);
        let (min, max) = (col[0], col[col.len() - 1]);
        let mean = (col.iter().sum::<f64>() / n).clamp(min, max);
        let above = col.iter().filter(|&&p| p > theta).count() as f64 / n;
        values.extend_from_slice(&[
            max,
            min,
            quantile_sorted(&col, 0.25),
            quantile_sorted(&col, 0.5),
            quantile_sorted(&col, 0.75),
            mean,
            above,
        ]);
    }
    Ok(SongFeature {
        song_id: seq.song_id.clone(),
        values,
        theta,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SongTrainConfig {
    pub reg: f64,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for SongTrainConfig {
    fn default() -> Self {
        Self {
            reg: 1e-3,
            epochs: 500,
            lr: 0.5,
        }
    }
}

/// One-vs-rest linear model over standardized song features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSongModel {
    pub classes: usize,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub reg: f64,
}

/// `reg/2·‖w‖² + mean_i max(0, 1 − y_i(w·x_i + b))` with `y_i ∈ {−1, +1}`.
pub fn hinge_objective(w: &[f64], b: f64, xs: &[Vec<f64>], ys: &[f64], reg: f64) -> f64 {
    let hinge: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (1.0 - y * (dot(w, x) + b)).max(0.0))
        .sum();
    0.5 * reg * dot(w, w) + hinge / xs.len() as f64
}

/// Subgradient of the hinge term only (the regularizer is applied
/// implicitly by the optimiser); at a kink the zero branch is taken.
pub fn hinge_subgradient(w: &[f64], b: f64, xs: &[Vec<f64>], ys: &[f64]) -> (Vec<f64>, f64) {
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        if y * (dot(w, x) + b) < 1.0 {
            for (g, v) in gw.iter_mut().zip(x) {
                *g -= y * v;
            }
            gb -= y;
        }
    }
    let n = xs.len() as f64;
    gw.iter_mut().for_each(|g| *g /= n);
    (gw, gb / n)
}

/// Result of training one binary hinge classifier.
#[derive(Debug, Clone)]
pub struct BinaryFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Best objective seen after each iteration (index 0 is the zero start).
    pub trace: Vec<f64>,
}

/// Full-batch subgradient descent with step `lr/√(t+1)`. The regularizer is
/// applied as an implicit shrink `w / (1 + η·reg)`, which stays stable for
/// any `reg`. The best iterate is returned.
pub fn train_binary(xs: &[Vec<f64>], ys: &[f64], cfg: &SongTrainConfig) -> BinaryFit {
    let d = xs.first().map_or(0, Vec::len);
    let (mut w, mut b) = (vec![0.0; d], 0.0);
    let mut best = (w.clone(), b, hinge_objective(&w, b, xs, ys, cfg.reg));
    let mut trace = vec![best.2];
    for t in 0..cfg.epochs {
        let eta = cfg.lr / ((t + 1) as f64).sqrt();
        let (gw, gb) = hinge_subgradient(&w, b, xs, ys);
        for (wi, gi) in w.iter_mut().zip(&gw) {
            *wi = (*wi - eta * gi) / (1.0 + eta * cfg.reg);
        }
        b -= eta * gb;
        let obj = hinge_objective(&w, b, xs, ys, cfg.reg);
        if obj < best.2 {
            best = (w.clone(), b, obj);
        }
        trace.push(best.2);
    }
    BinaryFit {
        weights: best.0,
        bias: best.1,
        trace,
    }
}

pub fn train_song_classifier(
    features: &[SongFeature],
    labels: &[usize],
    classes: usize,
    cfg: &SongTrainConfig,
) -> Result<LinearSongModel, AggregateError> {
    if !(cfg.reg >= 0.0 && cfg.reg.is_finite()) || !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(AggregateError::InvalidConfig(format!(
            "reg {} and lr {} must be finite, lr positive",
            cfg.reg, cfg.lr
        )));
    }
    if features.len() != labels.len() {
        return Err(AggregateError::DimensionMismatch {
            expected: features.len(),
            found: labels.len(),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(AggregateError::BadLabel { label, classes });
    }
    let mut present = labels.to_vec();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(AggregateError::SingleClass);
    }
    let d = features[0].values.len();
    if let Some(f) = features.iter().find(|f| f.values.len() != d) {
        return Err(AggregateError::DimensionMismatch {
            expected: d,
            found: f.values.len(),
        });
    }
    let n = features.len() as f64;
    let mut mean = vec![0.0; d];
    for f in features {
        for (m, v) in mean.iter_mut().zip(&f.values) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut scale = vec![0.0; d];
    for f in features {
        for ((s, v), m) in scale.iter_mut().zip(&f.values).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    for s in scale.iter_mut() {
        let sd = (*s / n).sqrt();
        *s = if sd > 1e-12 { sd } else { 1.0 };
    }
    let xs: Vec<Vec<f64>> = features
        .iter()
        .map(|f| standardize(&f.values, &mean, &scale))
        .collect();
    let (mut weights, mut bias) = (Vec::with_capacity(classes), Vec::with_capacity(classes));
    for c in 0..classes {
        let ys: Vec<f64> = labels
            .iter()
            .map(|&l| if l == c { 1.0 } else { -1.0 })
            .collect();
        let fit = train_binary(&xs, &ys, cfg);
        weights.push(fit.weights);
        bias.push(fit.bias);
    }
    Ok(LinearSongModel {
        classes,
        mean,
        scale,
        weights,
        bias,
        reg: cfg.reg,
    })
}

impl LinearSongModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn margins(&self, values: &[f64]) -> Result<Vec<f64>, AggregateError> {
        if values.len() != self.dim() {
            return Err(AggregateError::DimensionMismatch {
                expected: self.dim(),
                found: values.len(),
            });
        }
        let z = standardize(values, &self.mean, &self.scale);
        Ok(self
            .weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| dot(w, &z) + b)
            .collect())
    }
}

/// Predicted class (lowest id on ties) and per-class margins.
pub fn predict_song(
    model: &LinearSongModel,
    f: &SongFeature,
) -> Result<(usize, Vec<f64>), AggregateError> {
    let m = model.margins(&f.values)?;
    Ok((train::mixing::argmax(&m), m))
}

/// Splits song indices `0..n_songs` into `k` disjoint folds after a seeded
/// shuffle; the first `n mod k` folds get one extra song.
pub fn kfold_split(n_songs: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, AggregateError> {
    if k < 2 {
        return Err(AggregateError::InvalidFolds(format!(
            "k = {k}, need at least 2"
        )));
    }
    if k > n_songs {
        return Err(AggregateError::InvalidFolds(format!(
            "k = {k} exceeds {n_songs} songs"
        )));
    }
    let mut order: Vec<usize> = (0..n_songs).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let (base, extra) = (n_songs / k, n_songs % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(order[start..start + size].to_vec());
        start += size;
    }
    Ok(folds)
}

fn standardize(v: &[f64], mean: &[f64], scale: &[f64]) -> Vec<f64> {
    v.iter()
        .zip(mean)
        .zip(scale)
        .map(|((x, m), s)| (x - m) / s)
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(rows: Vec<Vec<f64>>) -> SegmentProbSeq {
        SegmentProbSeq {
            song_id: "s".into(),
            probs: rows,
        }
    }

    #[test]
    fn constant_sequence() {
        let f = song_features(&seq(vec![vec![0.4, 0.6]; 10]), 0.5).unwrap();
        assert_eq!(&f.stats(0)[..6], &[0.4; 6]);
        assert_eq!(f.stats(0)[6], 0.0);
        assert_eq!(f.stats(1)[6], 1.0);
    }

    #[test]
    fn single_segment() {
        let f = song_features(&seq(vec![vec![0.3, 0.7]]), 0.5).unwrap();
        assert_eq!(&f.stats(1)[..6], &[0.7; 6]);
        assert_eq!(f.stats(1)[6], 1.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            song_features(&seq(vec![]), 0.5),
            Err(AggregateError::EmptySequence)
        ));
        assert!(song_features(&seq(vec![vec![0.5, 0.5]]), 1.0).is_err());
        assert!(song_features(&seq(vec![vec![0.5, 0.4]]), 0.5).is_err());
    }

    #[test]
    fn fold_sizes() {
        let folds = kfold_split(767, 10, 1).unwrap();
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        assert_eq!(sizes, [vec![77; 7], vec![76; 3]].concat());
        assert!(kfold_split(10, 10, 0).unwrap().iter().all(|f| f.len() == 1));
        assert_eq!(
            kfold_split(50, 5, 9).unwrap(),
            kfold_split(50, 5, 9).unwrap()
        );
        assert!(kfold_split(10, 1, 0).is_err());
        assert!(kfold_split(3, 4, 0).is_err());
    }

    #[test]
    fn zero_weights_follow_bias() {
        let model = LinearSongModel {
            classes: 4,
            mean: vec![0.0; 7],
            scale: vec![1.0; 7],
            weights: vec![vec![0.0; 7]; 4],
            bias: vec![1.0, 0.0, 0.0, 0.0],
            reg: 0.0,
        };
        let f = SongFeature {
            song_id: "x".into(),
            values: vec![0.3; 7],
            theta: 0.5,
        };
        assert_eq!(predict_song(&model, &f).unwrap().0, 0);
        let tied = LinearSongModel {
            bias: vec![0.0, 2.0, 2.0, 1.0],
            ..model.clone()
        };
        assert_eq!(predict_song(&tied, &f).unwrap().0, 1);
        let short = SongFeature {
            values: vec![0.3; 6],
            ..f
        };
        assert!(matches!(
            predict_song(&model, &short),
            Err(AggregateError::DimensionMismatch {
                expected: 7,
                found: 6
            })
        ));
    }
}
