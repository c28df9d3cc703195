use proptest::prelude::*;
use sssl::aggregate::{
    hinge_objective, hinge_subgradient, kfold_split, predict_song, song_features, train_binary,
    train_song_classifier, SegmentProbSeq, SongFeature, SongTrainConfig, STATS_PER_CLASS,
};

/// Random row-stochastic sequences of 1..20 rows over 2..6 classes.
fn stochastic_seq() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..6, 1usize..20).prop_flat_map(|(k, n)| {
        prop::collection::vec(prop::collection::vec(0.01f64..1.0, k), n).prop_map(|rows| {
            rows.into_iter()
                .map(|r| {
                    let s: f64 = r.iter().sum();
                    r.into_iter().map(|v| v / s).collect()
                })
                .collect()
        })
    })
}

fn seq(probs: Vec<Vec<f64>>) -> SegmentProbSeq {
    SegmentProbSeq {
        song_id: "s".into(),
        probs,
    }
}

proptest! {
    #[test]
    fn stats_are_ordered_and_bounded(rows in stochastic_seq(), theta in 0.05f64..0.95) {
        let k = rows[0].len();
        let f = song_features(&seq(rows), theta).unwrap();
        prop_assert_eq!(f.values.len(), STATS_PER_CLASS * k);
        for c in 0..k {
            let s = f.stats(c);
            let (max, min, q1, q2, q3, mean, above) = (s[0], s[1], s[2], s[3], s[4], s[5], s[6]);
            prop_assert!(min <= q1 && q1 <= q2 && q2 <= q3 && q3 <= max);
            prop_assert!(min <= mean && mean <= max);
            prop_assert!((0.0..=1.0).contains(&above));
        }
    }

    #[test]
    fn stats_ignore_segment_order(rows in stochastic_seq(), shift in 0usize..20) {
        let mut rotated = rows.clone();
        let n = rotated.len();
        rotated.rotate_left(shift % n);
        let a = song_features(&seq(rows), 0.5).unwrap();
        let b = song_features(&seq(rotated), 0.5).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn threshold_fraction_is_a_multiple_of_one_over_n(rows in stochastic_seq(), theta in 0.05f64..0.95) {
        let n = rows.len() as f64;
        let k = rows[0].len();
        let f = song_features(&seq(rows), theta).unwrap();
        for c in 0..k {
            let scaled = f.stats(c)[6] * n;
            prop_assert!((scaled - scaled.round()).abs() < 1e-9);
        }
    }

    #[test]
    fn folds_partition_the_songs(n in 1usize..200, k in 1usize..12, seed in any::<u64>()) {
        prop_assume!(k <= n && k >= 2);
        let folds = kfold_split(n, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}

#[test]
fn single_segment_song_has_degenerate_stats() {
    let f = song_features(&seq(vec![vec![0.7, 0.3]]), 0.5).unwrap();
    assert_eq!(f.stats(0), &[0.7, 0.7, 0.7, 0.7, 0.7, 0.7, 1.0]);
    assert_eq!(f.stats(1), &[0.3, 0.3, 0.3, 0.3, 0.3, 0.3, 0.0]);
}

#[test]
fn quartiles_interpolate_linearly() {
    // Class-0 column sorted: 0.1 0.2 0.4 0.8 -> Q1 at 0.75, Q3 at 2.25.
    let rows = [0.4, 0.1, 0.8, 0.2]
        .iter()
        .map(|&p| vec![p, 1.0 - p])
        .collect();
    let f = song_features(&seq(rows), 0.3).unwrap();
    let s = f.stats(0);
    assert!((s[2] - 0.175).abs() < 1e-12);
    assert!((s[3] - 0.3).abs() < 1e-12);
    assert!((s[4] - 0.5).abs() < 1e-12);
    assert!((s[5] - 0.375).abs() < 1e-12);
    assert_eq!(s[6], 0.5);
}

#[test]
fn non_stochastic_rows_and_bad_theta_are_rejected() {
    assert!(song_features(&seq(vec![vec![0.5, 0.6]]), 0.5).is_err());
    assert!(song_features(&seq(vec![]), 0.5).is_err());
    assert!(song_features(&seq(vec![vec![0.5, 0.5]]), 1.0).is_err());
    assert!(song_features(&seq(vec![vec![0.5, 0.5]]), 0.0).is_err());
}

fn toy_points() -> (Vec<Vec<f64>>, Vec<f64>) {
    let xs = vec![
        vec![2.0, 0.5],
        vec![1.5, -0.3],
        vec![3.0, 1.0],
        vec![-1.0, 0.2],
        vec![-2.0, -1.0],
        vec![-0.7, 0.9],
    ];
    (xs, vec![1.0, 1.0, 1.0, -1.0, -1.0, -1.0])
}

#[test]
fn hinge_subgradient_matches_differences_away_from_kinks() {
    let (xs, ys) = toy_points();
    let (w, b) = (vec![0.13, -0.21], 0.07);
    // No margin equals exactly one here, so the objective is smooth at (w, b).
    for (x, y) in xs.iter().zip(&ys) {
        let m = y * (w[0] * x[0] + w[1] * x[1] + b);
        assert!((m - 1.0).abs() > 1e-3);
    }
    let reg = 0.1;
    let (gw, gb) = hinge_subgradient(&w, b, &xs, &ys);
    let eps = 1e-6;
    for j in 0..2 {
        let mut up = w.clone();
        let mut down = w.clone();
        up[j] += eps;
        down[j] -= eps;
        let num = (hinge_objective(&up, b, &xs, &ys, reg)
            - hinge_objective(&down, b, &xs, &ys, reg))
            / (2.0 * eps);
        assert!(
            (num - (gw[j] + reg * w[j])).abs() < 1e-6,
            "w[{j}]: {num} vs {}",
            gw[j] + reg * w[j]
        );
    }
    let num = (hinge_objective(&w, b + eps, &xs, &ys, reg)
        - hinge_objective(&w, b - eps, &xs, &ys, reg))
        / (2.0 * eps);
    assert!((num - gb).abs() < 1e-6);
}

#[test]
fn binary_trace_never_increases_and_separates() {
    let (xs, ys) = toy_points();
    let fit = train_binary(&xs, &ys, &SongTrainConfig::default());
    assert!(fit.trace.windows(2).all(|w| w[1] <= w[0]));
    for (x, y) in xs.iter().zip(&ys) {
        let s: f64 = fit.weights.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + fit.bias;
        assert!(s * y > 0.0);
    }
}

#[test]
fn huge_regularization_drives_weights_to_zero() {
    let (xs, ys) = toy_points();
    let cfg = SongTrainConfig {
        reg: 1e6,
        ..SongTrainConfig::default()
    };
    let fit = train_binary(&xs, &ys, &cfg);
    assert!(
        fit.weights.iter().all(|w| w.abs() < 1e-4),
        "{:?}",
        fit.weights
    );
}

fn feature(id: &str, values: Vec<f64>) -> SongFeature {
    SongFeature {
        song_id: id.into(),
        values,
        theta: 0.5,
    }
}

/// Separable songs: class c has its probability mass on class c.
fn separable_songs(classes: usize, per_class: usize) -> (Vec<SongFeature>, Vec<usize>) {
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for c in 0..classes {
        for i in 0..per_class {
            let hi = 0.6 + 0.3 * (i as f64 / per_class as f64);
            let rows: Vec<Vec<f64>> = (0..5)
                .map(|s| {
                    let p = hi - 0.02 * s as f64;
                    (0..classes)
                        .map(|k| {
                            if k == c {
                                p
                            } else {
                                (1.0 - p) / (classes - 1) as f64
                            }
                        })
                        .collect()
                })
                .collect();
            let f = song_features(
                &SegmentProbSeq {
                    song_id: format!("{c}_{i}"),
                    probs: rows,
                },
                0.5,
            )
            .unwrap();
            feats.push(f);
            labels.push(c);
        }
    }
    (feats, labels)
}

#[test]
fn separable_songs_are_classified_perfectly() {
    let (feats, labels) = separable_songs(3, 8);
    let model = train_song_classifier(&feats, &labels, 3, &SongTrainConfig::default()).unwrap();
    for (f, &l) in feats.iter().zip(&labels) {
        let (pred, margins) = predict_song(&model, f).unwrap();
        assert_eq!(pred, l);
        assert_eq!(margins.len(), 3);
    }
}

#[test]
fn duplicating_the_training_set_leaves_the_model_unchanged() {
    let (feats, labels) = separable_songs(3, 6);
    let cfg = SongTrainConfig::default();
    let once = train_song_classifier(&feats, &labels, 3, &cfg).unwrap();
    let feats2: Vec<SongFeature> = feats.iter().chain(&feats).cloned().collect();
    let labels2: Vec<usize> = labels.iter().chain(&labels).copied().collect();
    let twice = train_song_classifier(&feats2, &labels2, 3, &cfg).unwrap();
    for (a, b) in once
        .weights
        .iter()
        .flatten()
        .zip(twice.weights.iter().flatten())
    {
        assert!((a - b).abs() < 1e-9);
    }
    for (a, b) in once.bias.iter().zip(&twice.bias) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn classifier_rejects_bad_inputs() {
    let (feats, labels) = separable_songs(3, 2);
    let cfg = SongTrainConfig::default();
    assert!(
        train_song_classifier(&feats, &[0; 6], 3, &cfg).is_err(),
        "single class"
    );
    let mut bad = labels.clone();
    bad[0] = 7;
    assert!(
        train_song_classifier(&feats, &bad, 3, &cfg).is_err(),
        "label out of range"
    );
    let model = train_song_classifier(&feats, &labels, 3, &cfg).unwrap();
    assert!(
        predict_song(&model, &feature("x", vec![0.0; 7])).is_err(),
        "dimension mismatch"
    );
}

#[test]
fn kfold_is_seeded_and_validated() {
    assert_eq!(
        kfold_split(30, 4, 3).unwrap(),
        kfold_split(30, 4, 3).unwrap()
    );
    assert_ne!(
        kfold_split(30, 4, 3).unwrap(),
        kfold_split(30, 4, 4).unwrap()
    );
    assert!(kfold_split(5, 6, 0).is_err());
    assert!(kfold_split(5, 1, 0).is_err());
    let sizes: Vec<usize> = kfold_split(10, 4, 0)
        .unwrap()
        .iter()
        .map(Vec::len)
        .collect();
    assert_eq!(sizes, vec![3, 3, 2, 2]);
}
