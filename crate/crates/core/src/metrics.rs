use serde::{Deserialize, Serialize};

/// Classification summary. `confusion[t][p]` counts samples of true class
/// `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fold: Option<usize>,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub support: Vec<usize>,
    pub confusion: Vec<Vec<usize>>,
}

impl MetricsReport {
    /// Labels outside `0..classes` are ignored.
    pub fn from_predictions(truth: &[usize], pred: &[usize], classes: usize) -> Self {
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (&t, &p) in truth.iter().zip(pred) {
            if t < classes && p < classes {
                confusion[t][p] += 1;
            }
        }
        Self::from_confusion(confusion)
    }

    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Self {
        let k = confusion.len();
        let total: usize = confusion.iter().flatten().sum();
        let trace: usize = (0..k).map(|i| confusion[i][i]).sum();
        let support: Vec<usize> = confusion.iter().map(|r| r.iter().sum()).collect();
        let predicted: Vec<usize> = (0..k)
            .map(|c| confusion.iter().map(|r| r[c]).sum())
            .collect();
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision: Vec<f64> = (0..k)
            .map(|c| ratio(confusion[c][c], predicted[c]))
            .collect();
        let recall: Vec<f64> = (0..k).map(|c| ratio(confusion[c][c], support[c])).collect();
        let f1: Vec<f64> = precision
            .iter()
            .zip(&recall)
            .map(|(p, r)| {
                if p + r > 0.0 {
                    2.0 * p * r / (p + r)
                } else {
                    0.0
                }
            })
            .collect();
        Self {
            fold: None,
            accuracy: ratio(trace, total),
            macro_f1: macro_average(&f1),
            precision,
            recall,
            f1,
            support,
            confusion,
        }
    }

    pub fn with_fold(mut self, fold: usize) -> Self {
        self.fold = Some(fold);
        self
    }
}

pub fn macro_average(per_class: &[f64]) -> f64 {
    if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().sum::<f64>() / per_class.len() as f64
    }
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (
        m,
        (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let r = MetricsReport::from_predictions(&[0, 1, 2, 1], &[0, 1, 2, 1], 3);
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.macro_f1, 1.0);
        assert_eq!(
            r.confusion,
            vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 1]]
        );
    }

    #[test]
    fn macro_f1_is_plain_mean() {
        assert!((macro_average(&[0.8, 0.6]) - 0.7).abs() < 1e-15);
        let r = MetricsReport::from_predictions(&[0, 0, 0, 1, 1], &[0, 0, 1, 1, 0], 2);
        assert!((r.accuracy - 0.6).abs() < 1e-15);
        assert_eq!(r.support, vec![3, 2]);
        assert!((r.macro_f1 - (r.f1[0] + r.f1[1]) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn mean_std_example() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }
}
