//! Softmax, cross-entropy against soft labels, and the symmetric KL used for
//! dropout consistency. Loss gradients are returned w.r.t. the logits so they
//! plug straight into [`super::backward`].

use super::{NnError, Tensor};

/// Smoothing inside every `log` of a probability.
pub const LOG_EPS: f64 = 1e-12;

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor) -> Tensor {
    let k = logits.row_len();
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(k.max(1)) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Tensor::from_raw(logits.shape().to_vec(), out)
}

/// Maps a gradient w.r.t. softmax outputs to a gradient w.r.t. logits:
/// `dz = p ⊙ (dp − ⟨dp, p⟩)`.
pub fn softmax_backward(probs: &Tensor, dprobs: &Tensor) -> Tensor {
    let k = probs.row_len();
    let mut out = vec![0.0; probs.len()];
    for ((p, g), o) in probs
        .data()
        .chunks(k)
        .zip(dprobs.data().chunks(k))
        .zip(out.chunks_mut(k))
    {
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for ((ov, pv), gv) in o.iter_mut().zip(p).zip(g) {
            *ov = pv * (gv - dot);
        }
    }
    Tensor::from_raw(probs.shape().to_vec(), out)
}

fn check_pair(a: &Tensor, b: &Tensor) -> Result<(), NnError> {
    if a.shape() != b.shape() || a.shape().len() != 2 {
        return Err(NnError::ShapeMismatch {
            expected: format!("{:?}", a.shape()),
            found: format!("{:?}", b.shape()),
        });
    }
    Ok(())
}

/// Unreduced cross-entropy `−Σ_j y_j log(p_j + ε)` for each row.
pub fn per_sample_cross_entropy(probs: &Tensor, labels: &Tensor) -> Result<Vec<f64>, NnError> {
    check_pair(probs, labels)?;
    let k = probs.row_len();
    Ok(probs
        .data()
        .chunks(k)
        .zip(labels.data().chunks(k))
        .map(|(p, y)| {
            -p.iter()
                .zip(y)
                .map(|(pv, yv)| {
                    if *yv == 0.0 {
                        0.0
                    } else {
                        yv * (pv + LOG_EPS).ln()
                    }
                })
                .sum::<f64>()
        })
        .collect())
}

/// Batch-mean cross-entropy against (possibly soft) labels.
pub fn cross_entropy(probs: &Tensor, labels: &Tensor) -> Result<f64, NnError> {
    let per = per_sample_cross_entropy(probs, labels)?;
    if per.is_empty() {
        return Ok(0.0);
    }
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Batch-mean cross-entropy and its gradient w.r.t. the logits.
pub fn cross_entropy_with_grad(probs: &Tensor, labels: &Tensor) -> Result<(f64, Tensor), NnError> {
    let loss = cross_entropy(probs, labels)?;
    let n = probs.rows().max(1) as f64;
    let dprobs: Vec<f64> = probs
        .data()
        .iter()
        .zip(labels.data())
        .map(|(p, y)| -y / (p + LOG_EPS) / n)
        .collect();
    let dprobs = Tensor::from_raw(probs.shape().to_vec(), dprobs);
    Ok((loss, softmax_backward(probs, &dprobs)))
}

/// `½ (KL(p‖q) + KL(q‖p)) = ½ Σ (p − q)(log p − log q)` for one row.
pub fn symmetric_kl_row(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p
        .iter()
        .zip(q)
        .map(|(a, b)| (a - b) * ((a + LOG_EPS).ln() - (b + LOG_EPS).ln()))
        .sum::<f64>()
}

/// Batch-mean symmetric KL between two forward passes of the same inputs.
pub fn symmetric_kl(p1: &Tensor, p2: &Tensor) -> Result<f64, NnError> {
    check_pair(p1, p2)?;
    let k = p1.row_len();
    let n = p1.rows();
    if n == 0 {
        return Ok(0.0);
    }
    let total: f64 = p1
        .data()
        .chunks(k)
        .zip(p2.data().chunks(k))
        .map(|(a, b)| symmetric_kl_row(a, b))
        .sum();
    Ok(total / n as f64)
}

/// Batch-mean symmetric KL with gradients w.r.t. the logits of both passes.
pub fn symmetric_kl_with_grad(p1: &Tensor, p2: &Tensor) -> Result<(f64, Tensor, Tensor), NnError> {
    let loss = symmetric_kl(p1, p2)?;
    let n = p1.rows().max(1) as f64;
    let grad_for = |a: &Tensor, b: &Tensor| {
        let d: Vec<f64> = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| {
                0.5 * (((x + LOG_EPS).ln() - (y + LOG_EPS).ln()) + (x - y) / (x + LOG_EPS)) / n
            })
            .collect();
        softmax_backward(a, &Tensor::from_raw(a.shape().to_vec(), d))
    };
    Ok((loss, grad_for(p1, p2), grad_for(p2, p1)))
}

/// One-hot label rows for class ids.
pub fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        data[i * classes + l] = 1.0;
    }
    Tensor::from_raw(vec![labels.len(), classes], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&t(&[&[0.0, 0.0]])).data(), &[0.5, 0.5]);
        for c in [-50.0, 0.0, 3.5, 700.0] {
            let p = softmax(&t(&[&[c, c, c, c]]));
            assert!(p.data().iter().all(|v| (v - 0.25).abs() < 1e-15));
        }
        let p = softmax(&t(&[&[1000.0, 0.0]]));
        assert!(p.is_finite());
        assert!((p.data()[0] - 1.0).abs() < 1e-15);
        assert!(p.data()[1] < 1e-300);
    }

    #[test]
    fn cross_entropy_examples() {
        let y = t(&[&[0.0, 1.0, 0.0, 0.0]]);
        assert!(cross_entropy(&y, &y).unwrap() < 1e-11);
        let u = t(&[&[0.25; 4]]);
        assert!((cross_entropy(&u, &y).unwrap() - 4f64.ln()).abs() < 1e-11);
        let p = t(&[&[0.1, 0.2, 0.3, 0.4]]);
        let entropy: f64 = -[0.1f64, 0.2, 0.3, 0.4]
            .iter()
            .map(|v| v * v.ln())
            .sum::<f64>();
        assert!((cross_entropy(&p, &p).unwrap() - entropy).abs() < 1e-10);
        assert!(cross_entropy(&p, &t(&[&[1.0, 0.0]])).is_err());
    }

    #[test]
    fn ce_softmax_gradient_is_probs_minus_labels() {
        let probs = softmax(&t(&[&[0.3, -1.2, 2.0]]));
        let y = t(&[&[0.0, 0.0, 1.0]]);
        let (_, g) = cross_entropy_with_grad(&probs, &y).unwrap();
        for ((gv, pv), yv) in g.data().iter().zip(probs.data()).zip(y.data()) {
            assert!((gv - (pv - yv)).abs() < 1e-10);
        }
    }

    #[test]
    fn symmetric_kl_hand_case() {
        let a = t(&[&[0.75, 0.25]]);
        let b = t(&[&[0.25, 0.75]]);
        let v = symmetric_kl(&a, &b).unwrap();
        assert!((v - 0.5 * 3f64.ln()).abs() < 1e-6);
        assert_eq!(symmetric_kl(&a, &a).unwrap(), 0.0);
        assert_eq!(v, symmetric_kl(&b, &a).unwrap());
    }
}
