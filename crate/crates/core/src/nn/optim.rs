use super::{ModelParams, NnError};

/// SGD with heavy-ball momentum: `v ← μ·v + g; θ ← θ − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    momentum: f64,
    velocity: Option<ModelParams>,
}

impl Sgd {
    pub fn new(momentum: f64) -> Result<Self, NnError> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(NnError::InvalidConfig(format!(
                "momentum must be in [0, 1), got {momentum}"
            )));
        }
        Ok(Self {
            momentum,
            velocity: None,
        })
    }

    pub fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &ModelParams,
        lr: f64,
    ) -> Result<(), NnError> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(NnError::InvalidConfig(format!("bad learning rate {lr}")));
        }
        if !grads.is_finite() {
            return Err(NnError::NonFinite);
        }
        if grads.tensors.len() != params.tensors.len()
            || grads
                .tensors
                .iter()
                .zip(&params.tensors)
                .any(|(g, p)| g.shape() != p.shape())
        {
            return Err(NnError::ShapeMismatch {
                expected: "gradients shaped like the parameters".into(),
                found: "mismatched gradient tensors".into(),
            });
        }
        let velocity = self.velocity.get_or_insert_with(|| ModelParams {
            tensors: grads
                .tensors
                .iter()
                .map(|t| super::Tensor::zeros(t.shape().to_vec()))
                .collect(),
        });
        for ((p, v), g) in params
            .tensors
            .iter_mut()
            .zip(velocity.tensors.iter_mut())
            .zip(&grads.tensors)
        {
            for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vv = self.momentum * *vv + gv;
                *pv -= lr * *vv;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn single(v: f64) -> ModelParams {
        ModelParams {
            tensors: vec![Tensor::new(vec![1], vec![v]).unwrap()],
        }
    }

    #[test]
    fn zero_lr_leaves_params() {
        let mut p = single(1.5);
        Sgd::new(0.9)
            .unwrap()
            .step(&mut p, &single(3.0), 0.0)
            .unwrap();
        assert_eq!(p, single(1.5));
    }

    #[test]
    fn plain_sgd_without_momentum() {
        let mut p = single(1.0);
        Sgd::new(0.0)
            .unwrap()
            .step(&mut p, &single(2.0), 0.1)
            .unwrap();
        assert!((p.tensors[0].data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn momentum_unrolls_over_two_steps() {
        // v1 = g, v2 = 0.9 g + g; displacement lr·g·(1 + 1.9).
        let (lr, g) = (0.05, 0.7);
        let mut p = single(0.0);
        let mut opt = Sgd::new(0.9).unwrap();
        opt.step(&mut p, &single(g), lr).unwrap();
        opt.step(&mut p, &single(g), lr).unwrap();
        assert!((p.tensors[0].data()[0] + lr * g * 2.9).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_finite_gradients() {
        let mut p = single(1.0);
        let bad = ModelParams {
            tensors: vec![Tensor::from_raw(vec![1], vec![f64::NAN])],
        };
        assert!(matches!(
            Sgd::new(0.9).unwrap().step(&mut p, &bad, 0.1),
            Err(NnError::NonFinite)
        ));
        assert_eq!(p, single(1.0));
    }
}
