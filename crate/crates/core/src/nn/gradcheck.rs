use rand::seq::index::sample;
use rand::RngCore;

use super::loss::{cross_entropy, cross_entropy_with_grad};
use super::{backward, forward, ModelParams, NetworkConfig, NnError, Tensor};

/// Coordinates whose analytic and numeric gradients are both below this
/// magnitude are compared in absolute rather than relative terms.
pub const GRAD_FLOOR: f64 = 1e-7;

/// Minimum number of coordinates probed by [`grad_check`].
pub const MIN_COORDS: usize = 200;

/// Loss and activation pattern with dropout off.
fn probe_loss(
    params: &ModelParams,
    cfg: &NetworkConfig,
    batch: &Tensor,
    labels: &Tensor,
) -> Result<(f64, Vec<usize>), NnError> {
    let mut no_rng = rand::rngs::mock::StepRng::new(0, 0);
    let (probs, cache) = forward(params, cfg, batch, false, &mut no_rng)?;
    Ok((
        cross_entropy(&probs, labels)?,
        cache.activation_pattern(cfg),
    ))
}

/// Analytic gradient of the batch-mean cross-entropy with dropout off.
pub fn analytic_gradient(
    cfg: &NetworkConfig,
    params: &ModelParams,
    batch: &Tensor,
    labels: &Tensor,
) -> Result<ModelParams, NnError> {
    let mut no_rng = rand::rngs::mock::StepRng::new(0, 0);
    let (probs, cache) = forward(params, cfg, batch, false, &mut no_rng)?;
    let (_, dlogits) = cross_entropy_with_grad(&probs, labels)?;
    backward(params, cfg, &cache, &dlogits)
}

/// Compares `analytic` against central differences on a random subsample of
/// at least [`MIN_COORDS`] coordinates (all of them for smaller nets) and
/// returns the largest relative error.
///
/// A coordinate whose `±eps` probes change a ReLU side or a max-pool winner
/// straddles a kink, where the difference quotient is not a derivative; it
/// is skipped and another coordinate is drawn in its place.
pub fn compare_gradients<R: RngCore>(
    cfg: &NetworkConfig,
    params: &ModelParams,
    batch: &Tensor,
    labels: &Tensor,
    eps: f64,
    analytic: &ModelParams,
    rng: &mut R,
) -> Result<f64, NnError> {
    let total = params.count();
    let order = sample(rng, total, total).into_vec();
    let (_, base) = probe_loss(params, cfg, batch, labels)?;
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    let (mut checked, mut kinks) = (0, 0);
    for flat in order {
        if checked == MIN_COORDS {
            break;
        }
        let (ti, off) = params.locate(flat);
        let orig = params.tensors[ti].data()[off];
        probe.tensors[ti].data_mut()[off] = orig + eps;
        let (up, pattern_up) = probe_loss(&probe, cfg, batch, labels)?;
        probe.tensors[ti].data_mut()[off] = orig - eps;
        let (down, pattern_down) = probe_loss(&probe, cfg, batch, labels)?;
        probe.tensors[ti].data_mut()[off] = orig;
        if pattern_up != base || pattern_down != base {
            kinks += 1;
            continue;
        }
        checked += 1;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.tensors[ti].data()[off];
        let denom = a.abs().max(numeric.abs()).max(GRAD_FLOOR);
        worst = worst.max((a - numeric).abs() / denom);
    }
    log::debug!("gradient check: {checked} coordinates compared, {kinks} skipped at kinks");
    Ok(worst)
}

/// Finite-difference check of backpropagation on a small network.
pub fn grad_check<R: RngCore>(
    cfg: &NetworkConfig,
    params: &ModelParams,
    batch: &Tensor,
    labels: &Tensor,
    eps: f64,
    dropout_on: bool,
    rng: &mut R,
) -> Result<f64, NnError> {
    if dropout_on && cfg.has_dropout() {
        return Err(NnError::DropoutActive);
    }
    let analytic = analytic_gradient(cfg, params, batch, labels)?;
    compare_gradients(cfg, params, batch, labels, eps, &analytic, rng)
}
