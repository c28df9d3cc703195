//! Forward and backward passes for the layer stack described by a
//! [`NetworkConfig`]. Every layer keeps its batch-major activations so the
//! backward pass can replay them in reverse.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::config::{LayerSpec, NetworkConfig};
use super::loss::softmax;
use super::{NnError, Tensor};

/// Weights and biases in layer order: `[w0, b0, w1, b1, ...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn zeros(cfg: &NetworkConfig) -> Result<Self, NnError> {
        Ok(Self {
            tensors: cfg.param_shapes()?.into_iter().map(Tensor::zeros).collect(),
        })
    }

    /// He-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(cfg: &NetworkConfig, rng: &mut R) -> Result<Self, NnError> {
        let mut params = Self::zeros(cfg)?;
        for pair in params.tensors.chunks_mut(2) {
            let fan_in: usize = pair[0].shape()[1..].iter().product();
            let limit = (6.0 / fan_in as f64).sqrt();
            for w in pair[0].data_mut() {
                *w = rng.gen_range(-limit..limit);
            }
        }
        Ok(params)
    }

    pub fn check_matches(&self, cfg: &NetworkConfig) -> Result<(), NnError> {
        let shapes = cfg.param_shapes()?;
        if shapes.len() != self.tensors.len() {
            return Err(NnError::ShapeMismatch {
                expected: format!("{} parameter tensors", shapes.len()),
                found: format!("{}", self.tensors.len()),
            });
        }
        for (shape, t) in shapes.iter().zip(&self.tensors) {
            if shape.as_slice() != t.shape() {
                return Err(NnError::ShapeMismatch {
                    expected: format!("{shape:?}"),
                    found: format!("{:?}", t.shape()),
                });
            }
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Adds `other` scaled by `alpha` in place.
    pub fn add_scaled(&mut self, other: &ModelParams, alpha: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += alpha * y;
            }
        }
    }

    /// Flat coordinate view used by gradient checks: `(tensor, offset)`.
    pub(crate) fn locate(&self, mut flat: usize) -> (usize, usize) {
        for (i, t) in self.tensors.iter().enumerate() {
            if flat < t.len() {
                return (i, flat);
            }
            flat -= t.len();
        }
        panic!("parameter index out of range");
    }
}

#[derive(Debug, Clone)]
enum LayerState {
    None,
    Mask(Vec<f64>),
    Argmax(Vec<usize>),
}

/// Activations recorded by [`forward`], consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Tensor>,
    states: Vec<LayerState>,
    probs: Tensor,
}

impl ForwardCache {
    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    pub fn batch_size(&self) -> usize {
        self.probs.rows()
    }

    /// Which side of zero every ReLU input fell on and which element won
    /// every max-pool window. Two passes with equal patterns evaluate the
    /// same linear piece of the network.
    pub fn activation_pattern(&self, cfg: &NetworkConfig) -> Vec<usize> {
        let mut out = Vec::new();
        for ((layer, input), state) in cfg.layers.iter().zip(&self.inputs).zip(&self.states) {
            match (layer, state) {
                (LayerSpec::Relu, _) => {
                    out.extend(input.data().iter().map(|&v| usize::from(v > 0.0)))
                }
                (LayerSpec::MaxPool { .. }, LayerState::Argmax(idx)) => out.extend_from_slice(idx),
                _ => {}
            }
        }
        out
    }
}

fn check_batch(cfg: &NetworkConfig, batch: &Tensor) -> Result<(), NnError> {
    if batch.shape().len() != cfg.input_shape.len() + 1 || batch.shape()[1..] != cfg.input_shape[..]
    {
        return Err(NnError::ShapeMismatch {
            expected: format!("[batch, {:?}]", cfg.input_shape),
            found: format!("{:?}", batch.shape()),
        });
    }
    Ok(())
}

/// Runs the network on a batch and returns row-stochastic class
/// probabilities. Dropout masks are drawn from `rng` only when `dropout_on`.
pub fn forward<R: RngCore>(
    params: &ModelParams,
    cfg: &NetworkConfig,
    batch: &Tensor,
    dropout_on: bool,
    rng: &mut R,
) -> Result<(Tensor, ForwardCache), NnError> {
    check_batch(cfg, batch)?;
    params.check_matches(cfg)?;
    let shapes = cfg.layer_shapes()?;
    let bsz = batch.rows();
    let mut inputs = Vec::with_capacity(cfg.layers.len());
    let mut states = Vec::with_capacity(cfg.layers.len());
    let mut act = batch.clone();
    let mut p = 0;
    for (li, layer) in cfg.layers.iter().enumerate() {
        let (next, state) = layer_forward(
            layer,
            &act,
            &shapes[li],
            &shapes[li + 1],
            params,
            &mut p,
            if dropout_on {
                Some(&mut *rng as &mut dyn RngCore)
            } else {
                None
            },
        );
        let mut next_shape = vec![bsz];
        next_shape.extend_from_slice(&shapes[li + 1]);
        inputs.push(act);
        states.push(state);
        act = Tensor::from_raw(next_shape, next);
    }
    let probs = softmax(&act);
    Ok((
        probs.clone(),
        ForwardCache {
            inputs,
            states,
            probs,
        },
    ))
}

/// Inference-only forward pass: dropout off, no cache retained.
pub fn predict(
    params: &ModelParams,
    cfg: &NetworkConfig,
    batch: &Tensor,
) -> Result<Tensor, NnError> {
    check_batch(cfg, batch)?;
    params.check_matches(cfg)?;
    let shapes = cfg.layer_shapes()?;
    let bsz = batch.rows();
    let mut act = batch.clone();
    let mut p = 0;
    for (li, layer) in cfg.layers.iter().enumerate() {
        let (next, _) = layer_forward(
            layer,
            &act,
            &shapes[li],
            &shapes[li + 1],
            params,
            &mut p,
            None,
        );
        let mut next_shape = vec![bsz];
        next_shape.extend_from_slice(&shapes[li + 1]);
        act = Tensor::from_raw(next_shape, next);
    }
    Ok(softmax(&act))
}

fn layer_forward(
    layer: &LayerSpec,
    act: &Tensor,
    in_shape: &[usize],
    out_shape: &[usize],
    params: &ModelParams,
    p: &mut usize,
    rng: Option<&mut dyn RngCore>,
) -> (Vec<f64>, LayerState) {
    let bsz = act.rows();
    let in_len: usize = in_shape.iter().product();
    let out_len: usize = out_shape.iter().product();
    match *layer {
        LayerSpec::Conv2d { kernel, stride, .. } => {
            let w = params.tensors[*p].data();
            let b = params.tensors[*p + 1].data();
            *p += 2;
            let mut out = vec![0.0; bsz * out_len];
            for (x, y) in act.data().chunks(in_len).zip(out.chunks_mut(out_len)) {
                conv_forward(x, in_shape, w, b, kernel, stride, y, out_shape);
            }
            (out, LayerState::None)
        }
        LayerSpec::MaxPool { kernel } => {
            let mut out = vec![0.0; bsz * out_len];
            let mut idx = vec![0usize; bsz * out_len];
            for ((x, y), ix) in act
                .data()
                .chunks(in_len)
                .zip(out.chunks_mut(out_len))
                .zip(idx.chunks_mut(out_len))
            {
                pool_forward(x, in_shape, kernel, y, ix, out_shape);
            }
            (out, LayerState::Argmax(idx))
        }
        LayerSpec::Dense { out_dim } => {
            let w = params.tensors[*p].data();
            let b = params.tensors[*p + 1].data();
            *p += 2;
            let mut out = vec![0.0; bsz * out_dim];
            for (x, y) in act.data().chunks(in_len).zip(out.chunks_mut(out_dim)) {
                for (o, yo) in y.iter_mut().enumerate() {
                    let row = &w[o * in_len..(o + 1) * in_len];
                    *yo = b[o] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
                }
            }
            (out, LayerState::None)
        }
        LayerSpec::Relu => (
            act.data().iter().map(|&v| v.max(0.0)).collect(),
            LayerState::None,
        ),
        LayerSpec::Dropout { rate } => match rng {
            Some(rng) if rate > 0.0 => {
                let scale = 1.0 / (1.0 - rate);
                let mask: Vec<f64> = (0..act.len())
                    .map(|_| if rng.gen::<f64>() >= rate { scale } else { 0.0 })
                    .collect();
                let out = act.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
                (out, LayerState::Mask(mask))
            }
            _ => (act.data().to_vec(), LayerState::None),
        },
        LayerSpec::Flatten => (act.data().to_vec(), LayerState::None),
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    x: &[f64],
    in_shape: &[usize],
    w: &[f64],
    b: &[f64],
    k: usize,
    s: usize,
    y: &mut [f64],
    out_shape: &[usize],
) {
    let (c_in, h, wd) = (in_shape[0], in_shape[1], in_shape[2]);
    let (c_out, oh, ow) = (out_shape[0], out_shape[1], out_shape[2]);
    for o in 0..c_out {
        let plane = &mut y[o * oh * ow..(o + 1) * oh * ow];
        plane.fill(b[o]);
        for c in 0..c_in {
            for ky in 0..k {
                for kx in 0..k {
                    let wv = w[((o * c_in + c) * k + ky) * k + kx];
                    for r in 0..oh {
                        let src = &x[(c * h + r * s + ky) * wd..];
                        let dst = &mut plane[r * ow..(r + 1) * ow];
                        if s == 1 {
                            for (d, v) in dst.iter_mut().zip(&src[kx..kx + ow]) {
                                *d += wv * v;
                            }
                        } else {
                            for (col, d) in dst.iter_mut().enumerate() {
                                *d += wv * src[col * s + kx];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn pool_forward(
    x: &[f64],
    in_shape: &[usize],
    k: usize,
    y: &mut [f64],
    idx: &mut [usize],
    out_shape: &[usize],
) {
    let (h, w) = (in_shape[1], in_shape[2]);
    let (c_n, oh, ow) = (out_shape[0], out_shape[1], out_shape[2]);
    for c in 0..c_n {
        for r in 0..oh {
            for col in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = 0;
                for dy in 0..k {
                    for dx in 0..k {
                        let i = (c * h + r * k + dy) * w + col * k + dx;
                        if x[i] > best {
                            best = x[i];
                            best_i = i;
                        }
                    }
                }
                let o = (c * oh + r) * ow + col;
                y[o] = best;
                idx[o] = best_i;
            }
        }
    }
}

/// Back-propagates `dlogits` (gradient of the loss w.r.t. the pre-softmax
/// outputs, shape `(batch, classes)`) and returns parameter gradients.
pub fn backward(
    params: &ModelParams,
    cfg: &NetworkConfig,
    cache: &ForwardCache,
    dlogits: &Tensor,
) -> Result<ModelParams, NnError> {
    params.check_matches(cfg)?;
    if cache.inputs.len() != cfg.layers.len() {
        return Err(NnError::StaleCache(format!(
            "cache has {} layers, network has {}",
            cache.inputs.len(),
            cfg.layers.len()
        )));
    }
    let bsz = cache.batch_size();
    if dlogits.shape() != [bsz, cfg.classes] {
        return Err(NnError::ShapeMismatch {
            expected: format!("[{bsz}, {}]", cfg.classes),
            found: format!("{:?}", dlogits.shape()),
        });
    }
    let shapes = cfg.layer_shapes()?;
    for (li, input) in cache.inputs.iter().enumerate() {
        if input.shape()[1..] != shapes[li][..] || input.rows() != bsz {
            return Err(NnError::StaleCache(format!(
                "layer {li} input {:?} does not match config",
                input.shape()
            )));
        }
    }
    let mut grads = ModelParams::zeros(cfg)?;
    let mut p = params.tensors.len();
    let mut delta = dlogits.data().to_vec();
    for li in (0..cfg.layers.len()).rev() {
        let input = &cache.inputs[li];
        let in_shape = &shapes[li];
        let out_shape = &shapes[li + 1];
        let in_len: usize = in_shape.iter().product();
        let out_len: usize = out_shape.iter().product();
        delta = match (cfg.layers[li], &cache.states[li]) {
            (LayerSpec::Conv2d { kernel, stride, .. }, _) => {
                p -= 2;
                let w = params.tensors[p].data();
                let (gw, gb) = split_pair(&mut grads.tensors, p);
                let mut dx = vec![0.0; bsz * in_len];
                for ((x, dy), dxs) in input
                    .data()
                    .chunks(in_len)
                    .zip(delta.chunks(out_len))
                    .zip(dx.chunks_mut(in_len))
                {
                    conv_backward(x, in_shape, w, kernel, stride, dy, out_shape, gw, gb, dxs);
                }
                dx
            }
            (LayerSpec::MaxPool { .. }, LayerState::Argmax(idx)) => {
                let mut dx = vec![0.0; bsz * in_len];
                for ((dy, ix), dxs) in delta
                    .chunks(out_len)
                    .zip(idx.chunks(out_len))
                    .zip(dx.chunks_mut(in_len))
                {
                    for (g, &i) in dy.iter().zip(ix) {
                        dxs[i] += g;
                    }
                }
                dx
            }
            (LayerSpec::Dense { out_dim }, _) => {
                p -= 2;
                let w = params.tensors[p].data();
                let (gw, gb) = split_pair(&mut grads.tensors, p);
                let mut dx = vec![0.0; bsz * in_len];
                for ((x, dy), dxs) in input
                    .data()
                    .chunks(in_len)
                    .zip(delta.chunks(out_dim))
                    .zip(dx.chunks_mut(in_len))
                {
                    for (o, &g) in dy.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        gb[o] += g;
                        let grow = &mut gw[o * in_len..(o + 1) * in_len];
                        for (gwv, xv) in grow.iter_mut().zip(x) {
                            *gwv += g * xv;
                        }
                        let wrow = &w[o * in_len..(o + 1) * in_len];
                        for (d, wv) in dxs.iter_mut().zip(wrow) {
                            *d += g * wv;
                        }
                    }
                }
                dx
            }
            (LayerSpec::Relu, _) => delta
                .iter()
                .zip(input.data())
                .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                .collect(),
            (LayerSpec::Dropout { .. }, LayerState::Mask(mask)) => {
                delta.iter().zip(mask).map(|(g, m)| g * m).collect()
            }
            (LayerSpec::Dropout { .. }, _) | (LayerSpec::Flatten, _) => delta,
            (LayerSpec::MaxPool { .. }, _) => {
                return Err(NnError::StaleCache(format!(
                    "layer {li} has no pooling indices"
                )))
            }
        };
    }
    Ok(grads)
}

fn split_pair(tensors: &mut [Tensor], p: usize) -> (&mut [f64], &mut [f64]) {
    let (a, b) = tensors[p..p + 2].split_at_mut(1);
    (a[0].data_mut(), b[0].data_mut())
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    in_shape: &[usize],
    w: &[f64],
    k: usize,
    s: usize,
    dy: &[f64],
    out_shape: &[usize],
    gw: &mut [f64],
    gb: &mut [f64],
    dx: &mut [f64],
) {
    let (c_in, h, wd) = (in_shape[0], in_shape[1], in_shape[2]);
    let (c_out, oh, ow) = (out_shape[0], out_shape[1], out_shape[2]);
    for o in 0..c_out {
        let plane = &dy[o * oh * ow..(o + 1) * oh * ow];
        gb[o] += plane.iter().sum::<f64>();
        for c in 0..c_in {
            for ky in 0..k {
                for kx in 0..k {
                    let wi = ((o * c_in + c) * k + ky) * k + kx;
                    let wv = w[wi];
                    let mut acc = 0.0;
                    for r in 0..oh {
                        let base = (c * h + r * s + ky) * wd;
                        let g = &plane[r * ow..(r + 1) * ow];
                        if s == 1 {
                            let src = &x[base + kx..base + kx + ow];
                            acc += g.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                            let dst = &mut dx[base + kx..base + kx + ow];
                            for (d, gv) in dst.iter_mut().zip(g) {
                                *d += wv * gv;
                            }
                        } else {
                            for (col, gv) in g.iter().enumerate() {
                                let i = base + col * s + kx;
                                acc += gv * x[i];
                                dx[i] += wv * gv;
                            }
                        }
                    }
                    gw[wi] += acc;
                }
            }
        }
    }
}
