use rand::Rng;
use sssl::nn::{
    analytic_gradient, compare_gradients, grad_check, loss, rng_from_seed, ModelParams,
    NetworkConfig, NnError, Tensor, DEFAULT_CONV_ARCH,
};

/// Default backbone on a 16x16 input, small enough for an exhaustive-ish probe.
fn small_backbone() -> NetworkConfig {
    NetworkConfig::from_arch(vec![1, 16, 16], DEFAULT_CONV_ARCH, 4).unwrap()
}

fn random_problem(cfg: &NetworkConfig, seed: u64, batch: usize) -> (ModelParams, Tensor, Tensor) {
    let mut rng = rng_from_seed(seed);
    let mut params = ModelParams::init(cfg, &mut rng).unwrap();
    for t in params.tensors.iter_mut().skip(1).step_by(2) {
        for b in t.data_mut() {
            *b = rng.gen_range(-0.1..0.1);
        }
    }
    let n = batch * cfg.input_len();
    let mut shape = vec![batch];
    shape.extend_from_slice(&cfg.input_shape);
    let x = Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..cfg.classes)).collect();
    (params, x, loss::one_hot(&labels, cfg.classes))
}

#[test]
fn backbone_gradients_match_central_differences() {
    let cfg = small_backbone();
    assert!(cfg.param_count().unwrap() <= 10_000);
    for seed in 0..10 {
        let (params, x, y) = random_problem(&cfg, seed, 3);
        let err = grad_check(
            &cfg,
            &params,
            &x,
            &y,
            1e-4,
            false,
            &mut rng_from_seed(100 + seed),
        )
        .unwrap();
        assert!(err <= 1e-4, "seed {seed}: max relative error {err:e}");
    }
}

#[test]
fn two_conv_one_dense_net_passes() {
    let cfg = NetworkConfig::from_arch(vec![2, 9, 9], "conv:3:3:1,relu,conv:4:2:2,relu,flatten", 3)
        .unwrap();
    let (params, x, y) = random_problem(&cfg, 42, 4);
    let err = grad_check(&cfg, &params, &x, &y, 1e-4, false, &mut rng_from_seed(7)).unwrap();
    assert!(err <= 1e-4, "max relative error {err:e}");
}

#[test]
fn perturbed_gradient_is_caught() {
    let cfg = NetworkConfig::from_arch(vec![6], "dense:5,relu", 3).unwrap();
    let (params, x, y) = random_problem(&cfg, 3, 5);
    let mut analytic = analytic_gradient(&cfg, &params, &x, &y).unwrap();
    // Largest-magnitude coordinate of the first weight tensor, scaled by 1.1.
    let w = analytic.tensors[0].data_mut();
    let i = (0..w.len())
        .max_by(|&a, &b| w[a].abs().total_cmp(&w[b].abs()))
        .unwrap();
    w[i] *= 1.1;
    // Net has fewer than MIN_COORDS parameters, so every coordinate is probed.
    let err = compare_gradients(
        &cfg,
        &params,
        &x,
        &y,
        1e-4,
        &analytic,
        &mut rng_from_seed(0),
    )
    .unwrap();
    assert!(err > 1e-2, "fault not detected: {err:e}");
}

#[test]
fn dropout_active_check_is_refused() {
    let cfg = small_backbone();
    let (params, x, y) = random_problem(&cfg, 0, 2);
    assert!(matches!(
        grad_check(&cfg, &params, &x, &y, 1e-4, true, &mut rng_from_seed(0)),
        Err(NnError::DropoutActive)
    ));
}

#[test]
fn inverted_dropout_is_unbiased() {
    // Two inputs, dropout, then a dense layer wired so that
    // logit0 − logit1 = x0 after dropout; recover it as ln(p0 / p1).
    let cfg = NetworkConfig::from_arch(vec![2], "dropout:0.3", 2).unwrap();
    let mut params = ModelParams::zeros(&cfg).unwrap();
    params.tensors[0].data_mut()[0] = 1.0;
    let x = Tensor::new(vec![1, 2], vec![0.9, 0.0]).unwrap();
    let mut rng = rng_from_seed(2024);
    let draws = 20_000;
    let mut mean = 0.0;
    for _ in 0..draws {
        let (p, _) = sssl::nn::forward(&params, &cfg, &x, true, &mut rng).unwrap();
        mean += (p.data()[0] / p.data()[1]).ln();
    }
    mean /= draws as f64;
    assert!((mean - 0.9).abs() <= 0.02 * 0.9, "mean unit output {mean}");
}

#[test]
fn kink_straddling_coordinates_are_skipped() {
    // One hidden ReLU unit whose input sits 5e-5 above zero: a 1e-4 probe of
    // its weight or bias crosses the kink.
    let cfg = NetworkConfig::from_arch(vec![1], "dense:1,relu", 2).unwrap();
    let mut params = ModelParams::zeros(&cfg).unwrap();
    params.tensors[0].data_mut()[0] = 1.0;
    params.tensors[1].data_mut()[0] = -0.5 + 5e-5;
    params.tensors[2].data_mut().copy_from_slice(&[1.0, -1.0]);
    let x = Tensor::new(vec![1, 1], vec![0.5]).unwrap();
    let y = loss::one_hot(&[1], 2);
    let err = grad_check(&cfg, &params, &x, &y, 1e-4, false, &mut rng_from_seed(0)).unwrap();
    assert!(err <= 1e-4, "max relative error {err:e}");

    // The skipped coordinate really is a kink: a one-sided quotient on the
    // active side agrees with the analytic gradient.
    let analytic = analytic_gradient(&cfg, &params, &x, &y).unwrap();
    let loss_with_bias = |b: f64| {
        let mut p = params.clone();
        p.tensors[1].data_mut()[0] = b;
        loss::cross_entropy(&sssl::nn::predict(&p, &cfg, &x).unwrap(), &y).unwrap()
    };
    let b = params.tensors[1].data()[0];
    let one_sided = (loss_with_bias(b + 2e-5) - loss_with_bias(b)) / 2e-5;
    assert!((one_sided - analytic.tensors[1].data()[0]).abs() < 1e-4);
}
