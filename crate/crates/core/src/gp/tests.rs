use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random_inputs(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, 2, |_, j| {
        if j == 0 {
            rng.gen_range(0.0..30.0)
        } else {
            rng.gen_range(0.0..12.0)
        }
    })
}

fn random_params(rng: &mut ChaCha8Rng) -> KernelParams {
    KernelParams {
        theta: rng.gen_range(0.2..3.0),
        gamma: rng.gen_range(3.0..9.0),
        noise_var: rng.gen_range(0.01..0.5),
    }
}

/// Draws targets from the GP prior itself.
fn sample_prior(rng: &mut ChaCha8Rng, inputs: &DMatrix<f64>, p: &KernelParams) -> Vec<f64> {
    let n = inputs.nrows();
    let mut c = DMatrix::from_fn(n, n, |i, j| {
        let a: Vec<f64> = inputs.row(i).iter().copied().collect();
        let b: Vec<f64> = inputs.row(j).iter().copied().collect();
        kernel(&a, &b, p)
    });
    for i in 0..n {
        c[(i, i)] += p.noise_var + 1e-10;
    }
    let l = c.cholesky().unwrap().l();
    let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
    (l * z).iter().copied().collect()
}

#[test]
fn kernel_closed_forms() {
    let p = KernelParams {
        theta: 2.0,
        gamma: 3.0,
        noise_var: 0.1,
    };
    assert_eq!(kernel(&[1.0, 2.0], &[1.0, 2.0], &p), 2.0);
    assert_eq!(kernel(&[0.0, 0.0], &[3.0, 0.0], &p), kernel(&[3.0, 0.0], &[0.0, 0.0], &p));
    let v = kernel(&[0.0, 0.0], &[3.0, 0.0], &p);
    assert!((v - 2.0 * (-0.5f64).exp()).abs() < 1e-15);
    assert!((v - 1.21306).abs() < 1e-5);
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-2)
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let h = 1e-5;
    for draw in 0..10 {
        let inputs = random_inputs(&mut rng, 25);
        let p = random_params(&mut rng);
        let targets = sample_prior(&mut rng, &inputs, &p);
        let eval = random_params(&mut rng);
        let ev = log_marginal_likelihood(&inputs, &targets, &eval).unwrap();
        let base = [eval.theta, eval.gamma, eval.noise_var];
        for i in 0..3 {
            let mut plus = base;
            let mut minus = base;
            plus[i] += h;
            minus[i] -= h;
            let at = |v: [f64; 3]| {
                let q = KernelParams {
                    theta: v[0],
                    gamma: v[1],
                    noise_var: v[2],
                };
                log_marginal_likelihood(&inputs, &targets, &q).unwrap().value
            };
            let fd = (at(plus) - at(minus)) / (2.0 * h);
            assert!(rel_err(ev.grad[i], fd) < 1e-4, "draw {draw} param {i}: {} vs {fd}", ev.grad[i]);
        }
    }
}

#[test]
fn unconstrained_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let reparam = Reparam { gamma_min: 3.0 };
    let h = 1e-5;
    for _ in 0..5 {
        let inputs = random_inputs(&mut rng, 20);
        let p = random_params(&mut rng);
        let targets = sample_prior(&mut rng, &inputs, &p);
        let u = [rng.gen_range(-2.0..1.0), rng.gen_range(-1.0..2.0), rng.gen_range(-4.0..0.0)];
        let ev = log_marginal_likelihood(&inputs, &targets, &reparam.params(u)).unwrap();
        let g = reparam.pull_back(u, ev.grad);
        for i in 0..3 {
            let mut plus = u;
            let mut minus = u;
            plus[i] += h;
            minus[i] -= h;
            let at = |v| log_marginal_likelihood(&inputs, &targets, &reparam.params(v)).unwrap().value;
            let fd = (at(plus) - at(minus)) / (2.0 * h);
            assert!(rel_err(g[i], fd) < 1e-4, "{} vs {fd}", g[i]);
        }
    }
}

#[test]
fn reparam_round_trips_and_respects_gamma_floor() {
    let r = Reparam { gamma_min: 3.0 };
    let p = KernelParams {
        theta: 0.7,
        gamma: 4.2,
        noise_var: 0.05,
    };
    let back = r.params(r.unconstrained(&p));
    assert!((back.theta - p.theta).abs() < 1e-12);
    assert!((back.gamma - p.gamma).abs() < 1e-12);
    assert!((back.noise_var - p.noise_var).abs() < 1e-12);
    assert!(r.params([0.0, -50.0, 0.0]).gamma >= 3.0);
    assert!(softplus(-800.0) >= 0.0 && softplus(800.0) == 800.0);
}

#[test]
fn constant_targets_predict_the_constant() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inputs = random_inputs(&mut rng, 15);
    let targets = vec![4.25; 15];
    let gp = GpModel::fit(inputs, &targets, None, &GpFitConfig::default()).unwrap();
    for _ in 0..10 {
        let x = [rng.gen_range(-5.0..35.0), rng.gen_range(-5.0..17.0)];
        assert!((gp.predict(&x).mean - 4.25).abs() < 1e-6);
    }
}

#[test]
fn recovers_length_scale_from_prior_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let truth = KernelParams {
        theta: 1.0,
        gamma: 5.0,
        noise_var: 0.01,
    };
    let inputs = random_inputs(&mut rng, 100);
    let targets = sample_prior(&mut rng, &inputs, &truth);
    let gp = GpModel::fit(inputs, &targets, None, &GpFitConfig::default()).unwrap();
    let gamma = gp.params().gamma;
    assert!((3.0..=8.0).contains(&gamma), "gamma {gamma}");
}

#[test]
fn fit_never_ends_below_its_start() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..3 {
        let inputs = random_inputs(&mut rng, 30);
        let p = random_params(&mut rng);
        let targets = sample_prior(&mut rng, &inputs, &p);
        let mean = targets.iter().sum::<f64>() / 30.0;
        let centered: Vec<f64> = targets.iter().map(|t| t - mean).collect();
        let init = KernelParams::initial_guess(&centered);
        let start = log_marginal_likelihood(&inputs, &centered, &init).unwrap().value;
        let gp = GpModel::fit(inputs, &targets, None, &GpFitConfig::default()).unwrap();
        assert!(gp.log_marginal_likelihood().unwrap() >= start - 1e-9 * start.abs());
        assert!(gp.params().gamma >= 3.0);
    }
}

#[test]
fn interpolates_training_points_with_tiny_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let inputs = random_inputs(&mut rng, 12);
    let targets: Vec<f64> = (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let p = KernelParams {
        theta: 1.0,
        gamma: 3.0,
        noise_var: 1e-9,
    };
    let gp = GpModel::with_params(inputs.clone(), &targets, p).unwrap();
    for i in 0..12 {
        let x = [inputs[(i, 0)], inputs[(i, 1)]];
        assert!((gp.predict(&x).mean - targets[i]).abs() < 1e-3);
    }
}

#[test]
fn far_queries_revert_to_the_prior() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let inputs = random_inputs(&mut rng, 20);
    let targets: Vec<f64> = (0..20).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let p = random_params(&mut rng);
    let gp = GpModel::with_params(inputs, &targets, p).unwrap();
    let pred = gp.predict(&[1e4, -1e4]);
    let mean = gp.target_mean();
    assert!((pred.mean - mean).abs() <= 1e-6 * mean.abs().max(1e-300));
    let prior = p.theta + p.noise_var;
    assert!((pred.var - prior).abs() <= 1e-6 * prior);
}

/// Predictive moments through an explicit dense inverse (LU), independent of
/// the Cholesky path.
fn dense_oracle(gp: &GpModel, x: &[f64]) -> (f64, f64) {
    let p = gp.params();
    let n = gp.n_train();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| gp.inputs().row(i).iter().copied().collect()).collect();
    let mut c = DMatrix::from_fn(n, n, |i, j| kernel(&rows[i], &rows[j], p));
    let diag = p.noise_var + gp.jitter() * (p.theta + p.noise_var);
    for i in 0..n {
        c[(i, i)] += diag;
    }
    let inv = c.try_inverse().unwrap();
    let ks = DVector::from_iterator(n, rows.iter().map(|r| kernel(r, x, p)));
    let y = DVector::from_iterator(n, gp.targets().iter().map(|t| t - gp.target_mean()));
    let mean = gp.target_mean() + (ks.transpose() * &inv * y)[0];
    let var = p.theta + p.noise_var - (ks.transpose() * &inv * &ks)[0];
    (mean, var)
}

#[test]
fn predictions_match_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let inputs = random_inputs(&mut rng, 40);
    let p = random_params(&mut rng);
    let targets: Vec<f64> = sample_prior(&mut rng, &inputs, &p).iter().map(|t| t + 3.0).collect();
    let gp = GpModel::with_params(inputs, &targets, p).unwrap();
    for _ in 0..20 {
        let x = [rng.gen_range(0.0..30.0), rng.gen_range(0.0..12.0)];
        let pred = gp.predict(&x);
        let (mean, var) = dense_oracle(&gp, &x);
        assert!((pred.mean - mean).abs() <= 1e-8 * mean.abs());
        assert!((pred.var - var).abs() <= 1e-8 * var.abs());
    }
}

#[test]
fn batched_prediction_agrees_with_pointwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let inputs = random_inputs(&mut rng, 30);
    let p = random_params(&mut rng);
    let targets = sample_prior(&mut rng, &inputs, &p);
    let gp = GpModel::with_params(inputs, &targets, p).unwrap();
    let queries = random_inputs(&mut rng, PREDICT_BLOCK + 17);
    let batch = gp.predict_many(&queries);
    for (i, b) in batch.iter().enumerate().step_by(97) {
        let single = gp.predict(&[queries[(i, 0)], queries[(i, 1)]]);
        assert!((b.mean - single.mean).abs() <= 1e-10 * single.mean.abs().max(1.0));
        assert!((b.var - single.var).abs() <= 1e-9 * single.var);
    }
}

#[test]
fn log_density_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let inputs = random_inputs(&mut rng, 10);
    let targets: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let gp = GpModel::with_params(inputs, &targets, random_params(&mut rng)).unwrap();
    let x = [7.0, 3.0];
    let pred = gp.predict(&x);
    let mode = gp.log_density(&x, pred.mean);
    assert!((mode + 0.5 * (2.0 * PI * pred.var).ln()).abs() < 1e-12);
    let sd = pred.var.sqrt();
    assert!((gp.log_density(&x, pred.mean + sd) - (mode - 0.5)).abs() < 1e-12);
    assert!((gp.log_density(&x, pred.mean - sd) - (mode - 0.5)).abs() < 1e-12);

    // trapezoid over ±8 sd
    let n = 20_000;
    let (lo, hi) = (pred.mean - 8.0 * sd, pred.mean + 8.0 * sd);
    let step = (hi - lo) / n as f64;
    let mut integral = 0.0;
    for i in 0..=n {
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        integral += w * gp.log_density(&x, lo + i as f64 * step).exp();
    }
    integral *= step;
    assert!((integral - 1.0).abs() < 1e-6, "{integral}");
}

#[test]
fn rejects_bad_training_sets() {
    let p = KernelParams {
        theta: 1.0,
        gamma: 3.0,
        noise_var: 0.1,
    };
    let one = DMatrix::from_row_slice(1, 2, &[0.0, 0.0]);
    assert!(GpModel::with_params(one, &[1.0], p).is_err());
    let two = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]);
    assert!(GpModel::with_params(two.clone(), &[1.0], p).is_err());
    assert!(GpModel::with_params(two, &[1.0, f64::NAN], p).is_err());
}

#[test]
fn duplicate_locations_are_handled() {
    let inputs = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 0.0, 0.0, 5.0, 5.0]);
    let p = KernelParams {
        theta: 1.0,
        gamma: 3.0,
        noise_var: 1e-12,
    };
    let gp = GpModel::with_params(inputs, &[1.0, 1.2, -0.5], p).unwrap();
    assert!(gp.predict(&[0.0, 0.0]).mean.is_finite());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn covariance_is_symmetric_and_factorizable(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = random_inputs(&mut rng, 20);
        let p = random_params(&mut rng);
        let k = rbf_matrix(&inputs, &p);
        prop_assert_eq!(&k, &k.transpose());
        prop_assert!(factorize(&inputs, &p).is_ok());
    }

    #[test]
    fn variance_stays_in_range(seed in 0u64..10_000, qx in -10.0f64..40.0, qy in -10.0f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = random_inputs(&mut rng, 15);
        let p = random_params(&mut rng);
        let targets = sample_prior(&mut rng, &inputs, &p);
        let gp = GpModel::with_params(inputs, &targets, p).unwrap();
        let v = gp.predict(&[qx, qy]).var;
        prop_assert!(v > 0.0 && v <= (p.theta + p.noise_var) * (1.0 + 1e-12));
    }

    #[test]
    fn predictions_are_translation_invariant(seed in 0u64..10_000, dx in -50.0f64..50.0, dy in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = random_inputs(&mut rng, 15);
        let p = random_params(&mut rng);
        let targets = sample_prior(&mut rng, &inputs, &p);
        let shifted = DMatrix::from_fn(15, 2, |i, j| inputs[(i, j)] + if j == 0 { dx } else { dy });
        let a = GpModel::with_params(inputs, &targets, p).unwrap();
        let b = GpModel::with_params(shifted, &targets, p).unwrap();
        for _ in 0..5 {
            let q = [rng.gen_range(0.0..30.0), rng.gen_range(0.0..12.0)];
            let pa = a.predict(&q);
            let pb = b.predict(&[q[0] + dx, q[1] + dy]);
            prop_assert!((pa.mean - pb.mean).abs() <= 1e-9 * pa.mean.abs().max(1.0));
            prop_assert!((pa.var - pb.var).abs() <= 1e-9 * pa.var);
        }
    }
}
