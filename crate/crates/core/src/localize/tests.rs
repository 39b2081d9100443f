use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn small_grid() -> RoomGrid {
    RoomGrid::for_room(6.0, 4.0, 0.5).unwrap()
}

fn params(theta: f64, gamma: f64, noise_var: f64) -> KernelParams {
    KernelParams {
        theta,
        gamma,
        noise_var,
    }
}

fn random_gps(rng: &mut ChaCha8Rng, k: usize) -> Vec<GpModel> {
    let locations: Vec<Point> = (0..12)
        .map(|_| Point::new(rng.gen_range(0.0..6.0), rng.gen_range(0.0..4.0)))
        .collect();
    let features: Vec<Vec<f64>> = (0..12).map(|_| (0..k).map(|_| rng.gen_range(-3.0..0.0)).collect()).collect();
    let p: Vec<KernelParams> = (0..k).map(|_| params(1.0, rng.gen_range(1.0..4.0), 0.05)).collect();
    condition_location_gps(&locations, &features, &p).unwrap()
}

#[test]
fn grid_node_counts() {
    let coarse = RoomGrid::for_room(30.0, 12.0, 2.0).unwrap();
    assert_eq!((coarse.nx(), coarse.ny(), coarse.len()), (16, 7, 112));
    let fine = RoomGrid::for_room(30.0, 12.0, 0.1).unwrap();
    assert_eq!((fine.nx(), fine.ny()), (301, 121));
    assert_eq!(fine.node(0), Point::new(0.0, 0.0));
    assert_eq!(fine.node(301), Point::new(0.0, 0.1));
    let last = fine.node(fine.len() - 1);
    assert!((last.x - 30.0).abs() < 1e-9 && (last.y - 12.0).abs() < 1e-9);
    assert_eq!(fine.nearest_index(&Point::new(0.04, 0.16)), 2 * 301);
    assert_eq!(fine.nearest_index(&Point::new(-5.0, 99.0)), 120 * 301);
}

#[test]
fn invalid_grids_are_config_errors() {
    assert!(RoomGrid::for_room(3.0, 3.0, 0.0).unwrap_err().is_config());
    assert!(RoomGrid::new((2.0, 1.0), (0.0, 1.0), 0.1).unwrap_err().is_config());
    assert!(RoomGrid::for_room(f64::NAN, 1.0, 0.1).is_err());
}

#[test]
fn map_values_are_floored_and_nan_rejected() {
    let grid = RoomGrid::for_room(1.0, 0.0, 1.0).unwrap();
    let map = LikelihoodMap::new(grid.clone(), vec![f64::NEG_INFINITY, -1e20], MapKind::Likelihood).unwrap();
    assert_eq!(map.log_values(), &[LOG_FLOOR, LOG_FLOOR]);
    assert!(LikelihoodMap::new(grid.clone(), vec![0.0, f64::NAN], MapKind::Likelihood).is_err());
    assert!(LikelihoodMap::new(grid, vec![0.0], MapKind::Likelihood).is_err());
}

#[test]
fn flat_map_when_predictions_are_constant() {
    // training data far outside the room leaves prior predictions everywhere
    let locations = [Point::new(1e6, 1e6), Point::new(-1e6, 1e6)];
    let gps = condition_location_gps(&locations, &[vec![-2.0], vec![-2.0]], &[params(1.0, 3.0, 0.1)]).unwrap();
    let feature = FeatureVector::new(vec![-1.3], crate::dsp::FeatureKind::SnmfWf).unwrap();
    let map = likelihood_map(&feature, &gps, &small_grid()).unwrap();
    let max = map.log_values().iter().cloned().fold(f64::MIN, f64::max);
    let min = map.log_values().iter().cloned().fold(f64::MAX, f64::min);
    assert!(max - min < 1e-9);
    assert_eq!(map.argmax_index(), 0);
}

#[test]
fn map_value_at_matching_node_is_the_gaussian_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let gps = random_gps(&mut rng, 3);
    let grid = small_grid();
    let node = 17;
    let x = grid.node(node).to_array();
    let preds: Vec<Prediction> = gps.iter().map(|gp| gp.predict(&x)).collect();
    let feature = FeatureVector::new(preds.iter().map(|p| p.mean).collect(), crate::dsp::FeatureKind::SnmfWf).unwrap();
    let map = likelihood_map(&feature, &gps, &grid).unwrap();
    let mode: f64 = preds.iter().map(|p| -0.5 * (2.0 * std::f64::consts::PI * p.var).ln()).sum();
    assert!((map.log_values()[node] - mode).abs() < 1e-9);
}

#[test]
fn mismatched_feature_length_is_an_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let gps = random_gps(&mut rng, 3);
    let field = PredictiveField::new(&gps, &small_grid()).unwrap();
    assert!(field.log_likelihood(&[0.0, 1.0]).is_err());
}

#[test]
fn field_agrees_with_pointwise_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let gps = random_gps(&mut rng, 4);
    let grid = small_grid();
    let psi = [-1.0, -2.0, -0.5, -1.5];
    let map = PredictiveField::new(&gps, &grid).unwrap().log_likelihood(&psi).unwrap();
    for (i, p) in grid.nodes().enumerate().step_by(7) {
        let direct: f64 = gps.iter().zip(&psi).map(|(gp, v)| gp.log_density(&p.to_array(), *v)).sum();
        assert!((map.log_values()[i] - direct).abs() <= 1e-9 * direct.abs().max(1.0));
    }
}

#[test]
fn argmax_finds_single_peak() {
    let grid = small_grid();
    let peak = Point::new(3.5, 1.0);
    let values = grid.nodes().map(|p| -p.distance(&peak).powi(2)).collect();
    let map = LikelihoodMap::new(grid, values, MapKind::Likelihood).unwrap();
    assert_eq!(argmax_ml(&map), peak);
}

#[test]
fn flat_map_breaks_ties_at_lowest_y_then_x() {
    let grid = RoomGrid::new((2.0, 5.0), (1.0, 3.0), 0.5).unwrap();
    let map = LikelihoodMap::new(grid.clone(), vec![0.25; grid.len()], MapKind::Likelihood).unwrap();
    assert_eq!(argmax_ml(&map), Point::new(2.0, 1.0));
    // two tied maxima: the one with smaller y wins even with larger x
    let mut values = vec![0.0; grid.len()];
    let hi_y = grid.nearest_index(&Point::new(2.0, 2.5));
    let lo_y = grid.nearest_index(&Point::new(4.5, 1.5));
    values[hi_y] = 1.0;
    values[lo_y] = 1.0;
    let map = LikelihoodMap::new(grid, values, MapKind::Likelihood).unwrap();
    assert_eq!(argmax_ml(&map), Point::new(4.5, 1.5));
}

/// Independent full scan: maximize value, then minimize y, then x.
fn scan_oracle(map: &LikelihoodMap) -> Point {
    let mut best: Option<(f64, Point)> = None;
    for (p, v) in map.grid().nodes().zip(map.log_values()) {
        best = match best {
            None => Some((*v, p)),
            Some((bv, bp)) => {
                let better = *v > bv || (*v == bv && (p.y < bp.y || (p.y == bp.y && p.x < bp.x)));
                Some(if better { (*v, p) } else { (bv, bp) })
            }
        };
    }
    best.unwrap().1
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn argmax_matches_scan_oracle(seed in 0u64..100_000, levels in 1u32..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = small_grid();
        // few distinct levels so ties are common
        let values = (0..grid.len()).map(|_| rng.gen_range(0..levels) as f64).collect();
        let map = LikelihoodMap::new(grid, values, MapKind::Likelihood).unwrap();
        prop_assert_eq!(argmax_ml(&map), scan_oracle(&map));
    }

    #[test]
    fn adding_a_constant_keeps_the_argmax(seed in 0u64..100_000, c in -1e3f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = small_grid();
        let values: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-10.0..0.0)).collect();
        let shifted = values.iter().map(|v| v + c).collect();
        let a = LikelihoodMap::new(grid.clone(), values, MapKind::Likelihood).unwrap();
        let b = LikelihoodMap::new(grid, shifted, MapKind::Likelihood).unwrap();
        prop_assert_eq!(argmax_ml(&a), argmax_ml(&b));
    }

    #[test]
    fn likelihood_is_invariant_to_source_permutation(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gps = random_gps(&mut rng, 4);
        let psi: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..0.0)).collect();
        let order = [2usize, 0, 3, 1];
        let gps_p: Vec<GpModel> = order.iter().map(|&i| gps[i].clone()).collect();
        let psi_p: Vec<f64> = order.iter().map(|&i| psi[i]).collect();
        let grid = small_grid();
        let a = PredictiveField::new(&gps, &grid).unwrap().log_likelihood(&psi).unwrap();
        let b = PredictiveField::new(&gps_p, &grid).unwrap().log_likelihood(&psi_p).unwrap();
        for (x, y) in a.log_values().iter().zip(b.log_values()) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
        }
        prop_assert_eq!(a.argmax(), b.argmax());
    }

    #[test]
    fn refining_the_grid_never_loses_the_maximum(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gps = random_gps(&mut rng, 3);
        let psi: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..0.0)).collect();
        let coarse = RoomGrid::for_room(6.0, 4.0, 0.5).unwrap();
        let fine = RoomGrid::for_room(6.0, 4.0, 0.25).unwrap();
        let a = PredictiveField::new(&gps, &coarse).unwrap().log_likelihood(&psi).unwrap();
        let b = PredictiveField::new(&gps, &fine).unwrap().log_likelihood(&psi).unwrap();
        prop_assert!(b.max_value() >= a.max_value() - 1e-3);
    }
}

#[test]
fn uniform_prior_preserves_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let grid = small_grid();
    for _ in 0..20 {
        let values = (0..grid.len()).map(|_| rng.gen_range(-50.0..0.0)).collect();
        let lik = LikelihoodMap::new(grid.clone(), values, MapKind::Likelihood).unwrap();
        let prior = GaussianPrior::isotropic(Point::new(1.0, 1.0), 1e6).unwrap();
        let post = posterior_map(&lik, &prior).unwrap();
        assert_eq!(post.kind(), MapKind::Posterior);
        assert_eq!(post.argmax(), lik.argmax());
    }
}

#[test]
fn delta_prior_picks_the_nearest_node() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let grid = small_grid();
    let values = (0..grid.len()).map(|_| rng.gen_range(-50.0..0.0)).collect();
    let lik = LikelihoodMap::new(grid.clone(), values, MapKind::Likelihood).unwrap();
    let prior = GaussianPrior::new(Point::new(2.8, 3.1), [[1e-6, 0.0], [0.0, 1e-6]]).unwrap();
    let post = posterior_map(&lik, &prior).unwrap();
    assert_eq!(post.argmax(), Point::new(3.0, 3.0));
}

#[test]
fn posterior_requires_a_likelihood() {
    let grid = small_grid();
    let prior = GaussianPrior::isotropic(Point::new(1.0, 1.0), 2.0).unwrap();
    let prior_map = prior.map(&grid).unwrap();
    assert!(posterior_map(&prior_map, &prior).is_err());
}

#[test]
fn imu_like_prior_shape() {
    let p = imu_like_prior(Point::new(0.0, 0.0), (5.0, 5.0), 5.0).unwrap();
    assert_eq!(p.mean(), Point::new(5.0, 5.0));
    assert_eq!(p.cov(), [[25.0, 0.0], [0.0, 25.0]]);
    let tight = imu_like_prior(Point::new(3.0, 4.0), (0.0, 0.0), 1e-4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let s = tight.sample(|| rng.sample(StandardNormal));
        assert!(s.distance(&Point::new(3.0, 4.0)) < 1e-3);
    }
}

#[test]
fn prior_density_integrates_to_one() {
    let prior = GaussianPrior::new(Point::new(5.0, 4.0), [[2.0, 0.6], [0.6, 1.0]]).unwrap();
    let grid = RoomGrid::new((-10.0, 20.0), (-10.0, 18.0), 0.05).unwrap();
    let total: f64 = grid.nodes().map(|p| prior.log_density(&p).exp()).sum::<f64>() * 0.05 * 0.05;
    assert!((total - 1.0).abs() < 1e-6, "{total}");
}

#[test]
fn non_spd_priors_are_rejected() {
    let m = Point::new(0.0, 0.0);
    assert!(GaussianPrior::new(m, [[1.0, 2.0], [2.0, 1.0]]).is_err());
    assert!(GaussianPrior::new(m, [[1.0, 0.1], [0.0, 1.0]]).is_err());
    assert!(GaussianPrior::new(m, [[-1.0, 0.0], [0.0, -1.0]]).is_err());
    assert!(GaussianPrior::isotropic(m, 0.0).is_err());
}

/// Modified Bessel functions of the first kind by power series.
fn bessel_i(order: u32, x: f64) -> f64 {
    let mut term = (x / 2.0).powi(order as i32) / (1..=order).map(f64::from).product::<f64>();
    let mut sum = term;
    for k in 1..60 {
        let k = k as f64;
        term *= (x / 2.0).powi(2) / (k * (k + order as f64));
        sum += term;
    }
    sum
}

/// Mean of the Rice distribution with offset `nu` and per-axis std `sigma`.
fn rice_mean(nu: f64, sigma: f64) -> f64 {
    let x = -nu * nu / (2.0 * sigma * sigma);
    let laguerre = (x / 2.0).exp() * ((1.0 - x) * bessel_i(0, -x / 2.0) - x * bessel_i(1, -x / 2.0));
    sigma * (std::f64::consts::PI / 2.0).sqrt() * laguerre
}

#[test]
fn sampled_prior_error_matches_rice_mean() {
    let truth = Point::new(10.0, 6.0);
    let prior = imu_like_prior(truth, (5.0, 5.0), 5.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 200_000;
    let mean = (0..n).map(|_| prior.sample(|| rng.sample(StandardNormal)).distance(&truth)).sum::<f64>() / n as f64;
    let oracle = rice_mean(50f64.sqrt(), 5.0);
    assert!((oracle - 9.065).abs() < 1e-3, "{oracle}");
    assert!((mean - oracle).abs() < 0.05, "{mean} vs {oracle}");
    // zero offset reduces to the Rayleigh mean
    assert!((rice_mean(0.0, 5.0) - 5.0 * (std::f64::consts::PI / 2.0).sqrt()).abs() < 1e-12);
}

#[test]
fn probabilities_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let grid = small_grid();
    let values = (0..grid.len()).map(|_| rng.gen_range(-900.0..-800.0)).collect();
    let map = LikelihoodMap::new(grid, values, MapKind::Likelihood).unwrap();
    let p = map.probabilities();
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(p.iter().all(|v| *v > 0.0));
}

#[test]
fn csv_and_sidecar_export() {
    let grid = RoomGrid::for_room(1.0, 0.5, 0.5).unwrap();
    let map = LikelihoodMap::new(grid, vec![-1.0, 2.5, -3.0, 0.0, 1.0, -0.5], MapKind::Likelihood).unwrap();
    let mut buf = Vec::new();
    map.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "x,y,log_value");
    assert_eq!(lines[1], "0,0,-1");
    assert_eq!(lines[2], "0.5,0,2.5");
    assert_eq!(lines[4], "0,0.5,0");
    assert_eq!(lines.len(), 7);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("map.csv");
    map.save(&path).unwrap();
    let side: MapSidecar = crate::io::read_json(&path.with_extension("json")).unwrap();
    assert_eq!(side.argmax, Point::new(0.5, 0.0));
    assert_eq!(side.kind, MapKind::Likelihood);
    assert_eq!(std::fs::read_to_string(&path).unwrap(), text);
}

#[test]
fn regression_interpolates_training_features() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let locations: Vec<Point> = (0..15)
        .map(|_| Point::new(rng.gen_range(0.0..30.0), rng.gen_range(0.0..12.0)))
        .collect();
    let features: Vec<Vec<f64>> = (0..15).map(|_| (0..5).map(|_| rng.gen_range(-4.0..0.0)).collect()).collect();
    let p = params(50.0, 1.0, 1e-9);
    let model = DirectRegression::with_params(&features, &locations, p, p).unwrap();
    for (f, loc) in features.iter().zip(&locations) {
        assert!(model.predict(f).unwrap().distance(loc) < 1e-2);
    }
    assert!(model.predict(&[0.0; 4]).is_err());
}

#[test]
fn regression_with_constant_targets_is_constant() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let features: Vec<Vec<f64>> = (0..10).map(|_| (0..3).map(|_| rng.gen_range(-4.0..0.0)).collect()).collect();
    let locations = vec![Point::new(7.0, 3.0); 10];
    let model = DirectRegression::fit(&features, &locations, &GpFitConfig::default()).unwrap();
    for _ in 0..5 {
        let q: Vec<f64> = (0..3).map(|_| rng.gen_range(-6.0..2.0)).collect();
        assert!(model.predict(&q).unwrap().distance(&Point::new(7.0, 3.0)) < 1e-6);
    }
}

#[test]
fn regression_fit_tracks_a_smooth_map() {
    // features are an invertible smooth function of location
    let locations: Vec<Point> = (0..8)
        .flat_map(|i| (0..4).map(move |j| Point::new(4.0 * i as f64, 4.0 * j as f64)))
        .collect();
    let features: Vec<Vec<f64>> = locations.iter().map(|p| vec![p.x / 10.0, (p.y / 8.0).sin(), 0.3 * p.x - 0.1 * p.y]).collect();
    let model = DirectRegression::fit(&features, &locations, &GpFitConfig::default()).unwrap();
    let probe = Point::new(14.0, 6.0);
    let f = [probe.x / 10.0, (probe.y / 8.0).sin(), 0.3 * probe.x - 0.1 * probe.y];
    assert!(model.predict(&f).unwrap().distance(&probe) < 1.5);
    assert!(DirectRegression::fit(&features[..1], &locations[..1], &GpFitConfig::default()).is_err());
}
