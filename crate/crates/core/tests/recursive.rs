mod common;

use cokrige::gp::{fit_level, NuggetPolicy};
use cokrige::joint::{build_joint, params_from_model, prior_variance};
use cokrige::synthetic::{nested_instance, query_points, Adjustment};
use cokrige::{
    fit, Error, KernelSpec, LevelData, LevelSpec, MultiFidelityModel, OptimizeOptions, PredictionMode, Prior,
    ThetaChoice,
};
use common::{close, kriging_oracle, random_model};

fn fixed(theta: f64, d: usize) -> ThetaChoice<f64> {
    ThetaChoice::Fixed(KernelSpec::matern52(vec![theta; d]).unwrap())
}

fn fit_fixed(levels: Vec<LevelData>, theta: f64) -> MultiFidelityModel {
    let d = levels[0].dim();
    fit(levels.into_iter().map(|l| LevelSpec::new(l, fixed(theta, d))).collect(), &OptimizeOptions::default()).unwrap()
}

fn universal_sigma2(model: &MultiFidelityModel) -> Vec<f64> {
    model.levels().iter().map(|l| l.fitted.sigma2_posterior_mean().unwrap()).collect()
}

#[test]
fn one_level_is_plain_kriging() {
    let levels = nested_instance(&[20], 2, 4, Adjustment::Constant).unwrap();
    let model = fit_fixed(levels.clone(), 0.3);
    let kernel = KernelSpec::matern52(vec![0.3, 0.3]).unwrap();
    let direct = fit_level(1, &levels[0], &kernel, &Prior::NonInformative, NuggetPolicy::Escalate).unwrap();
    let fitted = &model.levels()[0].fitted;
    assert_eq!(fitted.trend_mean, direct.trend_mean);
    assert_eq!((fitted.q, fitted.a), (direct.q, direct.a));

    let sigma2 = model.default_sigma2().unwrap();
    let beta = fitted.trend_mean.as_slice();
    for x in query_points(30, 2, 1) {
        let p = model.predict_simple(&x, &sigma2).unwrap();
        let (m, v) = kriging_oracle(&levels[0], &fitted.kernel, Some(beta), sigma2[0], &x);
        assert!(close(p.mean(), m, 1e-10, 1e-10) && close(p.variance(), v, 1e-10, 1e-10));
    }
}

#[test]
fn exact_scaling_is_recovered() {
    let levels = nested_instance(&[20, 8], 1, 2, Adjustment::Constant).unwrap();
    let model = fit_fixed(levels, 0.3);
    let lower = model.levels()[1].data.lower_observations.clone().unwrap();
    let mut top = model.levels()[1].data.clone();
    top.observations = lower * 2.0;
    let model = fit_fixed(vec![model.levels()[0].data.clone(), top], 0.3);
    let fitted = &model.levels()[1].fitted;
    assert!((fitted.trend_mean[0] - 2.0).abs() < 1e-8);
    assert!(fitted.trend_mean[1].abs() < 1e-8);
    assert!(fitted.q < 1e-16, "{}", fitted.q);
}

#[test]
fn relabeling_level_one_changes_nothing() {
    let levels = nested_instance(&[25, 10], 2, 6, Adjustment::Affine).unwrap();
    let model = fit_fixed(levels.clone(), 0.4);
    let order: Vec<usize> = (0..25).map(|i| (i * 7) % 25).collect();
    let shuffled = vec![levels[0].subset(&order), levels[1].clone()];
    let other = fit_fixed(shuffled, 0.4);
    for x in query_points(40, 2, 3) {
        for mode in [PredictionMode::Simple, PredictionMode::Universal] {
            let (a, b) = (model.predict(&x, mode).unwrap(), other.predict(&x, mode).unwrap());
            assert!(close(a.mean(), b.mean(), 1e-10, 1e-10));
            assert!(close(a.variance(), b.variance(), 1e-10, 1e-12));
        }
    }
}

#[test]
fn interpolates_the_top_level() {
    for seed in 0..6 {
        let d = 1 + seed as usize % 3;
        let model = random_model(&[30, 15, 8], d, Adjustment::Affine, seed);
        let sigma2 = model.default_sigma2().unwrap();
        let u_sigma2 = universal_sigma2(&model);
        let data: Vec<LevelData> = model.levels().iter().map(|l| l.data.clone()).collect();
        let jm = build_joint(&data, &params_from_model(&model, &sigma2).unwrap()).unwrap();
        let nugget = model.levels().iter().map(|l| l.fitted.applied_nugget()).fold(0.0, f64::max);
        let top = &model.top().data;
        for (x, z) in top.design.iter().zip(top.observations.iter()) {
            let p = model.predict_simple(x, &sigma2).unwrap();
            assert!((p.mean() - z).abs() <= 1e-8, "seed {seed}");
            assert!(p.variance() <= 10.0 * nugget * prior_variance(&jm, x).unwrap());
            let u = model.predict_universal(x).unwrap();
            assert!((u.mean() - z).abs() <= 1e-8);
            let s = model.predict_simple(x, &u_sigma2).unwrap();
            assert!((u.variance() - s.variance()).abs() <= 1e-10, "seed {seed}");
        }
    }
}

#[test]
fn universal_reduces_to_textbook_kriging() {
    for seed in 0..5 {
        let levels = nested_instance(&[18], 2, seed, Adjustment::Constant).unwrap();
        let model = fit_fixed(levels.clone(), 0.35);
        let fitted = &model.levels()[0].fitted;
        let sigma2 = fitted.sigma2_posterior_mean().unwrap();
        for x in query_points(25, 2, seed + 50) {
            let p = model.predict_universal(&x).unwrap();
            let (m, v) = kriging_oracle(&levels[0], &fitted.kernel, None, sigma2, &x);
            assert!(close(p.mean(), m, 1e-10, 1e-10));
            assert!(close(p.variance(), v, 1e-10, 1e-10));
        }
    }
}

#[test]
fn universal_variance_dominates_simple() {
    for seed in 0..8 {
        let adj = if seed % 2 == 0 { Adjustment::Constant } else { Adjustment::Affine };
        let model = random_model(&[30, 15, 8], 2, adj, seed);
        let sigma2 = universal_sigma2(&model);
        for x in query_points(100, 2, seed) {
            let u = model.predict_universal(&x).unwrap();
            let s = model.predict_simple(&x, &sigma2).unwrap();
            assert_eq!(u.mean(), s.mean());
            for (a, b) in u.levels.iter().zip(&s.levels) {
                assert!(a.variance >= b.variance * (1.0 - 1e-12));
            }
        }
    }
}

#[test]
fn batch_matches_single_calls() {
    let model = random_model(&[30, 12], 2, Adjustment::Affine, 9);
    let points = query_points(175, 2, 4);
    for mode in [PredictionMode::Simple, PredictionMode::Universal] {
        let batch = model.predict_batch(&points, mode).unwrap();
        assert_eq!(batch.len(), 175);
        for (x, b) in points.iter().zip(&batch) {
            assert_eq!(b, &model.predict(x, mode).unwrap());
        }
    }
    let top = &model.top().data;
    let batch = model.predict_batch(&top.design, PredictionMode::Simple).unwrap();
    for (p, z) in batch.iter().zip(top.observations.iter()) {
        assert!((p.mean() - z).abs() <= 1e-8);
    }
}

#[test]
fn level_one_scale_does_not_move_level_two_means() {
    for seed in 0..5 {
        let levels = nested_instance(&[24, 10], 2, seed, Adjustment::Constant).unwrap();
        let model = fit_fixed(levels.clone(), 0.3);
        let mut scaled = levels;
        scaled[0].observations *= 7.5;
        let other = fit_fixed(scaled, 0.3);
        for x in query_points(50, 2, seed) {
            let a = model.predict(&x, PredictionMode::Simple).unwrap().mean();
            let b = other.predict(&x, PredictionMode::Simple).unwrap().mean();
            assert!(close(a, b, 1e-8, 0.0), "{a} vs {b}");
        }
    }
}

#[test]
fn variance_grows_with_each_level_variance() {
    let model = random_model(&[30, 15, 8], 2, Adjustment::Affine, 2);
    let sigma2 = model.default_sigma2().unwrap();
    for x in query_points(50, 2, 8) {
        let base = model.predict_simple(&x, &sigma2).unwrap().variance();
        for t in 0..3 {
            let mut bumped = sigma2.clone();
            bumped[t] *= 1.5;
            assert!(model.predict_simple(&x, &bumped).unwrap().variance() >= base);
        }
    }
}

#[test]
fn variances_are_nonnegative() {
    for seed in 0..4 {
        let model = random_model(&[30, 15, 8], 3, Adjustment::Affine, seed);
        for mode in [PredictionMode::Simple, PredictionMode::Universal] {
            for p in model.predict_batch(&query_points(1000, 3, seed), mode).unwrap() {
                assert!(p.levels.iter().all(|l| l.variance >= 0.0));
            }
        }
    }
}

#[test]
fn nesting_violation_names_point_and_level() {
    let mut levels = nested_instance(&[12, 5], 1, 0, Adjustment::Constant).unwrap();
    levels[1].design[3][0] += 1e-6;
    let specs = levels.into_iter().map(|l| LevelSpec::new(l, fixed(0.3, 1))).collect();
    match fit(specs, &OptimizeOptions::default()) {
        Err(e @ Error::Nesting { level: 2, index: 3, .. }) => assert!(e.to_string().contains("point 3")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn estimation_failures_identify_the_level() {
    let levels = nested_instance(&[12, 3], 1, 0, Adjustment::Affine).unwrap();
    let specs: Vec<_> = levels.into_iter().map(|l| LevelSpec::new(l, fixed(0.3, 1))).collect();
    match fit(specs, &OptimizeOptions::default()) {
        Err(Error::InsufficientData { level: 2, .. }) => {}
        other => panic!("{other:?}"),
    }

    // A constant level 1 makes the adjustment column equal to the constant.
    let mut levels = nested_instance(&[12, 6], 1, 0, Adjustment::Constant).unwrap();
    levels[0].observations.fill(1.0);
    let specs: Vec<_> = levels.into_iter().map(|l| LevelSpec::new(l, fixed(0.3, 1))).collect();
    match fit(specs, &OptimizeOptions::default()) {
        Err(Error::Estimation { level: 2, source }) => {
            assert!(matches!(*source, Error::SingularSystem { .. }), "{source}")
        }
        other => panic!("{other:?}"),
    }
}
