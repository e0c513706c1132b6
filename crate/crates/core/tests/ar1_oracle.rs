//! With the identity feature map the model is plain autoregressive
//! co-kriging; compare against the reference implementation in
//! `common::Ar1Oracle`.

mod common;

use common::{close, random_ar1_instance, rng, standardize, Ar1Oracle};
use dmfgp::mfgp::{nll, nll_gradient, predict};
use dmfgp::trainer::{init_params, minimize, train, BfgsOptions, MapSpec, TrainConfig};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

#[test]
fn nll_and_prediction_match_reference() {
    let mut r = rng(7);
    for case in 0..10 {
        let dim = 1 + case % 2;
        let (params, data) = random_ar1_instance(&mut r, dim);
        let oracle = Ar1Oracle::from_params(&params);

        let ours = nll(&params, &data, 0.0).unwrap();
        let theirs = oracle.nll(&data);
        assert!(close(ours, theirs, 1e-10), "case {case}: nll {ours} vs {theirs}");

        let xs = DMatrix::from_fn(7, dim, |_, _| r.random_range(-0.2..1.2));
        let pred = predict(&params, &data, &xs, 0.0).unwrap();
        let (mean, var) = oracle.predict(&data, &xs);
        for i in 0..7 {
            assert!(close(pred.mean[i], mean[i], 1e-10), "case {case}: mean {} vs {}", pred.mean[i], mean[i]);
            assert!(close(pred.variance[i], var[i], 1e-10), "case {case}: var {} vs {}", pred.variance[i], var[i]);
        }
    }
}

#[test]
fn gradient_matches_reference() {
    let mut r = rng(8);
    for case in 0..10 {
        let dim = 1 + case % 2;
        let (params, data) = random_ar1_instance(&mut r, dim);
        let ours = nll_gradient(&params, &data, 0.0).unwrap().to_vec(&params);
        let theirs = Ar1Oracle::from_params(&params).nll_gradient(&data);
        for (i, (a, b)) in ours.iter().zip(&theirs).enumerate() {
            assert!(close(*a, *b, 1e-9), "case {case} entry {i}: {a} vs {b}");
        }
        // The frozen identity map contributes nothing.
        assert!(ours[theirs.len()..].iter().all(|g| *g == 0.0));
    }
}

/// Trains the reference model with the same optimizer and starting points
/// the trainer uses and returns the best objective.
fn reference_training(data: &dmfgp::Dataset, config: &TrainConfig) -> f64 {
    let z = standardize(data);
    let dim = data.dim();
    let opts = BfgsOptions {
        max_iterations: config.max_iterations,
        gradient_tolerance: config.gradient_tolerance,
        ..BfgsOptions::default()
    };
    (0..config.restarts)
        .filter_map(|restart| {
            let start = init_params::<f64>(config, &MapSpec::Identity, dim, restart).unwrap();
            let x0 = Ar1Oracle::from_params(&start).to_vec();
            let objective = |x: &[f64]| {
                let o = Ar1Oracle::from_vec(x, dim);
                let v = o.nll(&z);
                v.is_finite().then(|| (v, o.nll_gradient(&z)))
            };
            minimize(objective, x0, &opts).map(|res| res.value)
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn trained_identity_model_matches_reference_training() {
    let mut r = rng(9);
    for case in 0..3 {
        let n1 = 15;
        let n2 = 6;
        let x1 = DMatrix::from_fn(n1, 1, |_, _| r.random_range(0.0..1.0));
        let x2 = DMatrix::from_fn(n2, 1, |_, _| r.random_range(0.0..1.0));
        let lo = |x: f64| (6.0 * x).sin() + 0.3 * x;
        let hi = |x: f64| 1.8 * lo(x) + (x - 0.4).powi(2);
        let data = dmfgp::Dataset::new(
            x1.clone(),
            DVector::from_iterator(n1, x1.iter().map(|&x| lo(x) + 0.05 * r.random_range(-1.0..1.0))),
            x2.clone(),
            DVector::from_iterator(n2, x2.iter().map(|&x| hi(x) + 0.05 * r.random_range(-1.0..1.0))),
        )
        .unwrap();
        let config = TrainConfig {
            restarts: 3,
            seed: case,
            jitter: 0.0,
            ..TrainConfig::default()
        };
        let report = train(&data, &MapSpec::Identity, &config).unwrap();
        let reference = reference_training(&data, &config);
        assert!(
            (report.best_nll - reference).abs() <= 1e-8 * reference.abs().max(1.0),
            "case {case}: trainer {} vs reference {reference}",
            report.best_nll
        );
    }
}
