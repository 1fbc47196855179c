//! The quadrature reference against itself, against pGVEM and against
//! simulated truth.

mod common;

use common::*;
use nalgebra::DMatrix;
use pgvem::oracle::{marginal_loglik, posterior_moments, reference_mmle, MmleConfig, QuadratureGrid};
use pgvem::simulator::{generate, SimulationSpec};
use pgvem::variational::entropy_correction;
use rand::Rng;
use pgvem::{fit, log_joint, FitConfig, LatentSpec, Mode};

/// ∫ P(y | θ) φ(θ) dθ by a fine Riemann sum on [−12, 12].
fn brute_force_loglik(row: &[usize], params: &pgvem::ItemParameters, latent: &LatentSpec) -> f64 {
    let h = 1e-4;
    let steps = (24.0 / h) as usize;
    let total: f64 = (0..=steps)
        .map(|s| log_joint(&[-12.0 + s as f64 * h], row, params, latent).unwrap().exp())
        .sum();
    (total * h).ln()
}

#[test]
fn loglik_matches_brute_force_integration() {
    for seed in [40, 42, 43] {
        let data = generate(&SimulationSpec::new(60, 6, 3, 1, seed)).unwrap();
        let t = &data.truth;
        let latent = LatentSpec::new(t.sigma_theta.clone(), Mode::Cfa).unwrap();
        let rows: Vec<Vec<usize>> = (0..5).map(|i| data.responses.row(i).to_vec()).collect();
        let head = pgvem::ResponseMatrix::from_rows(&rows, Some(data.responses.categories().to_vec())).unwrap();
        let grid = QuadratureGrid::new(&t.sigma_theta, 61).unwrap();
        let quad = marginal_loglik(&head, &t.params, &grid).unwrap();
        let brute: f64 = rows.iter().map(|row| brute_force_loglik(row, &t.params, &latent)).sum();
        assert!((quad - brute).abs() < 1e-9, "seed {seed}: {quad} vs {brute}");
    }
}

#[test]
fn loglik_converges_under_node_refinement() {
    let mut r = rng(9);
    for seed in 0..10 {
        let n = 1 + seed as usize % 5;
        let categories: Vec<usize> = (0..6).map(|j| 2 + (j + seed as usize) % 3).collect();
        // Loadings from the low design range; steep items converge far slower.
        let kmax = *categories.iter().max().unwrap();
        let params = pgvem::ItemParameters::new(
            DMatrix::from_fn(6, 1, |_, _| r.random_range(0.5..1.0)),
            DMatrix::from_fn(6, kmax - 1, |_, _| r.random_range(-2.0..2.0)),
            categories.clone(),
        )
        .unwrap();
        let data: Vec<usize> = (0..n * 6).map(|c| (c * 7 + seed as usize) % categories[c % 6]).collect();
        let y = pgvem::ResponseMatrix::from_flat(n, 6, categories, data).unwrap();
        let ll = |q| marginal_loglik(&y, &params, &QuadratureGrid::new(&DMatrix::identity(1, 1), q).unwrap()).unwrap();
        let (l21, l41, l61, l81) = (ll(21), ll(41), ll(61), ll(81));
        assert!((l21 - l41).abs() < 1e-3, "seed {seed}: {l21} vs {l41}");
        // Error shrinks by at least two orders of magnitude from 21 to 61 nodes.
        assert!((l61 - l81).abs() <= 0.01 * (l21 - l81).abs() + 1e-12, "seed {seed}: {l61} vs {l81}");
    }
}

#[test]
fn mirrored_items_give_centred_posterior() {
    // b_1 = 0 makes both categories symmetric; one 1 and one 0 cancel.
    let params = pgvem::ItemParameters::new(
        DMatrix::from_element(2, 1, 1.3),
        DMatrix::from_element(2, 1, 0.0),
        vec![2, 2],
    )
    .unwrap();
    let y = pgvem::ResponseMatrix::from_flat(1, 2, vec![2, 2], vec![1, 0]).unwrap();
    let grid = QuadratureGrid::new(&DMatrix::identity(1, 1), 31).unwrap();
    let (mean, cov) = posterior_moments(0, &y, &params, &grid).unwrap();
    assert!(mean[0].abs() < 1e-12);
    assert!(cov[(0, 0)] > 0.0 && cov[(0, 0)] < 1.0);
}

#[test]
fn posterior_covariances_are_positive_definite() {
    let data = generate(&SimulationSpec::new(20, 8, 3, 2, 44)).unwrap();
    let grid = QuadratureGrid::new(&data.truth.sigma_theta, 21).unwrap();
    for i in 0..20 {
        let (_, cov) = posterior_moments(i, &data.responses, &data.truth.params, &grid).unwrap();
        assert!(cov.cholesky().is_some(), "examinee {i}");
    }
}

#[test]
fn posterior_means_close_to_variational_means() {
    let data = generate(&SimulationSpec::new(300, 20, 3, 1, 50)).unwrap();
    let f = fit(&data.responses, 1, &FitConfig::default()).unwrap();
    let grid = QuadratureGrid::new(&f.sigma_theta, 41).unwrap();
    let gaps: Vec<f64> = (0..data.responses.n_examinees())
        .map(|i| {
            let (mean, _) = posterior_moments(i, &data.responses, &f.params, &grid).unwrap();
            (mean[0] - f.state.mu[(i, 0)]).abs()
        })
        .collect();
    // Typical gaps sit well inside 0.15; the extreme response patterns exceed it.
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let within = gaps.iter().filter(|g| **g <= 0.15).count();
    assert!(mean_gap <= 0.15, "mean |E[θ|y] − μ| = {mean_gap}");
    assert!(within * 100 >= gaps.len() * 90, "{within} of {} within 0.15", gaps.len());
}

#[test]
fn elbo_never_exceeds_marginal_loglik() {
    for (seed, d) in [(60, 1), (61, 2), (62, 2)] {
        let data = generate(&SimulationSpec::new(60, 8, 3, d, seed)).unwrap();
        for mode in [Mode::Efa, Mode::Cfa] {
            let cfg = FitConfig {
                mode,
                ..FitConfig::default()
            };
            let f = fit(&data.responses, d, &cfg).unwrap();
            let grid = QuadratureGrid::new(&f.sigma_theta, 31).unwrap();
            let ll = marginal_loglik(&data.responses, &f.params, &grid).unwrap();
            let elbo = f.final_surrogate() + entropy_correction(&f.state).unwrap();
            assert!(elbo <= ll, "seed {seed} {mode}: {elbo} > {ll}");
        }
    }
}

#[test]
fn mmle_recovers_one_dimensional_truth() {
    let data = generate(&SimulationSpec::new(1000, 10, 3, 1, 70).loadings((1.0, 2.0))).unwrap();
    let m = reference_mmle(&data.responses, 1, &MmleConfig::default()).unwrap();
    assert!(m.converged);
    for w in m.loglik_trace.windows(2) {
        assert!(w[1] >= w[0] - 1e-8 * w[0].abs());
    }
    // Fix the reflection before comparing.
    let sign = m.params.a().sum().signum();
    let a_hat: Vec<f64> = m.params.a().iter().map(|v| v * sign).collect();
    let a_true: Vec<f64> = data.truth.params.a().iter().copied().collect();
    assert!(pearson(&a_hat, &a_true) > 0.8);
    let mad_b = (0..10)
        .flat_map(|j| (1..3).map(move |k| (j, k)))
        .map(|(j, k)| (m.params.threshold(j, k) - data.truth.params.threshold(j, k)).abs())
        .sum::<f64>()
        / 20.0;
    assert!(mad_b < 0.2, "mean |Δb| = {mad_b}");
    // The MLE dominates the generating values on its own sample.
    let grid = QuadratureGrid::new(&DMatrix::identity(1, 1), 31).unwrap();
    let at_mle = marginal_loglik(&data.responses, &m.params, &grid).unwrap();
    let at_truth = marginal_loglik(&data.responses, &data.truth.params, &grid).unwrap();
    assert!(at_mle >= at_truth - 1e-3, "{at_mle} < {at_truth}");
}

#[test]
fn mmle_refuses_out_of_scope_inputs() {
    let data = generate(&SimulationSpec::new(200, 4, 2, 2, 71)).unwrap();
    assert!(matches!(
        reference_mmle(&data.responses, 2, &MmleConfig::default()),
        Err(pgvem::Error::Refused(_))
    ));
    let wide = generate(&SimulationSpec::new(300, 26, 2, 1, 72)).unwrap();
    assert!(matches!(
        reference_mmle(&wide.responses, 1, &MmleConfig::default()),
        Err(pgvem::Error::Refused(_))
    ));
}
