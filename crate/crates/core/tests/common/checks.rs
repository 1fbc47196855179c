//! Check bodies shared by the test binaries and the acceptance report.
//! Each panics on the first failure.

use nalgebra::DMatrix;
use pgvem::bootstrap::{se_assessment, SeTable};
use pgvem::engine::{e_step, update_thresholds, update_xi};
use pgvem::rotation::align_factors;
use pgvem::simulator::{evaluate_estimates, generate, EvaluateOptions, SimulationSpec, Truth};
use pgvem::variational::{eta, log_softmax, ove_log_bound, surrogate_objective};
use pgvem::{fit, FitConfig, ItemParameters, Mode};
use rand::Rng;

use super::*;

const INSTANCES: u64 = 100;
const TOL: f64 = 1e-10;

fn surrogate(inst: &Instance) -> f64 {
    surrogate_objective(&inst.params, &inst.latent, &inst.state, &inst.responses)
        .unwrap()
        .value
}

pub fn with_e_step(mut inst: Instance) -> Instance {
    let (mu, sigma) = e_step(&inst.params, &inst.latent, &inst.state, &inst.responses).unwrap();
    inst.state.mu = mu;
    inst.state.sigma = sigma;
    inst
}

pub fn surrogate_matches_transcription() {
    for seed in 0..INSTANCES {
        let inst = random_instance(seed);
        let got = surrogate_objective(&inst.params, &inst.latent, &inst.state, &inst.responses)
            .unwrap()
            .value;
        let want = surrogate_literal(&inst);
        assert!(close(got, want, TOL), "seed {seed}: {got} vs {want}");
    }
}

pub fn threshold_update_matches_transcription() {
    for seed in 0..INSTANCES {
        let inst = random_instance(1000 + seed);
        let mut r = rng(seed);
        let j = r.random_range(0..inst.params.n_items());
        let a_j: Vec<f64> = (0..inst.params.dim()).map(|_| r.random_range(-1.0..2.0)).collect();
        let (got, flagged) = update_thresholds(j, &a_j, &inst.params, &inst.state, &inst.responses);
        assert!(!flagged);
        let want = thresholds_literal(&inst, j, &a_j);
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            assert!(close(*g, *w, TOL), "seed {seed}: {got:?} vs {want:?}");
        }
    }
}

pub fn random_truth_and_estimate(seed: u64) -> (Truth, ItemParameters, DMatrix<f64>, DMatrix<f64>) {
    let mut attempt = 0;
    loop {
        let mut r = rng(seed * 1000 + attempt);
        attempt += 1;
        let d = r.random_range(1..4);
        let j = r.random_range(2..8);
        let n = r.random_range(1..10);
        let categories: Vec<usize> = (0..j).map(|_| r.random_range(2..5)).collect();
        let params = random_params(&categories, d, &mut r);
        let truth = Truth {
            params: params.clone(),
            sigma_theta: random_correlation(d, &mut r),
            theta: DMatrix::from_fn(n, d, |_, _| r.random_range(-2.0..2.0)),
        };
        let noise = |m: &DMatrix<f64>, r: &mut rand_chacha::ChaCha8Rng| m.map(|v| v + r.random_range(-0.05..0.05));
        let a_hat = noise(params.a(), &mut r);
        let b_hat = noise(params.b(), &mut r);
        let est = ItemParameters::new(a_hat, b_hat, categories).unwrap();
        let sigma_hat = noise(&truth.sigma_theta, &mut r);
        let sigma_hat = (&sigma_hat + sigma_hat.transpose()) * 0.5;
        let theta_hat = noise(&truth.theta, &mut r);
        if align_factors(est.a(), truth.params.a()).unwrap().is_identity() {
            return (truth, est, sigma_hat, theta_hat);
        }
    }
}

pub fn evaluate_matches_transcription() {
    for seed in 0..INSTANCES {
        let (truth, est, sigma_hat, theta_hat) = random_truth_and_estimate(seed);
        let got = evaluate_estimates(&est, &sigma_hat, &theta_hat, &truth, Mode::Cfa, EvaluateOptions::default())
            .unwrap();
        let want = metrics_literal(est.a(), &est, &sigma_hat, &theta_hat, &truth);
        let got_arr = [
            got.bias_a,
            got.mse_a,
            got.bias_b,
            got.mse_b,
            got.bias_sigma,
            got.mse_sigma,
            got.bias_theta,
            got.mse_theta,
        ];
        for (g, w) in got_arr.iter().zip(&want) {
            assert!(close(*g, *w, TOL), "seed {seed}: {got_arr:?} vs {want:?}");
        }
    }
}

pub fn se_assessment_matches_transcription() {
    for seed in 0..INSTANCES {
        let mut r = rng(5000 + seed);
        let d = r.random_range(1..4);
        let j = r.random_range(1..6);
        let categories: Vec<usize> = (0..j).map(|_| r.random_range(2..6)).collect();
        let truth = random_params(&categories, d, &mut r);
        let reps: Vec<ItemParameters> = (0..r.random_range(2..8))
            .map(|_| random_params(&categories, d, &mut r))
            .collect();
        let kmax = *categories.iter().max().unwrap();
        let se_hat = SeTable {
            a: DMatrix::from_fn(j, d, |_, _| r.random_range(0.0..0.5)),
            b: DMatrix::from_fn(j, kmax - 1, |_, _| r.random_range(0.0..0.5)),
        };
        let got = se_assessment(&reps, &truth, &se_hat, false).unwrap();
        let (avg, bias, rel) = se_assessment_literal(&reps, &truth, &se_hat);
        assert!(close(got.average_se, avg, TOL), "seed {seed}");
        assert!(close(got.bias, bias, TOL), "seed {seed}");
        assert!(close(got.relative_bias, rel, TOL), "seed {seed}");
    }
}

pub fn eta_is_even_with_limit_one_eighth() {
    for x in [1e-9, 1e-5, 1e-4, 0.3, 1.0, 7.5, 40.0, 800.0] {
        assert_eq!(eta(x), eta(-x));
    }
    assert_eq!(eta(0.0), 0.125);
    assert!((eta(1e-6) - 0.125).abs() < 1e-13);
    // Both sides of the series cutoff agree.
    assert!((eta(0.99999e-4) - eta(1.00001e-4)).abs() < 1e-12);
    assert!((eta(0.37) - eta_literal(0.37)).abs() < 1e-15);
}

pub fn eta_decreases_on_positive_axis() {
    let mut prev = eta(0.0);
    for step in 1..20000 {
        let x = step as f64 * 1e-3;
        let e = eta(x);
        assert!(e <= prev, "η not decreasing at {x}");
        assert!(e > 0.0);
        prev = e;
    }
}

pub fn one_versus_each_bound_dominance() {
    let mut r = rng(7);
    for _ in 0..10_000 {
        let n = r.random_range(2..9);
        let logits: Vec<f64> = (0..n).map(|_| r.random_range(-6.0..6.0)).collect();
        let v = r.random_range(0..n);
        let bound = ove_log_bound(&logits, v);
        let exact = log_softmax(&logits, v);
        assert!(bound <= exact + 1e-12, "{logits:?} v={v}");
        if n == 2 {
            assert!((bound - exact).abs() < 1e-12);
        }
    }
}

pub fn e_step_with_zero_loadings_returns_prior() {
    let mut r = rng(3);
    for _ in 0..20 {
        let mut inst = random_instance(r.random());
        let d = inst.params.dim();
        let zero = inst.params.with_a(DMatrix::zeros(inst.params.n_items(), d));
        inst.params = zero;
        let (mu, sigma) = e_step(&inst.params, &inst.latent, &inst.state, &inst.responses).unwrap();
        assert!(mu.amax() < 1e-14);
        for s in &sigma {
            assert!((s - inst.latent.sigma_theta()).amax() < 1e-12);
        }
    }
}

pub fn posterior_covariances_below_prior() {
    for seed in 0..100 {
        let inst = with_e_step(random_instance(seed));
        for s in &inst.state.sigma {
            let gap = inst.latent.sigma_theta() - s;
            let min_eig = gap.symmetric_eigenvalues().min();
            assert!(min_eig >= -1e-12, "seed {seed}: λ_min = {min_eig}");
        }
    }
}

pub fn xi_closed_form_matches_grid_search() {
    for seed in 0..25 {
        let mut inst = random_instance(500 + seed);
        inst.state.xi = update_xi(&inst.params, &inst.state, &inst.responses);
        let base = surrogate(&inst);
        let (i, j) = (0, seed as usize % inst.params.n_items());
        let k = seed as usize % inst.params.categories()[j];
        let star = inst.state.xi(i, j, k);
        let mut best = (f64::NEG_INFINITY, 0.0);
        for g in 0..4000 {
            let x = g as f64 * 2.5e-3;
            inst.state.set_xi(i, j, k, x);
            let v = surrogate(&inst);
            if v > best.0 {
                best = (v, x);
            }
        }
        assert!(base >= best.0 - 1e-10, "seed {seed}");
        if star < 9.9 {
            assert!((best.1 - star).abs() <= 2.5e-3 + 1e-12, "seed {seed}: grid {} vs {star}", best.1);
        }
    }
}

pub fn fits_are_bit_identical_under_fixed_seed() {
    let data = generate(&SimulationSpec::new(150, 8, 3, 2, 11)).unwrap();
    for mode in [Mode::Efa, Mode::Cfa] {
        let cfg = FitConfig {
            seed: 5,
            mode,
            ..FitConfig::default()
        };
        let f1 = fit(&data.responses, 2, &cfg).unwrap();
        let f2 = fit(&data.responses, 2, &cfg).unwrap();
        assert_eq!(f1, f2);
        let bits = |f: &pgvem::FitResult| f.surrogate_trace.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&f1), bits(&f2));
    }
}

/// Category frequencies at θ = 0 against the response function, every
/// (item, category) within three binomial standard errors.
pub fn simulator_matches_irf() {
    use pgvem::irf_probability;
    use pgvem::simulator::draw_responses;

    let n = 100_000;
    let mut r = rng(2026);
    let categories: Vec<usize> = (0..10).map(|j| 2 + j % 4).collect();
    let params = random_params(&categories, 2, &mut r);
    let theta = DMatrix::zeros(n, 2);
    let y = draw_responses(&params, &theta, &mut r).unwrap();
    for (j, &k) in categories.iter().enumerate() {
        let p = irf_probability(&[0.0, 0.0], &params.a_row(j), &params.thresholds(j), k).unwrap();
        let counts = y.category_counts(j);
        for c in 0..k {
            let f = counts[c] as f64 / n as f64;
            let se = (p[c] * (1.0 - p[c]) / n as f64).sqrt();
            assert!((f - p[c]).abs() <= 3.0 * se, "item {j} category {c}: {f} vs {}", p[c]);
        }
    }
}
