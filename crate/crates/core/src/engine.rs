//! The variational EM loop: Gaussian E-step, Gauss–Seidel M-step over
//! discriminations, thresholds, ξ and (confirmatory mode) Σ_θ.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{ItemParameters, LatentSpec, Mode, ResponseMatrix, VariationalState};
use crate::variational::{self, eta};

/// Estimation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub mode: Mode,
    pub max_iterations: usize,
    /// Threshold on the mean squared parameter change between iterations.
    pub tolerance: f64,
    pub seed: u64,
    /// Sum reductions in fixed index order so results are bit-reproducible.
    pub deterministic_reduction: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Efa,
            max_iterations: 2000,
            tolerance: 1e-5,
            seed: 0,
            deterministic_reduction: true,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::InvalidArgument("max_iterations must be ≥ 1".into()));
        }
        if !(self.tolerance > 0.0) || !self.tolerance.is_finite() {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Output of [`fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ItemParameters,
    pub sigma_theta: DMatrix<f64>,
    pub mode: Mode,
    pub state: VariationalState,
    /// Ē after each full iteration.
    pub surrogate_trace: Vec<f64>,
    /// Ē plus the Gaussian entropy terms, i.e. the full evidence lower bound.
    pub elbo_trace: Vec<f64>,
    /// Mean squared parameter change after each iteration.
    pub change_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Posterior means μ_i, used as ability estimates.
    pub theta_hat: DMatrix<f64>,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn final_surrogate(&self) -> f64 {
        *self.surrogate_trace.last().unwrap_or(&f64::NEG_INFINITY)
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    pub fn latent(&self) -> LatentSpec {
        LatentSpec::new(self.sigma_theta.clone(), self.mode)
            .unwrap_or_else(|_| LatentSpec::identity(self.dim(), self.mode))
    }
}

fn etas(xi: &[f64]) -> Vec<f64> {
    xi.iter().map(|&x| eta(x)).collect()
}

fn check_inputs(
    params: &ItemParameters,
    latent: &LatentSpec,
    state: &VariationalState,
    responses: &ResponseMatrix,
) -> Result<()> {
    if params.categories() != responses.categories()
        || params.dim() != latent.dim()
        || state.n_examinees() != responses.n_examinees()
        || state.xi.len() != responses.n_examinees() * responses.total_categories()
    {
        return Err(Error::InvalidArgument(
            "inconsistent shapes among parameters, state and responses".into(),
        ));
    }
    Ok(())
}

/// Gaussian E-step: returns the N×D means and the N posterior covariances
/// implied by the current parameters and ξ (taken from `state.xi`).
pub fn e_step(
    params: &ItemParameters,
    latent: &LatentSpec,
    state: &VariationalState,
    responses: &ResponseMatrix,
) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
    check_inputs(params, latent, state, responses)?;
    let etas = etas(&state.xi);
    e_step_inner(params, latent, state, &etas, responses)
}

fn e_step_inner(
    params: &ItemParameters,
    latent: &LatentSpec,
    state: &VariationalState,
    etas: &[f64],
    responses: &ResponseMatrix,
) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
    let d = latent.dim();
    let n = responses.n_examinees();
    let chol = linalg::cholesky(latent.sigma_theta(), "sigma_theta")?;
    let prior_precision = linalg::spd_inverse(&chol);
    let a_rows: Vec<Vec<f64>> = (0..params.n_items()).map(|j| params.a_row(j)).collect();
    let b_rows: Vec<Vec<f64>> = (0..params.n_items())
        .map(|j| params.thresholds_with_zero(j))
        .collect();

    let per: Vec<Result<(DVector<f64>, DMatrix<f64>)>> = (0..n)
        .into_par_iter()
        .with_min_len(32)
        .map(|i| {
            let mut precision = prior_precision.clone();
            let mut rhs = DVector::<f64>::zeros(d);
            for (j, &y) in responses.row(i).iter().enumerate() {
                let a = &a_rows[j];
                let b = &b_rows[j];
                let start = state.layout.item_start(i, j);
                let mut w = 0.0;
                let mut g = 0.0;
                for (k, bk) in b.iter().enumerate() {
                    let e = etas[start + k];
                    let c = k as f64 - y as f64;
                    w += e * c * c;
                    g += c * (2.0 * e * (bk - b[y]) - 0.5);
                }
                for c in 0..d {
                    rhs[c] += g * a[c];
                    for r in 0..d {
                        precision[(r, c)] += 2.0 * w * a[r] * a[c];
                    }
                }
            }
            let chol = nalgebra::Cholesky::new(precision).ok_or_else(|| {
                Error::Internal(format!("posterior precision of examinee {i} not SPD"))
            })?;
            let mean = chol.solve(&rhs);
            Ok((mean, linalg::spd_inverse(&chol)))
        })
        .collect();

    let mut mu = DMatrix::zeros(n, d);
    let mut sigma = Vec::with_capacity(n);
    for (i, r) in per.into_iter().enumerate() {
        let (m, s) = r?;
        for c in 0..d {
            mu[(i, c)] = m[c];
        }
        sigma.push(s);
    }
    Ok((mu, sigma))
}

/// Closed-form maximizer of Ē over `a_j` with thresholds and ξ held fixed.
/// The flag reports whether a ridge was needed to solve the system.
pub fn update_discrimination(
    j: usize,
    params: &ItemParameters,
    state: &VariationalState,
    responses: &ResponseMatrix,
) -> (Vec<f64>, bool) {
    let etas = etas(&state.xi);
    discrimination_inner(j, params, state, &etas, responses)
}

fn discrimination_inner(
    j: usize,
    params: &ItemParameters,
    state: &VariationalState,
    etas: &[f64],
    responses: &ResponseMatrix,
) -> (Vec<f64>, bool) {
    let d = params.dim();
    let b = params.thresholds_with_zero(j);
    let mut acc = DMatrix::<f64>::zeros(d, d);
    let mut rhs = DVector::<f64>::zeros(d);
    for i in 0..responses.n_examinees() {
        let y = responses.row(i)[j];
        let start = state.layout.item_start(i, j);
        let mut w = 0.0;
        let mut g = 0.0;
        for (k, bk) in b.iter().enumerate() {
            let e = etas[start + k];
            let c = k as f64 - y as f64;
            w += e * c * c;
            g += c * (2.0 * e * (bk - b[y]) - 0.5);
        }
        let sig = &state.sigma[i];
        for c in 0..d {
            let mc = state.mu[(i, c)];
            rhs[c] += g * mc;
            for r in 0..d {
                acc[(r, c)] += w * (sig[(r, c)] + state.mu[(i, r)] * mc);
            }
        }
    }
    let (x, ridged) = linalg::solve_spd_with_ridge(&acc, &rhs);
    (x.iter().map(|v| 0.5 * v).collect(), ridged)
}

/// Coordinate-wise maximizer of Ē over `b_j1..b_j(K_j−1)`, ascending in `k`,
/// each step using the most recent values of the other thresholds.
///
/// Returns the new thresholds (without `b_j0`) and whether any coordinate
/// had a vanishing denominator and kept its previous value.
pub fn update_thresholds(
    j: usize,
    a_j: &[f64],
    params: &ItemParameters,
    state: &VariationalState,
    responses: &ResponseMatrix,
) -> (Vec<f64>, bool) {
    let etas = etas(&state.xi);
    thresholds_inner(j, a_j, params, state, &etas, responses)
}

fn thresholds_inner(
    j: usize,
    a_j: &[f64],
    params: &ItemParameters,
    state: &VariationalState,
    etas: &[f64],
    responses: &ResponseMatrix,
) -> (Vec<f64>, bool) {
    let n = responses.n_examinees();
    let mut b = params.thresholds_with_zero(j);
    let n_cat = b.len();
    let s: Vec<f64> = (0..n)
        .map(|i| (0..a_j.len()).map(|c| a_j[c] * state.mu[(i, c)]).sum())
        .collect();
    let mut flagged = false;
    for k in 1..n_cat {
        let mut num = 0.0;
        let mut den = 0.0;
        let kf = k as f64;
        for i in 0..n {
            let y = responses.row(i)[j];
            let start = state.layout.item_start(i, j);
            if k != y {
                let e = etas[start + k];
                num += 2.0 * e * (kf - y as f64) * s[i] + 0.5 + 2.0 * e * b[y];
                den += e;
            } else {
                for (v, bv) in b.iter().enumerate() {
                    if v == k {
                        continue;
                    }
                    let e = etas[start + v];
                    num += -2.0 * e * (v as f64 - kf) * s[i] - 0.5 + 2.0 * e * bv;
                    den += e;
                }
            }
        }
        if den > 0.0 && den.is_finite() {
            b[k] = num / (2.0 * den);
        } else {
            flagged = true;
        }
    }
    (b[1..].to_vec(), flagged)
}

/// ξ_ijk = sqrt([(k − k_ij) a_j'μ_i − (b_jk − b_jk_ij)]² + (k − k_ij)² a_j'Σ_i a_j).
pub fn update_xi(
    params: &ItemParameters,
    state: &VariationalState,
    responses: &ResponseMatrix,
) -> Vec<f64> {
    let n = responses.n_examinees();
    let stride = state.layout.stride();
    let a_rows: Vec<Vec<f64>> = (0..params.n_items()).map(|j| params.a_row(j)).collect();
    let b_rows: Vec<Vec<f64>> = (0..params.n_items())
        .map(|j| params.thresholds_with_zero(j))
        .collect();
    let mut xi = vec![0.0; n * stride];
    xi.par_chunks_mut(stride.max(1))
        .enumerate()
        .with_min_len(32)
        .for_each(|(i, out)| {
            let mu: Vec<f64> = state.mu_row(i);
            let sig = &state.sigma[i];
            for (j, &y) in responses.row(i).iter().enumerate() {
                let a = &a_rows[j];
                let b = &b_rows[j];
                let s = linalg::dot(a, &mu);
                let q = linalg::quad_form(sig, a);
                let start = state.layout.item_start(0, j);
                for (k, bk) in b.iter().enumerate() {
                    let c = k as f64 - y as f64;
                    let m = c * s - (bk - b[y]);
                    out[start + k] = (m * m + c * c * q).max(0.0).sqrt();
                }
            }
        });
    xi
}

/// Σ_θ = (1/N) Σ_i (Σ_i + μ_iμ_i'), rescaled to unit diagonal.
pub fn update_sigma_theta(state: &VariationalState) -> Result<DMatrix<f64>> {
    let n = state.n_examinees();
    let d = state.dim();
    if n == 0 {
        return Err(Error::InvalidArgument("no examinees".into()));
    }
    let mut acc = DMatrix::<f64>::zeros(d, d);
    for i in 0..n {
        acc += &state.sigma[i];
        for r in 0..d {
            for c in 0..d {
                acc[(r, c)] += state.mu[(i, r)] * state.mu[(i, c)];
            }
        }
    }
    acc /= n as f64;
    let corr = linalg::to_correlation(&acc);
    if !linalg::is_spd(&corr) {
        return Err(Error::Internal("updated sigma_theta is not SPD".into()));
    }
    Ok(corr)
}

/// Mean squared change of all item parameters, normalized by J·D + Σ_j K_j.
pub fn parameter_change(old: &ItemParameters, new: &ItemParameters) -> f64 {
    let j = old.n_items();
    let d = old.dim();
    let mut sum = 0.0;
    for item in 0..j {
        for r in 0..d {
            let delta = new.a()[(item, r)] - old.a()[(item, r)];
            sum += delta * delta;
        }
        for k in 1..old.categories()[item] {
            let delta = new.threshold(item, k) - old.threshold(item, k);
            sum += delta * delta;
        }
    }
    let denom = (j * d + old.categories().iter().sum::<usize>()) as f64;
    sum / denom
}

/// Random start: a ~ U(0.5, 1.5), b ~ N(0, 1) sorted within item.
pub fn initial_parameters(categories: &[usize], dim: usize, seed: u64) -> ItemParameters {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ItemParameters::zeros(categories.to_vec(), dim);
    for (j, &k) in categories.iter().enumerate() {
        let a: Vec<f64> = (0..dim).map(|_| rng.random_range(0.5..1.5)).collect();
        params.set_a_row(j, &a);
        let mut b: Vec<f64> = (1..k).map(|_| rng.sample(StandardNormal)).collect();
        b.sort_by(|x, y| x.total_cmp(y));
        for (idx, v) in b.into_iter().enumerate() {
            params.set_threshold(j, idx + 1, v);
        }
    }
    params
}

/// Fit the model at latent dimension `dim` from a random start.
pub fn fit(responses: &ResponseMatrix, dim: usize, config: &FitConfig) -> Result<FitResult> {
    fit_from(responses, dim, config, None)
}

/// Fit with an optional starting point for the item parameters.
pub fn fit_from(
    responses: &ResponseMatrix,
    dim: usize,
    config: &FitConfig,
    init: Option<&ItemParameters>,
) -> Result<FitResult> {
    config.validate()?;
    if dim == 0 {
        return Err(Error::InvalidArgument("latent dimension must be ≥ 1".into()));
    }
    responses.check_estimable()?;
    let mut params = match init {
        Some(p) => {
            if p.dim() != dim || p.categories() != responses.categories() {
                return Err(Error::InvalidArgument(
                    "initial parameters do not match responses/dimension".into(),
                ));
            }
            p.clone()
        }
        None => initial_parameters(responses.categories(), dim, config.seed),
    };
    let mut latent = LatentSpec::identity(dim, config.mode);
    let mut state = VariationalState::initial(
        responses.n_examinees(),
        responses.categories(),
        latent.sigma_theta(),
        1.0,
    );

    let mut surrogate_trace = Vec::new();
    let mut elbo_trace = Vec::new();
    let mut change_trace = Vec::new();
    let mut ridge_events = 0usize;
    let mut flagged_events = 0usize;
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..config.max_iterations {
        iterations += 1;
        let etas = etas(&state.xi);
        let (mu, sigma) = e_step_inner(&params, &latent, &state, &etas, responses)?;
        state.mu = mu;
        state.sigma = sigma;

        let previous = params.clone();
        let updates: Vec<(Vec<f64>, Vec<f64>, bool, bool)> = (0..params.n_items())
            .into_par_iter()
            .map(|j| {
                let (a_j, ridged) = discrimination_inner(j, &previous, &state, &etas, responses);
                let (b_j, flagged) =
                    thresholds_inner(j, &a_j, &previous, &state, &etas, responses);
                (a_j, b_j, ridged, flagged)
            })
            .collect();
        for (j, (a_j, b_j, ridged, flagged)) in updates.into_iter().enumerate() {
            if a_j.iter().chain(&b_j).any(|v| !v.is_finite()) {
                return Err(Error::Internal(format!("non-finite update for item {j}")));
            }
            params.set_a_row(j, &a_j);
            for (idx, v) in b_j.into_iter().enumerate() {
                params.set_threshold(j, idx + 1, v);
            }
            ridge_events += ridged as usize;
            flagged_events += flagged as usize;
        }

        state.xi = update_xi(&params, &state, responses);
        if config.mode == Mode::Cfa {
            latent.set_sigma_theta(update_sigma_theta(&state)?);
        }

        let sv = variational::surrogate_objective_with(
            &params,
            &latent,
            &state,
            responses,
            config.deterministic_reduction,
        )?;
        surrogate_trace.push(sv.value);
        elbo_trace.push(sv.value + variational::entropy_correction(&state)?);

        let change = parameter_change(&previous, &params);
        change_trace.push(change);
        if change < config.tolerance {
            converged = true;
            break;
        }
    }

    let mut warnings = Vec::new();
    if ridge_events > 0 {
        warnings.push(format!(
            "singular discrimination system regularized with 1e-8 ridge {ridge_events} time(s)"
        ));
    }
    if flagged_events > 0 {
        warnings.push(format!(
            "threshold update skipped for zero denominator {flagged_events} time(s)"
        ));
    }
    Ok(FitResult {
        theta_hat: state.mu.clone(),
        sigma_theta: latent.sigma_theta().clone(),
        mode: config.mode,
        params,
        state,
        surrogate_trace,
        elbo_trace,
        change_trace,
        iterations,
        converged,
        warnings,
    })
}
