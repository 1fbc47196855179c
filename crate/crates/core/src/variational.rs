//! Bound machinery: the Jaakkola coefficient η, the one-versus-each softmax
//! bound, and the surrogate objective Ē(M_p, ξ) maximized by the M-step.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{ItemParameters, LatentSpec, ResponseMatrix, VariationalState};

const ETA_SERIES_CUTOFF: f64 = 1e-4;

/// η(x) = (e^x − 1) / (4x(e^x + 1)), with η(0) = 1/8.
#[inline]
pub fn eta(x: f64) -> f64 {
    if x.abs() < ETA_SERIES_CUTOFF {
        0.125 - x * x / 96.0
    } else {
        (0.5 * x).tanh() / (4.0 * x)
    }
}

/// log(1 + e^x) without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Log of the one-versus-each lower bound on softmax component `v`:
/// Σ_{k≠v} log σ(x_v − x_k).
pub fn ove_log_bound(logits: &[f64], v: usize) -> f64 {
    assert!(logits.len() >= 2 && v < logits.len(), "need n ≥ 2 and v in range");
    let xv = logits[v];
    logits
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != v)
        .map(|(_, &xk)| -softplus(xk - xv))
        .sum()
}

/// Exact log-softmax of component `v`.
pub fn log_softmax(logits: &[f64], v: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    logits[v] - lse
}

/// Value of the surrogate objective.
///
/// `per_examinee` holds the item terms of each examinee (including the
/// `log 2` constants); `prior` holds the Σ_θ log-determinant and trace
/// terms summed over examinees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateValue {
    pub value: f64,
    pub per_examinee: Vec<f64>,
    pub prior: f64,
}

/// One (i, j, k) summand of Ē.
///
/// `c = k − k_ij`, `d = b_jk − b_jk_ij`, `s = a_j'μ_i`,
/// `q = a_j'(Σ_i + μ_iμ_i')a_j`.
#[inline]
pub(crate) fn cell_term(c: f64, eta_xi: f64, xi: f64, d: f64, s: f64, q: f64) -> f64 {
    -eta_xi * c * c * q + c * (2.0 * eta_xi * d - 0.5) * s - eta_xi * d * d + 0.5 * d
        + eta_xi * xi * xi
        + 0.5 * xi
        - softplus(xi)
}

/// Item terms of Ē for examinee `i`.
pub(crate) fn examinee_item_terms(
    i: usize,
    params: &ItemParameters,
    state: &VariationalState,
    responses: &ResponseMatrix,
) -> f64 {
    let mu = state.mu_row(i);
    let sigma_i = &state.sigma[i];
    let row = responses.row(i);
    let mut total = 0.0;
    for (j, &y) in row.iter().enumerate() {
        let a = params.a_row(j);
        let s = linalg::dot(&a, &mu);
        let q = linalg::quad_form(sigma_i, &a) + s * s;
        let b_y = params.threshold(j, y);
        let start = state.layout.item_start(i, j);
        total += std::f64::consts::LN_2;
        for k in 0..params.categories()[j] {
            let xi = state.xi[start + k];
            let c = k as f64 - y as f64;
            let d = params.threshold(j, k) - b_y;
            total += cell_term(c, eta(xi), xi, d, s, q);
        }
    }
    total
}

fn check_shapes(
    params: &ItemParameters,
    latent: &LatentSpec,
    state: &VariationalState,
    responses: &ResponseMatrix,
) -> Result<()> {
    let ok = params.n_items() == responses.n_items()
        && params.categories() == responses.categories()
        && params.dim() == latent.dim()
        && state.dim() == latent.dim()
        && state.n_examinees() == responses.n_examinees()
        && state.sigma.len() == responses.n_examinees()
        && state.xi.len() == responses.n_examinees() * responses.total_categories();
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(
            "inconsistent shapes among parameters, state and responses".into(),
        ))
    }
}

/// Prior terms `−½ log|Σ_θ| − ½ Tr(Σ_θ⁻¹(Σ_i + μ_iμ_i'))` for one examinee.
pub(crate) fn examinee_prior_term(
    i: usize,
    sigma_inv: &nalgebra::DMatrix<f64>,
    log_det: f64,
    state: &VariationalState,
) -> f64 {
    let mu = state.mu_row(i);
    let tr = (sigma_inv * &state.sigma[i]).trace() + linalg::quad_form(sigma_inv, &mu);
    -0.5 * log_det - 0.5 * tr
}

/// Ē(M_p, ξ) for the whole sample.
pub fn surrogate_objective(
    params: &ItemParameters,
    latent: &LatentSpec,
    state: &VariationalState,
    responses: &ResponseMatrix,
) -> Result<SurrogateValue> {
    surrogate_objective_with(params, latent, state, responses, true)
}

pub(crate) fn surrogate_objective_with(
    params: &ItemParameters,
    latent: &LatentSpec,
    state: &VariationalState,
    responses: &ResponseMatrix,
    ordered: bool,
) -> Result<SurrogateValue> {
    check_shapes(params, latent, state, responses)?;
    let chol = linalg::cholesky(latent.sigma_theta(), "sigma_theta")?;
    let log_det = linalg::log_det_spd(&chol);
    let sigma_inv = linalg::spd_inverse(&chol);
    let n = responses.n_examinees();
    let terms: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .with_min_len(64)
        .map(|i| {
            (
                examinee_item_terms(i, params, state, responses),
                examinee_prior_term(i, &sigma_inv, log_det, state),
            )
        })
        .collect();
    let per_examinee: Vec<f64> = terms.iter().map(|t| t.0).collect();
    let (items, prior) = if ordered {
        terms
            .iter()
            .fold((0.0, 0.0), |acc, t| (acc.0 + t.0, acc.1 + t.1))
    } else {
        (
            terms.par_iter().map(|t| t.0).sum::<f64>(),
            terms.par_iter().map(|t| t.1).sum::<f64>(),
        )
    };
    Ok(SurrogateValue {
        value: items + prior,
        per_examinee,
        prior,
    })
}

/// Σ_i (½ log|Σ_i| + D/2): adding this to Ē gives the full Gaussian
/// evidence lower bound (the variational entropy minus the 2π constants that
/// Ē drops from both the prior and the entropy).
pub fn entropy_correction(state: &VariationalState) -> Result<f64> {
    let d = state.dim() as f64;
    state
        .sigma
        .iter()
        .map(|s| {
            let chol = linalg::cholesky(s, "posterior covariance")?;
            Ok(0.5 * linalg::log_det_spd(&chol) + 0.5 * d)
        })
        .sum()
}
