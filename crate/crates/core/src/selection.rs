//! Modified AIC/BIC built on the surrogate objective, and the latent
//! dimension sweep.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{fit, FitConfig, FitResult};
use crate::error::{Error, Result};
use crate::model::{ItemParameters, ResponseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InformationCriteria {
    pub aic_star: f64,
    pub bic_star: f64,
    /// ‖A‖₀ + ‖B‖₀ + ‖nondiag(Σ_θ)‖₀ / 2.
    pub n_params: f64,
    pub surrogate: f64,
}

/// Nonzero count of A, of the estimable thresholds, and half the nonzero
/// off-diagonal entries of Σ_θ.
pub fn parameter_count(params: &ItemParameters, sigma_theta: &DMatrix<f64>) -> f64 {
    let a_nz = params.a().iter().filter(|v| **v != 0.0).count();
    let b_nz = (0..params.n_items())
        .map(|j| params.thresholds(j).iter().filter(|v| **v != 0.0).count())
        .sum::<usize>();
    let d = sigma_theta.nrows();
    let off_nz = (0..d)
        .flat_map(|r| (0..d).map(move |c| (r, c)))
        .filter(|&(r, c)| r != c && sigma_theta[(r, c)] != 0.0)
        .count();
    (a_nz + b_nz) as f64 + off_nz as f64 / 2.0
}

pub fn criteria_from(n_params: f64, surrogate: f64, n_examinees: usize) -> InformationCriteria {
    InformationCriteria {
        aic_star: 2.0 * n_params - 2.0 * surrogate,
        bic_star: (n_examinees as f64).ln() * n_params - 2.0 * surrogate,
        n_params,
        surrogate,
    }
}

/// AIC* and BIC* of a fit on `n_examinees` examinees.
pub fn information_criteria(fit: &FitResult, n_examinees: usize) -> InformationCriteria {
    criteria_from(
        parameter_count(&fit.params, &fit.sigma_theta),
        fit.final_surrogate(),
        n_examinees,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionFit {
    pub dim: usize,
    pub criteria: InformationCriteria,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSweepResult {
    pub per_dim: Vec<DimensionFit>,
    pub best_aic: usize,
    pub best_bic: usize,
}

fn argmin_dim(per_dim: &[DimensionFit], key: impl Fn(&DimensionFit) -> f64) -> usize {
    let mut best = &per_dim[0];
    for cand in &per_dim[1..] {
        let (kc, kb) = (key(cand), key(best));
        if kc < kb || (kc == kb && cand.dim < best.dim) {
            best = cand;
        }
    }
    best.dim
}

/// Assemble a sweep result; ties go to the smaller dimension.
pub fn summarize(per_dim: Vec<DimensionFit>) -> Result<DimensionSweepResult> {
    if per_dim.is_empty() {
        return Err(Error::InvalidArgument("empty dimension range".into()));
    }
    let best_aic = argmin_dim(&per_dim, |f| f.criteria.aic_star);
    let best_bic = argmin_dim(&per_dim, |f| f.criteria.bic_star);
    Ok(DimensionSweepResult {
        per_dim,
        best_aic,
        best_bic,
    })
}

/// Fit every dimension in `dims` from a fresh start seeded with `seed ⊕ D`.
pub fn sweep_dimensions(
    responses: &ResponseMatrix,
    dims: &[usize],
    config: &FitConfig,
) -> Result<DimensionSweepResult> {
    if dims.is_empty() {
        return Err(Error::InvalidArgument("empty dimension range".into()));
    }
    let fits: Vec<Result<DimensionFit>> = dims
        .par_iter()
        .map(|&d| {
            let cfg = FitConfig {
                seed: config.seed ^ d as u64,
                ..config.clone()
            };
            let f = fit(responses, d, &cfg)?;
            Ok(DimensionFit {
                dim: d,
                criteria: information_criteria(&f, responses.n_examinees()),
                iterations: f.iterations,
                converged: f.converged,
            })
        })
        .collect();
    summarize(fits.into_iter().collect::<Result<Vec<_>>>()?)
}
