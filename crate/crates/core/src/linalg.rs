//! Small dense helpers over `nalgebra` for the D×D systems that show up
//! everywhere in the estimator.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub(crate) fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
        .ok_or_else(|| Error::NumericalDomain(format!("{what} is not positive-definite")))
}

pub(crate) fn log_det_spd(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Inverse of an SPD matrix, symmetrized to kill round-off asymmetry.
pub(crate) fn spd_inverse(chol: &Cholesky<f64, Dyn>) -> DMatrix<f64> {
    symmetrize(&chol.inverse())
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Solve `m x = rhs` for symmetric `m`; falls back to a 1e-8 ridge when the
/// Cholesky factorization fails. Returns whether the ridge was needed.
pub(crate) fn solve_spd_with_ridge(m: &DMatrix<f64>, rhs: &DVector<f64>) -> (DVector<f64>, bool) {
    if let Some(chol) = Cholesky::new(m.clone()) {
        let x = chol.solve(rhs);
        if x.iter().all(|v| v.is_finite()) {
            return (x, false);
        }
    }
    let d = m.nrows();
    let mut ridge = 1e-8;
    loop {
        let reg = m + DMatrix::identity(d, d) * ridge;
        if let Some(chol) = Cholesky::new(reg) {
            let x = chol.solve(rhs);
            if x.iter().all(|v| v.is_finite()) {
                return (x, true);
            }
        }
        ridge *= 10.0;
        if ridge > 1e8 {
            return (DVector::zeros(d), true);
        }
    }
}

pub(crate) fn is_spd(m: &DMatrix<f64>) -> bool {
    m.is_square() && Cholesky::new(m.clone()).is_some()
}

/// Rescale a covariance to unit diagonal: D^{-1/2} S D^{-1/2}.
pub(crate) fn to_correlation(s: &DMatrix<f64>) -> DMatrix<f64> {
    let d = s.nrows();
    let scale: Vec<f64> = (0..d).map(|r| 1.0 / s[(r, r)].sqrt()).collect();
    let mut out = DMatrix::from_fn(d, d, |r, c| s[(r, c)] * scale[r] * scale[c]);
    for r in 0..d {
        out[(r, r)] = 1.0;
    }
    symmetrize(&out)
}

#[inline]
pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Quadratic form `x' m x` with `m` column-major D×D.
#[inline]
pub(crate) fn quad_form(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    let d = x.len();
    let mut acc = 0.0;
    for c in 0..d {
        let mut col = 0.0;
        for r in 0..d {
            col += m[(r, c)] * x[r];
        }
        acc += col * x[c];
    }
    acc
}
