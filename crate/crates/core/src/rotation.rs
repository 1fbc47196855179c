//! Varimax and promax rotation of loading matrices, and column alignment of
//! one loading matrix to another.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const VARIMAX_MAX_ITER: usize = 1000;
const VARIMAX_EPS: f64 = 1e-10;

/// Result of an oblique rotation: `loadings = input · rotation_matrix`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationResult {
    pub loadings: DMatrix<f64>,
    pub rotation_matrix: DMatrix<f64>,
    /// Correlation of the rotated factors, `(Tᵀ T)⁻¹`, for factors that were
    /// uncorrelated before rotation.
    pub factor_correlation: DMatrix<f64>,
}

/// Varimax output together with the criterion value after each sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Varimax {
    pub loadings: DMatrix<f64>,
    pub rotation: DMatrix<f64>,
    pub criterion_trace: Vec<f64>,
}

/// Raw varimax criterion Σ_r [Σ_j x_jr⁴ − (Σ_j x_jr²)²/J].
pub fn varimax_criterion(x: &DMatrix<f64>) -> f64 {
    let p = x.nrows() as f64;
    (0..x.ncols())
        .map(|r| {
            let col = x.column(r);
            let s4: f64 = col.iter().map(|v| v.powi(4)).sum();
            let s2: f64 = col.iter().map(|v| v * v).sum();
            s4 - s2 * s2 / p
        })
        .sum()
}

/// Orthogonal varimax rotation with Kaiser row normalization.
pub fn varimax(loadings: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let v = varimax_traced(loadings);
    (v.loadings, v.rotation)
}

pub fn varimax_traced(loadings: &DMatrix<f64>) -> Varimax {
    let (p, d) = loadings.shape();
    if d < 2 || p == 0 {
        return Varimax {
            loadings: loadings.clone(),
            rotation: DMatrix::identity(d, d),
            criterion_trace: vec![],
        };
    }
    let scale: Vec<f64> = (0..p)
        .map(|j| {
            let s = loadings.row(j).norm();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    let x = DMatrix::from_fn(p, d, |j, r| loadings[(j, r)] / scale[j]);

    let mut rot = DMatrix::<f64>::identity(d, d);
    let mut crit = 0.0;
    let mut trace = vec![varimax_criterion(&x)];
    for _ in 0..VARIMAX_MAX_ITER {
        let z = &x * &rot;
        let col_ss: Vec<f64> = (0..d)
            .map(|r| z.column(r).iter().map(|v| v * v).sum::<f64>() / p as f64)
            .collect();
        let target = DMatrix::from_fn(p, d, |j, r| z[(j, r)].powi(3) - z[(j, r)] * col_ss[r]);
        let b = x.transpose() * target;
        let svd = b.svd(true, true);
        let u = svd.u.expect("svd u");
        let vt = svd.v_t.expect("svd v_t");
        rot = u * vt;
        let previous = crit;
        crit = svd.singular_values.sum();
        trace.push(varimax_criterion(&(&x * &rot)));
        if crit < previous * (1.0 + VARIMAX_EPS) {
            break;
        }
    }
    let z = &x * &rot;
    let rotated = DMatrix::from_fn(p, d, |j, r| z[(j, r)] * scale[j]);
    Varimax {
        loadings: rotated,
        rotation: rot,
        criterion_trace: trace,
    }
}

/// Promax: varimax, then a least-squares fit to the power-`m` target with
/// column rescaling so the implied factor correlation has unit diagonal.
pub fn promax(loadings: &DMatrix<f64>, m: u32) -> Result<RotationResult> {
    let d = loadings.ncols();
    if m < 1 {
        return Err(Error::InvalidArgument("promax power must be ≥ 1".into()));
    }
    if d < 2 {
        return Ok(RotationResult {
            loadings: loadings.clone(),
            rotation_matrix: DMatrix::identity(d, d),
            factor_correlation: DMatrix::identity(d, d),
        });
    }
    let (vx, vrot) = varimax(loadings);
    let target = vx.map(|v| v * v.abs().powi(m as i32 - 1));
    let xtx = vx.transpose() * &vx;
    let xtx_inv = xtx
        .clone()
        .try_inverse()
        .filter(|inv| inv.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::RotationFailed("singular cross-product in Procrustes step".into()))?;
    let mut u = xtx_inv * vx.transpose() * target;
    let utu_inv = (u.transpose() * &u)
        .try_inverse()
        .ok_or_else(|| Error::RotationFailed("singular target regression".into()))?;
    for c in 0..d {
        let s = utu_inv[(c, c)];
        if !(s > 0.0) {
            return Err(Error::RotationFailed("non-positive column scale".into()));
        }
        let s = s.sqrt();
        for r in 0..d {
            u[(r, c)] *= s;
        }
    }
    let rotation = vrot * u;
    let rotated = loadings * &rotation;
    let phi = (rotation.transpose() * &rotation)
        .try_inverse()
        .ok_or_else(|| Error::RotationFailed("singular rotation matrix".into()))?;
    let mut phi = (&phi + phi.transpose()) * 0.5;
    for c in 0..d {
        phi[(c, c)] = 1.0;
    }
    Ok(RotationResult {
        loadings: rotated,
        rotation_matrix: rotation,
        factor_correlation: phi,
    })
}

/// Column permutation and signs mapping `estimated` onto `reference`:
/// aligned column `q` is `signs[q] · estimated[:, perm[q]]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alignment {
    pub permutation: Vec<usize>,
    pub signs: Vec<i8>,
}

impl Alignment {
    pub fn identity(d: usize) -> Self {
        Self {
            permutation: (0..d).collect(),
            signs: vec![1; d],
        }
    }

    pub fn is_identity(&self) -> bool {
        self.permutation.iter().enumerate().all(|(q, &p)| p == q) && self.signs.iter().all(|&s| s == 1)
    }

    pub fn sign_values(&self) -> Vec<f64> {
        self.signs.iter().map(|&s| s as f64).collect()
    }

    /// Apply to the columns of a J×D matrix.
    pub fn apply_columns(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(m.nrows(), m.ncols(), |r, q| {
            m[(r, self.permutation[q])] * self.signs[q] as f64
        })
    }

    /// Apply to rows and columns of a D×D factor covariance.
    pub fn apply_symmetric(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let d = m.nrows();
        DMatrix::from_fn(d, d, |r, c| {
            m[(self.permutation[r], self.permutation[c])]
                * (self.signs[r] as f64)
                * (self.signs[c] as f64)
        })
    }
}

/// Tucker congruence between column `p` of `x` and column `q` of `y`.
pub fn congruence(x: &DMatrix<f64>, p: usize, y: &DMatrix<f64>, q: usize) -> f64 {
    let cx = x.column(p);
    let cy = y.column(q);
    let den = (cx.norm_squared() * cy.norm_squared()).sqrt();
    if den > 0.0 {
        cx.dot(&cy) / den
    } else {
        0.0
    }
}

/// Greedy maximum-absolute-congruence matching of columns.
pub fn align_factors(estimated: &DMatrix<f64>, reference: &DMatrix<f64>) -> Result<Alignment> {
    if estimated.shape() != reference.shape() {
        return Err(Error::InvalidArgument(format!(
            "cannot align {:?} to {:?}",
            estimated.shape(),
            reference.shape()
        )));
    }
    let d = estimated.ncols();
    let mut cong = vec![vec![0.0; d]; d];
    for (p, row) in cong.iter_mut().enumerate() {
        for (q, slot) in row.iter_mut().enumerate() {
            *slot = congruence(estimated, p, reference, q);
        }
    }
    let mut used_est = vec![false; d];
    let mut used_ref = vec![false; d];
    let mut alignment = Alignment::identity(d);
    for _ in 0..d {
        let mut best: Option<(usize, usize, f64)> = None;
        for p in (0..d).filter(|&p| !used_est[p]) {
            for q in (0..d).filter(|&q| !used_ref[q]) {
                let v = cong[p][q].abs();
                if best.is_none_or(|b| v > b.2) {
                    best = Some((p, q, v));
                }
            }
        }
        let (p, q, _) = best.expect("unmatched column");
        used_est[p] = true;
        used_ref[q] = true;
        alignment.permutation[q] = p;
        alignment.signs[q] = if cong[p][q] < 0.0 { -1 } else { 1 };
    }
    Ok(alignment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn simple_structure() -> DMatrix<f64> {
        DMatrix::from_row_slice(
            6,
            2,
            &[0.9, 0.0, 0.8, 0.0, 0.7, 0.0, 0.0, 0.85, 0.0, 0.75, 0.0, 0.6],
        )
    }

    #[test]
    fn varimax_keeps_simple_structure() {
        let (rot, t) = varimax(&simple_structure());
        for r in 0..2 {
            for c in 0..2 {
                assert_abs_diff_eq!(t[(r, c)].abs(), if r == c { 1.0 } else { 0.0 }, epsilon = 1e-6);
            }
        }
        assert_abs_diff_eq!(
            (t.transpose() * &t - DMatrix::identity(2, 2)).amax(),
            0.0,
            epsilon = 1e-10
        );
        assert_abs_diff_eq!(rot.map(f64::abs), simple_structure(), epsilon = 1e-6);
    }

    #[test]
    fn one_factor_is_untouched() {
        let l = DMatrix::from_column_slice(3, 1, &[0.3, 0.5, 0.7]);
        let (rot, t) = varimax(&l);
        assert_eq!(rot, l);
        assert_eq!(t, DMatrix::identity(1, 1));
        let p = promax(&l, 4).unwrap();
        assert_eq!(p.loadings, l);
    }

    #[test]
    fn promax_on_simple_structure() {
        let p = promax(&simple_structure(), 4).unwrap();
        assert_abs_diff_eq!(p.factor_correlation[(0, 1)], 0.0, epsilon = 0.05);
        let back = &p.loadings * p.rotation_matrix.clone().try_inverse().unwrap();
        assert_abs_diff_eq!(back, simple_structure(), epsilon = 1e-8);
    }

    #[test]
    fn promax_rejects_zero_power() {
        assert!(promax(&simple_structure(), 0).is_err());
    }

    #[test]
    fn alignment_recovers_swap_and_sign() {
        let r = simple_structure();
        assert!(align_factors(&r, &r).unwrap().is_identity());
        let swapped = DMatrix::from_fn(6, 2, |j, c| if c == 0 { -r[(j, 1)] } else { r[(j, 0)] });
        let al = align_factors(&swapped, &r).unwrap();
        assert_eq!(al.permutation, vec![1, 0]);
        assert_eq!(al.signs, vec![1, -1]);
        assert_eq!(al.apply_columns(&swapped), r);
    }
}
