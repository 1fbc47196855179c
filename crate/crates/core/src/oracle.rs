//! Slow reference computations by Gauss–Hermite quadrature: the exact
//! marginal log-likelihood, exact posterior moments, and a fixed-quadrature
//! EM maximum marginal likelihood fit for one-dimensional models.
//!
//! The lattice has `q^D` nodes, so everything here refuses D > 3.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{log_irf_into, ItemParameters, LatentSpec, ResponseMatrix};

pub const DEFAULT_NODES: usize = 31;
pub const MAX_ORACLE_DIM: usize = 3;
/// Item limit of the reference MMLE.
pub const MAX_MMLE_ITEMS: usize = 25;

/// Gauss–Hermite nodes and weights for the standard normal measure.
pub fn gauss_hermite_standard(q: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(q >= 1, "need at least one node");
    let jacobi = DMatrix::from_fn(q, q, |r, c| {
        if r + 1 == c || c + 1 == r {
            (r.max(c) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..q)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    (
        pairs.iter().map(|p| p.0).collect(),
        pairs.iter().map(|p| p.1 / total).collect(),
    )
}

/// Product Gauss–Hermite rule mapped to N(0, Σ_θ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureGrid {
    dim: usize,
    q_per_dim: usize,
    /// Row-major `q^D × D` node coordinates.
    nodes: Vec<f64>,
    log_weights: Vec<f64>,
}

impl QuadratureGrid {
    pub fn new(sigma_theta: &DMatrix<f64>, q_per_dim: usize) -> Result<Self> {
        let dim = sigma_theta.nrows();
        if dim == 0 || dim > MAX_ORACLE_DIM {
            return Err(Error::Refused(format!(
                "quadrature oracle supports 1 ≤ D ≤ {MAX_ORACLE_DIM}, got {dim}"
            )));
        }
        if q_per_dim == 0 {
            return Err(Error::InvalidArgument("need at least one node per dimension".into()));
        }
        let chol = linalg::cholesky(sigma_theta, "sigma_theta")?;
        let l = chol.l();
        let (z, w) = gauss_hermite_standard(q_per_dim);
        let total = q_per_dim.pow(dim as u32);
        let mut nodes = Vec::with_capacity(total * dim);
        let mut log_weights = Vec::with_capacity(total);
        let mut idx = vec![0usize; dim];
        for _ in 0..total {
            let zs: Vec<f64> = idx.iter().map(|&i| z[i]).collect();
            for r in 0..dim {
                nodes.push((0..=r).map(|c| l[(r, c)] * zs[c]).sum());
            }
            log_weights.push(idx.iter().map(|&i| w[i].ln()).sum());
            for slot in idx.iter_mut().rev() {
                *slot += 1;
                if *slot < q_per_dim {
                    break;
                }
                *slot = 0;
            }
        }
        Ok(Self {
            dim,
            q_per_dim,
            nodes,
            log_weights,
        })
    }

    pub fn for_latent(latent: &LatentSpec, q_per_dim: usize) -> Result<Self> {
        Self::new(latent.sigma_theta(), q_per_dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn q_per_dim(&self) -> usize {
        self.q_per_dim
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn node(&self, q: usize) -> &[f64] {
        &self.nodes[q * self.dim..(q + 1) * self.dim]
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }
}

fn check_compatible(params: &ItemParameters, grid: &QuadratureGrid) -> Result<()> {
    if params.dim() > MAX_ORACLE_DIM {
        return Err(Error::Refused(format!(
            "quadrature oracle refuses D = {} > {MAX_ORACLE_DIM}",
            params.dim()
        )));
    }
    if params.dim() != grid.dim() {
        return Err(Error::InvalidArgument("grid dimension differs from parameters".into()));
    }
    Ok(())
}

/// `table[q][offset_j + k] = log P(Y_j = k | θ_q)`.
fn log_prob_table(params: &ItemParameters, grid: &QuadratureGrid) -> (Vec<f64>, Vec<usize>, usize) {
    let mut offsets = Vec::with_capacity(params.n_items());
    let mut stride = 0;
    for &k in params.categories() {
        offsets.push(stride);
        stride += k;
    }
    let a_rows: Vec<Vec<f64>> = (0..params.n_items()).map(|j| params.a_row(j)).collect();
    let b_rows: Vec<Vec<f64>> = (0..params.n_items()).map(|j| params.thresholds(j)).collect();
    let mut table = vec![0.0; grid.len() * stride];
    table
        .par_chunks_mut(stride.max(1))
        .enumerate()
        .for_each(|(q, out)| {
            if stride == 0 {
                return;
            }
            let theta = grid.node(q);
            for j in 0..a_rows.len() {
                let s = linalg::dot(&a_rows[j], theta);
                let k = params.categories()[j];
                log_irf_into(s, &b_rows[j], &mut out[offsets[j]..offsets[j] + k]);
            }
        });
    (table, offsets, stride)
}

/// Log posterior weights over the grid for one examinee (unnormalized) and
/// their log-sum-exp.
fn examinee_log_posterior(
    i: usize,
    responses: &ResponseMatrix,
    grid: &QuadratureGrid,
    table: &[f64],
    offsets: &[usize],
    stride: usize,
) -> (Vec<f64>, f64) {
    let mut lp = grid.log_weights().to_vec();
    for (q, slot) in lp.iter_mut().enumerate() {
        let base = q * stride;
        for j in 0..responses.n_items() {
            if let Some(y) = responses.get(i, j) {
                *slot += table[base + offsets[j] + y];
            }
        }
    }
    let max = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + lp.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    (lp, lse)
}

/// Σ_i log ∫ Π_j P(y_ij | θ) φ(θ) dθ by quadrature.
pub fn marginal_loglik(
    responses: &ResponseMatrix,
    params: &ItemParameters,
    grid: &QuadratureGrid,
) -> Result<f64> {
    check_compatible(params, grid)?;
    if params.categories() != responses.categories() {
        return Err(Error::InvalidArgument("responses do not match parameters".into()));
    }
    if responses.n_items() == 0 {
        return Ok(0.0);
    }
    let (table, offsets, stride) = log_prob_table(params, grid);
    let per: Vec<f64> = (0..responses.n_examinees())
        .into_par_iter()
        .map(|i| examinee_log_posterior(i, responses, grid, &table, &offsets, stride).1)
        .collect();
    Ok(per.iter().sum())
}

/// Exact posterior mean and covariance of θ for examinee `i`.
pub fn posterior_moments(
    i: usize,
    responses: &ResponseMatrix,
    params: &ItemParameters,
    grid: &QuadratureGrid,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_compatible(params, grid)?;
    let d = grid.dim();
    let (table, offsets, stride) = log_prob_table(params, grid);
    let (lp, lse) = examinee_log_posterior(i, responses, grid, &table, &offsets, stride);
    let mut mean = DVector::zeros(d);
    let mut second = DMatrix::zeros(d, d);
    for (q, l) in lp.iter().enumerate() {
        let w = (l - lse).exp();
        let th = grid.node(q);
        for r in 0..d {
            mean[r] += w * th[r];
            for c in 0..d {
                second[(r, c)] += w * th[r] * th[c];
            }
        }
    }
    let cov = &second - &mean * mean.transpose();
    Ok((mean, linalg::symmetrize(&cov)))
}

/// Settings for the fixed-quadrature EM reference fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmleConfig {
    pub max_iterations: usize,
    /// Stop when the marginal log-likelihood gain drops below this.
    pub tolerance: f64,
    pub nodes: usize,
}

impl Default for MmleConfig {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            tolerance: 1e-7,
            nodes: DEFAULT_NODES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmleResult {
    pub params: ItemParameters,
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Bock–Aitkin EM with a fixed N(0, 1) quadrature; one-dimensional only.
pub fn reference_mmle(
    responses: &ResponseMatrix,
    dim: usize,
    config: &MmleConfig,
) -> Result<MmleResult> {
    if dim != 1 {
        return Err(Error::Refused("reference MMLE is one-dimensional only".into()));
    }
    if responses.n_items() > MAX_MMLE_ITEMS {
        return Err(Error::Refused(format!("reference MMLE limited to J ≤ {MAX_MMLE_ITEMS}")));
    }
    responses.check_estimable()?;
    let grid = QuadratureGrid::new(&DMatrix::identity(1, 1), config.nodes)?;
    let j_items = responses.n_items();
    let n_nodes = grid.len();

    let mut params = ItemParameters::zeros(responses.categories().to_vec(), 1);
    for j in 0..j_items {
        params.set_a_row(j, &[1.0]);
        let counts = responses.category_counts(j);
        for k in 1..counts.len() {
            params.set_threshold(j, k, -((counts[k] as f64) / (counts[0] as f64)).ln());
        }
    }

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..config.max_iterations {
        iterations += 1;
        let (table, offsets, stride) = log_prob_table(&params, &grid);
        let posts: Vec<(Vec<f64>, f64)> = (0..responses.n_examinees())
            .into_par_iter()
            .map(|i| examinee_log_posterior(i, responses, &grid, &table, &offsets, stride))
            .collect();
        let ll: f64 = posts.iter().map(|p| p.1).sum();
        if let Some(&prev) = trace.last() {
            if ll - prev < config.tolerance {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);

        // expected counts r[j][q][k]
        let mut counts: Vec<DMatrix<f64>> = responses
            .categories()
            .iter()
            .map(|&k| DMatrix::zeros(n_nodes, k))
            .collect();
        for (i, (lp, lse)) in posts.iter().enumerate() {
            for (q, l) in lp.iter().enumerate() {
                let w = (l - lse).exp();
                for (j, c) in counts.iter_mut().enumerate() {
                    c[(q, responses.row(i)[j])] += w;
                }
            }
        }
        let nodes: Vec<f64> = (0..n_nodes).map(|q| grid.node(q)[0]).collect();
        let updated: Vec<Vec<f64>> = (0..j_items)
            .into_par_iter()
            .map(|j| {
                let mut phi = vec![params.a()[(j, 0)]];
                phi.extend(params.thresholds(j));
                newton_item(&phi, &counts[j], &nodes)
            })
            .collect();
        for (j, phi) in updated.into_iter().enumerate() {
            params.set_a_row(j, &phi[..1]);
            for (k, v) in phi[1..].iter().enumerate() {
                params.set_threshold(j, k + 1, *v);
            }
        }
    }
    Ok(MmleResult {
        params,
        loglik_trace: trace,
        iterations,
        converged,
    })
}

/// Expected complete-data log-likelihood of one item, φ = (a, b_1..b_{K−1}).
fn item_objective(phi: &[f64], counts: &DMatrix<f64>, nodes: &[f64]) -> f64 {
    let k = counts.ncols();
    let mut lp = vec![0.0; k];
    let mut total = 0.0;
    for (q, &th) in nodes.iter().enumerate() {
        log_irf_into(phi[0] * th, &phi[1..], &mut lp);
        for (c, l) in lp.iter().enumerate() {
            total += counts[(q, c)] * l;
        }
    }
    total
}

/// Damped Newton ascent on the concave per-item M-step objective.
fn newton_item(start: &[f64], counts: &DMatrix<f64>, nodes: &[f64]) -> Vec<f64> {
    let k = counts.ncols();
    let m = k;
    let mut phi = start.to_vec();
    let mut f = item_objective(&phi, counts, nodes);
    let mut lp = vec![0.0; k];
    for _ in 0..50 {
        let mut grad = DVector::<f64>::zeros(m);
        let mut info = DMatrix::<f64>::zeros(m, m);
        for (q, &th) in nodes.iter().enumerate() {
            let n_q: f64 = counts.row(q).sum();
            if n_q <= 0.0 {
                continue;
            }
            log_irf_into(phi[0] * th, &phi[1..], &mut lp);
            let p: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
            // feature of category c: (c·θ, −e_c)
            let feature = |c: usize| -> DVector<f64> {
                let mut v = DVector::zeros(m);
                v[0] = c as f64 * th;
                if c > 0 {
                    v[c] = -1.0;
                }
                v
            };
            let mut mean = DVector::zeros(m);
            for (c, pc) in p.iter().enumerate() {
                mean += feature(c) * *pc;
            }
            for c in 0..k {
                let fc = feature(c);
                grad += &fc * counts[(q, c)];
                info += (&fc * fc.transpose()) * (n_q * p[c]);
            }
            grad -= &mean * n_q;
            info -= (&mean * mean.transpose()) * n_q;
        }
        if grad.amax() < 1e-10 {
            break;
        }
        let (step, _) = linalg::solve_spd_with_ridge(&info, &grad);
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let cand: Vec<f64> = phi.iter().zip(step.iter()).map(|(x, s)| x + t * s).collect();
            let fc = item_objective(&cand, counts, nodes);
            if fc >= f {
                phi = cand;
                f = fc;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    phi
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn hermite_rule_integrates_moments() {
        let (z, w) = gauss_hermite_standard(21);
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        let m2: f64 = z.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        let m4: f64 = z.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
        assert_abs_diff_eq!(m2, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(m4, 3.0, epsilon = 1e-9);
    }

    #[test]
    fn grid_weights_normalized() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.0]);
        let g = QuadratureGrid::new(&s, 11).unwrap();
        let total: f64 = g.log_weights().iter().map(|l| l.exp()).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-8);
        let cov01: f64 = (0..g.len())
            .map(|q| g.log_weights()[q].exp() * g.node(q)[0] * g.node(q)[1])
            .sum();
        assert_abs_diff_eq!(cov01, 0.4, epsilon = 1e-10);
    }

    #[test]
    fn refuses_high_dimension() {
        assert!(matches!(
            QuadratureGrid::new(&DMatrix::identity(4, 4), 5),
            Err(Error::Refused(_))
        ));
    }

    #[test]
    fn empty_test_has_zero_loglik() {
        let rm = ResponseMatrix::from_flat(5, 0, vec![], vec![]).unwrap();
        let p = ItemParameters::zeros(vec![], 1);
        let g = QuadratureGrid::new(&DMatrix::identity(1, 1), 7).unwrap();
        assert_eq!(marginal_loglik(&rm, &p, &g).unwrap(), 0.0);
    }

    #[test]
    fn flat_item_loglik() {
        let rm = ResponseMatrix::from_flat(4, 1, vec![2], vec![0, 1, 1, 0]).unwrap();
        let p = ItemParameters::zeros(vec![2], 1);
        let g = QuadratureGrid::new(&DMatrix::identity(1, 1), 7).unwrap();
        assert_abs_diff_eq!(
            marginal_loglik(&rm, &p, &g).unwrap(),
            4.0 * 0.5f64.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn posterior_equals_prior_without_information() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let rm = ResponseMatrix::from_flat(1, 2, vec![3, 2], vec![2, 0]).unwrap();
        let mut p = ItemParameters::zeros(vec![3, 2], 2);
        p.set_threshold(0, 1, 0.4);
        let g = QuadratureGrid::new(&s, 15).unwrap();
        let (m, c) = posterior_moments(0, &rm, &p, &g).unwrap();
        assert_abs_diff_eq!(m.amax(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c, s, epsilon = 1e-10);
    }

    #[test]
    fn mmle_refuses_multidimensional() {
        let rm = ResponseMatrix::from_rows(&[vec![0], vec![1]], None).unwrap();
        assert!(matches!(
            reference_mmle(&rm, 2, &MmleConfig::default()),
            Err(Error::Refused(_))
        ));
    }
}
