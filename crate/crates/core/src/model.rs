//! Data model of the multidimensional generalized partial credit model:
//! response matrices, item parameters, the latent covariance, per-examinee
//! variational state, and the item response function.
//!
//! Categories are dense codes `0..K_j`; the threshold of category 0 is fixed
//! at zero and never stored. The response function used throughout is
//!
//! ```text
//! P(Y_ij = k | θ) = exp(k a_j'θ − b_jk) / Σ_v exp(v a_j'θ − b_jv)
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// N×J matrix of category codes with per-item category counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    n_examinees: usize,
    n_items: usize,
    categories: Vec<usize>,
    data: Vec<usize>,
    missing: Option<Vec<bool>>,
}

impl ResponseMatrix {
    /// Build from row-major codes. Every code must lie in `0..categories[j]`.
    pub fn from_flat(
        n_examinees: usize,
        n_items: usize,
        categories: Vec<usize>,
        data: Vec<usize>,
    ) -> Result<Self> {
        Self::with_missing(n_examinees, n_items, categories, data, None)
    }

    pub fn with_missing(
        n_examinees: usize,
        n_items: usize,
        categories: Vec<usize>,
        data: Vec<usize>,
        missing: Option<Vec<bool>>,
    ) -> Result<Self> {
        if categories.len() != n_items {
            return Err(Error::InvalidArgument(format!(
                "{} category counts for {} items",
                categories.len(),
                n_items
            )));
        }
        if data.len() != n_examinees * n_items {
            return Err(Error::InvalidArgument(format!(
                "data length {} does not match {}x{}",
                data.len(),
                n_examinees,
                n_items
            )));
        }
        if let Some(m) = &missing {
            if m.len() != data.len() {
                return Err(Error::InvalidArgument("missing mask has wrong length".into()));
            }
        }
        if let Some((j, &k)) = categories.iter().enumerate().find(|(_, &k)| k < 2) {
            return Err(Error::InvalidArgument(format!(
                "item {j} has {k} categories; at least 2 required"
            )));
        }
        for i in 0..n_examinees {
            for j in 0..n_items {
                let idx = i * n_items + j;
                if missing.as_ref().is_some_and(|m| m[idx]) {
                    continue;
                }
                if data[idx] >= categories[j] {
                    return Err(Error::InvalidArgument(format!(
                        "response {} of examinee {i} to item {j} outside 0..{}",
                        data[idx], categories[j]
                    )));
                }
            }
        }
        let missing = missing.filter(|m| m.iter().any(|&x| x));
        Ok(Self {
            n_examinees,
            n_items,
            categories,
            data,
            missing,
        })
    }

    /// Build from rows; category counts default to `max observed + 1` per item.
    pub fn from_rows(rows: &[Vec<usize>], categories: Option<Vec<usize>>) -> Result<Self> {
        let n = rows.len();
        let j = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != j) {
            return Err(Error::InvalidArgument("ragged rows".into()));
        }
        let categories = categories.unwrap_or_else(|| {
            (0..j)
                .map(|c| rows.iter().map(|r| r[c]).max().unwrap_or(0) + 1)
                .map(|k| k.max(2))
                .collect()
        });
        Self::from_flat(n, j, categories, rows.concat())
    }

    pub fn n_examinees(&self) -> usize {
        self.n_examinees
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn categories(&self) -> &[usize] {
        &self.categories
    }

    pub fn max_categories(&self) -> usize {
        self.categories.iter().copied().max().unwrap_or(2)
    }

    /// Σ_j K_j.
    pub fn total_categories(&self) -> usize {
        self.categories.iter().sum()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<usize> {
        let idx = i * self.n_items + j;
        match &self.missing {
            Some(m) if m[idx] => None,
            _ => Some(self.data[idx]),
        }
    }

    /// Raw row of codes. Missing cells hold an unspecified code; use
    /// [`ResponseMatrix::get`] when missingness matters.
    pub fn row(&self, i: usize) -> &[usize] {
        &self.data[i * self.n_items..(i + 1) * self.n_items]
    }

    pub fn has_missing(&self) -> bool {
        self.missing.is_some()
    }

    pub fn is_missing(&self, i: usize, j: usize) -> bool {
        self.get(i, j).is_none()
    }

    /// Observation count per category of item `j`.
    pub fn category_counts(&self, j: usize) -> Vec<usize> {
        let mut counts = vec![0; self.categories[j]];
        for i in 0..self.n_examinees {
            if let Some(k) = self.get(i, j) {
                counts[k] += 1;
            }
        }
        counts
    }

    /// (item, category) pairs with no observation.
    pub fn unobserved_pairs(&self) -> Vec<(usize, usize)> {
        (0..self.n_items)
            .flat_map(|j| {
                self.category_counts(j)
                    .into_iter()
                    .enumerate()
                    .filter(|(_, c)| *c == 0)
                    .map(move |(k, _)| (j, k))
            })
            .collect()
    }

    /// The (item, category) pair with the fewest observations.
    pub fn sparsest_pair(&self) -> (usize, usize) {
        let mut best = (0, 0, usize::MAX);
        for j in 0..self.n_items {
            for (k, c) in self.category_counts(j).into_iter().enumerate() {
                if c < best.2 {
                    best = (j, k, c);
                }
            }
        }
        (best.0, best.1)
    }

    /// Estimation requires complete data with every (item, category) observed.
    pub fn check_estimable(&self) -> Result<()> {
        if self.n_examinees == 0 || self.n_items == 0 {
            return Err(Error::InvalidArgument("empty response matrix".into()));
        }
        if self.has_missing() {
            return Err(Error::InvalidArgument(
                "response matrix contains missing values; drop incomplete rows first".into(),
            ));
        }
        let offenders = self.unobserved_pairs();
        if offenders.is_empty() {
            Ok(())
        } else {
            Err(Error::Rejected { offenders })
        }
    }

    /// Listwise deletion of rows with any missing cell.
    pub fn drop_incomplete(&self) -> Result<Self> {
        let keep: Vec<usize> = (0..self.n_examinees)
            .filter(|&i| (0..self.n_items).all(|j| !self.is_missing(i, j)))
            .collect();
        let data = keep.iter().flat_map(|&i| self.row(i).to_vec()).collect();
        Self::from_flat(keep.len(), self.n_items, self.categories.clone(), data)
    }
}

/// Discrimination and threshold parameters.
///
/// `a` is J×D. `b` is J×(K_max−1); column `k−1` holds `b_jk` for
/// `k = 1..K_j`, entries past `K_j−1` are unused and kept at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemParameters {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    categories: Vec<usize>,
}

impl ItemParameters {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, categories: Vec<usize>) -> Result<Self> {
        let j = categories.len();
        let k_max = categories.iter().copied().max().unwrap_or(2);
        if a.nrows() != j || b.nrows() != j || b.ncols() != k_max - 1 {
            return Err(Error::InvalidArgument(format!(
                "parameter shapes a {}x{}, b {}x{} inconsistent with {} items (K_max {})",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                j,
                k_max
            )));
        }
        if a.ncols() == 0 {
            return Err(Error::InvalidArgument("latent dimension must be ≥ 1".into()));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite item parameter".into()));
        }
        let mut b = b;
        for (row, &k) in categories.iter().enumerate() {
            for c in (k - 1)..(k_max - 1) {
                b[(row, c)] = 0.0;
            }
        }
        Ok(Self { a, b, categories })
    }

    pub fn zeros(categories: Vec<usize>, dim: usize) -> Self {
        let j = categories.len();
        let k_max = categories.iter().copied().max().unwrap_or(2);
        Self {
            a: DMatrix::zeros(j, dim),
            b: DMatrix::zeros(j, k_max - 1),
            categories,
        }
    }

    pub fn n_items(&self) -> usize {
        self.categories.len()
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn categories(&self) -> &[usize] {
        &self.categories
    }

    pub fn max_categories(&self) -> usize {
        self.categories.iter().copied().max().unwrap_or(2)
    }

    /// Number of estimable thresholds Σ_j (K_j − 1).
    pub fn n_thresholds(&self) -> usize {
        self.categories.iter().map(|k| k - 1).sum()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn a_row(&self, j: usize) -> Vec<f64> {
        self.a.row(j).iter().copied().collect()
    }

    pub fn set_a_row(&mut self, j: usize, values: &[f64]) {
        for (r, v) in values.iter().enumerate() {
            self.a[(j, r)] = *v;
        }
    }

    /// `b_jk`, with `b_j0 = 0`.
    #[inline]
    pub fn threshold(&self, j: usize, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.b[(j, k - 1)]
        }
    }

    /// Thresholds `b_j1..b_j(K_j−1)`.
    pub fn thresholds(&self, j: usize) -> Vec<f64> {
        (1..self.categories[j]).map(|k| self.b[(j, k - 1)]).collect()
    }

    /// `(0, b_j1, .., b_j(K_j−1))`.
    pub fn thresholds_with_zero(&self, j: usize) -> Vec<f64> {
        (0..self.categories[j]).map(|k| self.threshold(j, k)).collect()
    }

    pub fn set_threshold(&mut self, j: usize, k: usize, value: f64) {
        assert!(k >= 1 && k < self.categories[j], "threshold index out of range");
        self.b[(j, k - 1)] = value;
    }

    /// Reorder and flip factor columns of `a`: new column `q` is old column
    /// `perm[q]` times `signs[q]`.
    pub fn permute_factors(&self, perm: &[usize], signs: &[f64]) -> Self {
        let a = DMatrix::from_fn(self.a.nrows(), self.a.ncols(), |r, q| {
            self.a[(r, perm[q])] * signs[q]
        });
        Self {
            a,
            b: self.b.clone(),
            categories: self.categories.clone(),
        }
    }

    pub fn with_a(&self, a: DMatrix<f64>) -> Self {
        Self {
            a,
            b: self.b.clone(),
            categories: self.categories.clone(),
        }
    }
}

/// Exploratory (Σ_θ fixed at identity) or confirmatory (Σ_θ estimated).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Efa,
    Cfa,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "efa" => Ok(Mode::Efa),
            "cfa" => Ok(Mode::Cfa),
            other => Err(Error::InvalidArgument(format!("unknown mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Efa => "efa",
            Mode::Cfa => "cfa",
        })
    }
}

/// Latent dimension, latent correlation matrix and analysis mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSpec {
    sigma_theta: DMatrix<f64>,
    mode: Mode,
}

impl LatentSpec {
    pub fn new(sigma_theta: DMatrix<f64>, mode: Mode) -> Result<Self> {
        let d = sigma_theta.nrows();
        if d == 0 || !sigma_theta.is_square() {
            return Err(Error::InvalidArgument("sigma_theta must be square, D ≥ 1".into()));
        }
        for r in 0..d {
            if (sigma_theta[(r, r)] - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidArgument(
                    "sigma_theta must have unit diagonal".into(),
                ));
            }
            for c in 0..r {
                if (sigma_theta[(r, c)] - sigma_theta[(c, r)]).abs() > 1e-10 {
                    return Err(Error::InvalidArgument("sigma_theta must be symmetric".into()));
                }
            }
        }
        if !linalg::is_spd(&sigma_theta) {
            return Err(Error::NumericalDomain("sigma_theta is not positive-definite".into()));
        }
        if mode == Mode::Efa && sigma_theta != DMatrix::identity(d, d) {
            return Err(Error::InvalidArgument("EFA mode requires sigma_theta = I".into()));
        }
        Ok(Self { sigma_theta, mode })
    }

    pub fn identity(dim: usize, mode: Mode) -> Self {
        Self {
            sigma_theta: DMatrix::identity(dim, dim),
            mode,
        }
    }

    pub fn dim(&self) -> usize {
        self.sigma_theta.nrows()
    }

    pub fn sigma_theta(&self) -> &DMatrix<f64> {
        &self.sigma_theta
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Replace Σ_θ (confirmatory updates only; checks are the caller's job).
    pub(crate) fn set_sigma_theta(&mut self, sigma: DMatrix<f64>) {
        self.sigma_theta = sigma;
    }
}

/// Ragged (examinee, item, category) indexing for ξ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XiLayout {
    offsets: Vec<usize>,
    stride: usize,
}

impl XiLayout {
    pub fn new(categories: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(categories.len());
        let mut acc = 0;
        for &k in categories {
            offsets.push(acc);
            acc += k;
        }
        Self {
            offsets,
            stride: acc,
        }
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i * self.stride + self.offsets[j] + k
    }

    #[inline]
    pub fn item_start(&self, i: usize, j: usize) -> usize {
        i * self.stride + self.offsets[j]
    }

    pub fn stride(&self) -> usize {
        self.stride
    }
}

/// Per-examinee Gaussian variational factors and the local variational
/// parameters ξ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    /// N×D posterior means.
    pub mu: DMatrix<f64>,
    /// N posterior covariances, each D×D.
    pub sigma: Vec<DMatrix<f64>>,
    /// Nonnegative ξ values, laid out by `layout`.
    pub xi: Vec<f64>,
    pub layout: XiLayout,
}

impl VariationalState {
    /// μ = 0, Σ_i = Σ_θ, ξ filled with `xi0`.
    pub fn initial(n: usize, categories: &[usize], sigma_theta: &DMatrix<f64>, xi0: f64) -> Self {
        let layout = XiLayout::new(categories);
        let d = sigma_theta.nrows();
        Self {
            mu: DMatrix::zeros(n, d),
            sigma: vec![sigma_theta.clone(); n],
            xi: vec![xi0; n * layout.stride()],
            layout,
        }
    }

    pub fn n_examinees(&self) -> usize {
        self.mu.nrows()
    }

    pub fn dim(&self) -> usize {
        self.mu.ncols()
    }

    pub fn mu_row(&self, i: usize) -> Vec<f64> {
        self.mu.row(i).iter().copied().collect()
    }

    #[inline]
    pub fn xi(&self, i: usize, j: usize, k: usize) -> f64 {
        self.xi[self.layout.index(i, j, k)]
    }

    pub fn set_xi(&mut self, i: usize, j: usize, k: usize, value: f64) {
        let idx = self.layout.index(i, j, k);
        self.xi[idx] = value.abs();
    }
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("non-finite {what}")))
    }
}

/// Category probabilities for one item at one θ.
///
/// `thresholds` holds `b_j1..b_j(K−1)`; `b_j0 = 0` is implicit.
pub fn irf_probability(
    theta: &[f64],
    a: &[f64],
    thresholds: &[f64],
    n_categories: usize,
) -> Result<Vec<f64>> {
    check_finite(theta, "theta")?;
    check_finite(a, "discrimination")?;
    check_finite(thresholds, "threshold")?;
    if theta.len() != a.len() {
        return Err(Error::InvalidArgument(format!(
            "theta has {} components, a has {}",
            theta.len(),
            a.len()
        )));
    }
    if n_categories < 2 || thresholds.len() != n_categories - 1 {
        return Err(Error::InvalidArgument(format!(
            "{} thresholds for {} categories",
            thresholds.len(),
            n_categories
        )));
    }
    let s = linalg::dot(a, theta);
    let mut out = vec![0.0; n_categories];
    softmax_logits(s, thresholds, &mut out);
    Ok(out)
}

/// Fill `out` with `log P(k)` given `s = a'θ` and `b_1..b_{K−1}`.
pub(crate) fn log_irf_into(s: f64, thresholds: &[f64], out: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for (k, slot) in out.iter_mut().enumerate() {
        let b = if k == 0 { 0.0 } else { thresholds[k - 1] };
        *slot = k as f64 * s - b;
        max = max.max(*slot);
    }
    let lse = max + out.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    for slot in out.iter_mut() {
        *slot -= lse;
    }
}

/// Log-probability of a single category.
#[inline]
pub(crate) fn log_irf_at(s: f64, thresholds_with_zero: &[f64], y: usize) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for (k, b) in thresholds_with_zero.iter().enumerate() {
        max = max.max(k as f64 * s - b);
    }
    let mut sum = 0.0;
    for (k, b) in thresholds_with_zero.iter().enumerate() {
        sum += (k as f64 * s - b - max).exp();
    }
    y as f64 * s - thresholds_with_zero[y] - max - sum.ln()
}

fn softmax_logits(s: f64, thresholds: &[f64], out: &mut [f64]) {
    log_irf_into(s, thresholds, out);
    for p in out.iter_mut() {
        *p = p.exp();
    }
}

/// Log density of N(0, Σ) at `theta`.
pub fn log_mvn_density(theta: &[f64], sigma: &DMatrix<f64>) -> Result<f64> {
    let chol = linalg::cholesky(sigma, "sigma_theta")?;
    let x = DVector::from_column_slice(theta);
    let z = chol.solve(&x);
    let d = theta.len() as f64;
    Ok(-0.5 * d * LN_2PI - 0.5 * linalg::log_det_spd(&chol) - 0.5 * x.dot(&z))
}

/// Complete-data log density `log P(Y_i | θ) + log φ(θ)` for one examinee.
pub fn log_joint(
    theta: &[f64],
    responses: &[usize],
    params: &ItemParameters,
    latent: &LatentSpec,
) -> Result<f64> {
    check_finite(theta, "theta")?;
    if theta.len() != params.dim() || latent.dim() != params.dim() {
        return Err(Error::InvalidArgument("dimension mismatch".into()));
    }
    if responses.len() != params.n_items() {
        return Err(Error::InvalidArgument("response row length mismatch".into()));
    }
    let mut total = log_mvn_density(theta, latent.sigma_theta())?;
    for (j, &y) in responses.iter().enumerate() {
        if y >= params.categories()[j] {
            return Err(Error::InvalidArgument(format!("response {y} out of range for item {j}")));
        }
        let s = linalg::dot(&params.a_row(j), theta);
        total += log_irf_at(s, &params.thresholds_with_zero(j), y);
    }
    Ok(total)
}
