//! Synthetic datasets from the factorial simulation design, and bias/MSE
//! recovery metrics.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::engine::FitResult;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{irf_probability, ItemParameters, Mode, ResponseMatrix};
use crate::rotation::{self, Alignment};

pub const DEFAULT_MAX_RETRIES: usize = 100;
const PROMAX_POWER: u32 = 4;

/// One cell of the simulation design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub n: usize,
    pub j: usize,
    pub k: usize,
    pub d: usize,
    pub loading_range: (f64, f64),
    pub correlation_range: (f64, f64),
    pub seed: u64,
    pub max_retries: usize,
}

impl SimulationSpec {
    /// Low correlation U(0.1, 0.3), small loadings U(0.5, 1).
    pub fn new(n: usize, j: usize, k: usize, d: usize, seed: u64) -> Self {
        Self {
            n,
            j,
            k,
            d,
            loading_range: LOW_LOADINGS,
            correlation_range: LOW_CORRELATION,
            seed,
            max_retries: DEFAULT_MAX_RETRIES,
        }
    }

    pub fn loadings(mut self, range: (f64, f64)) -> Self {
        self.loading_range = range;
        self
    }

    pub fn correlation(mut self, range: (f64, f64)) -> Self {
        self.correlation_range = range;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.j == 0 || self.d == 0 {
            return Err(Error::InvalidArgument("n, j and d must be positive".into()));
        }
        if self.k < 2 {
            return Err(Error::InvalidArgument("k must be ≥ 2".into()));
        }
        let (lo, hi) = self.loading_range;
        if !(lo < hi) {
            return Err(Error::InvalidArgument("loading range needs lo < hi".into()));
        }
        let (lo, hi) = self.correlation_range;
        if !(lo < hi) || lo <= -1.0 || hi >= 1.0 {
            return Err(Error::InvalidArgument(
                "correlation range needs -1 < lo < hi < 1".into(),
            ));
        }
        if self.max_retries == 0 {
            return Err(Error::InvalidArgument("max_retries must be ≥ 1".into()));
        }
        Ok(())
    }
}

pub const LOW_LOADINGS: (f64, f64) = (0.5, 1.0);
pub const HIGH_LOADINGS: (f64, f64) = (1.0, 2.0);
pub const LOW_CORRELATION: (f64, f64) = (0.1, 0.3);
pub const HIGH_CORRELATION: (f64, f64) = (0.5, 0.7);

/// Generating values for a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub params: ItemParameters,
    pub sigma_theta: DMatrix<f64>,
    /// N×D abilities.
    pub theta: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub responses: ResponseMatrix,
    pub truth: Truth,
    /// Number of full redraws needed before acceptance.
    pub attempts: usize,
}

/// Unit-diagonal correlation with off-diagonals from U(range); redrawn until PD.
pub fn draw_sigma_theta<R: Rng>(d: usize, range: (f64, f64), rng: &mut R) -> DMatrix<f64> {
    loop {
        let mut s = DMatrix::identity(d, d);
        for r in 0..d {
            for c in 0..r {
                let v = rng.random_range(range.0..range.1);
                s[(r, c)] = v;
                s[(c, r)] = v;
            }
        }
        if linalg::is_spd(&s) {
            return s;
        }
    }
}

pub fn draw_item_parameters<R: Rng>(
    j: usize,
    k: usize,
    d: usize,
    loading_range: (f64, f64),
    rng: &mut R,
) -> ItemParameters {
    let mut params = ItemParameters::zeros(vec![k; j], d);
    for item in 0..j {
        let a: Vec<f64> = (0..d)
            .map(|_| rng.random_range(loading_range.0..loading_range.1))
            .collect();
        params.set_a_row(item, &a);
        for cat in 1..k {
            params.set_threshold(item, cat, rng.sample(StandardNormal));
        }
    }
    params
}

/// θ_i ~ N(0, Σ) as rows of an N×D matrix.
pub fn draw_theta<R: Rng>(n: usize, sigma: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    let d = sigma.nrows();
    let chol = linalg::cholesky(sigma, "sigma_theta")?;
    let l = chol.l();
    let mut theta = DMatrix::zeros(n, d);
    let mut z = vec![0.0; d];
    for i in 0..n {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for r in 0..d {
            theta[(i, r)] = (0..=r).map(|c| l[(r, c)] * z[c]).sum();
        }
    }
    Ok(theta)
}

/// Categorical draws from the response function for every (i, j).
pub fn draw_responses<R: Rng>(
    params: &ItemParameters,
    theta: &DMatrix<f64>,
    rng: &mut R,
) -> Result<ResponseMatrix> {
    let n = theta.nrows();
    let j = params.n_items();
    let mut data = Vec::with_capacity(n * j);
    let thresholds: Vec<Vec<f64>> = (0..j).map(|item| params.thresholds(item)).collect();
    let a_rows: Vec<Vec<f64>> = (0..j).map(|item| params.a_row(item)).collect();
    for i in 0..n {
        let th: Vec<f64> = theta.row(i).iter().copied().collect();
        for item in 0..j {
            let k = params.categories()[item];
            let p = irf_probability(&th, &a_rows[item], &thresholds[item], k)?;
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut code = k - 1;
            for (cat, pk) in p.iter().enumerate() {
                acc += pk;
                if u < acc {
                    code = cat;
                    break;
                }
            }
            data.push(code);
        }
    }
    ResponseMatrix::from_flat(n, j, params.categories().to_vec(), data)
}

/// Draw a complete design cell, redrawing everything until every
/// (item, category) is observed.
pub fn generate(spec: &SimulationSpec) -> Result<SimulatedData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut last_sparse = (0, 0);
    for attempt in 1..=spec.max_retries {
        let params = draw_item_parameters(spec.j, spec.k, spec.d, spec.loading_range, &mut rng);
        let sigma_theta = if spec.d == 1 {
            DMatrix::identity(1, 1)
        } else {
            draw_sigma_theta(spec.d, spec.correlation_range, &mut rng)
        };
        let theta = draw_theta(spec.n, &sigma_theta, &mut rng)?;
        let responses = draw_responses(&params, &theta, &mut rng)?;
        if responses.unobserved_pairs().is_empty() {
            return Ok(SimulatedData {
                responses,
                truth: Truth {
                    params,
                    sigma_theta,
                    theta,
                },
                attempts: attempt,
            });
        }
        last_sparse = responses.sparsest_pair();
    }
    Err(Error::GenerationFailed {
        attempts: spec.max_retries,
        item: last_sparse.0,
        category: last_sparse.1,
    })
}

/// Responses from fixed parameters, redrawing θ and Y until every
/// (item, category) is observed.
pub fn simulate_from_model<R: Rng>(
    params: &ItemParameters,
    sigma_theta: &DMatrix<f64>,
    n: usize,
    max_retries: usize,
    rng: &mut R,
) -> Result<(ResponseMatrix, DMatrix<f64>)> {
    let mut last_sparse = (0, 0);
    for _ in 0..max_retries.max(1) {
        let theta = draw_theta(n, sigma_theta, rng)?;
        let responses = draw_responses(params, &theta, rng)?;
        if responses.unobserved_pairs().is_empty() {
            return Ok((responses, theta));
        }
        last_sparse = responses.sparsest_pair();
    }
    Err(Error::GenerationFailed {
        attempts: max_retries,
        item: last_sparse.0,
        category: last_sparse.1,
    })
}

/// Recovery metrics averaged over items (and examinees for θ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub bias_a: f64,
    pub mse_a: f64,
    pub bias_b: f64,
    pub mse_b: f64,
    pub bias_sigma: f64,
    pub mse_sigma: f64,
    pub bias_theta: f64,
    pub mse_theta: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluateOptions {
    /// Use every entry of Σ_θ − Σ̂_θ in MSE_Σ instead of the off-diagonal pairs.
    pub full_sigma_norm: bool,
}

/// Estimated and true quantities brought into a common factor frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedComparison {
    pub a_hat: DMatrix<f64>,
    pub a_true: DMatrix<f64>,
    pub sigma_hat: DMatrix<f64>,
    pub theta_hat: DMatrix<f64>,
    pub theta_true: DMatrix<f64>,
    pub alignment: Alignment,
}

/// Scores move opposite to loadings: if L = A·T then θ* = θ·T⁻ᵀ.
fn rotate_scores(theta: &DMatrix<f64>, t: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = t
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::RotationFailed("rotation matrix not invertible".into()))?;
    Ok(theta * inv.transpose())
}

/// Promax-rotate both loading matrices (exploratory mode), then align the
/// estimated factors to the true ones.
pub fn align_to_truth(
    a_hat: &DMatrix<f64>,
    sigma_hat: &DMatrix<f64>,
    theta_hat: &DMatrix<f64>,
    truth: &Truth,
    mode: Mode,
) -> Result<AlignedComparison> {
    let (a_est, s_est, th_est, a_true, th_true) = match mode {
        Mode::Efa => {
            let est = rotation::promax(a_hat, PROMAX_POWER)?;
            let tru = rotation::promax(truth.params.a(), PROMAX_POWER)?;
            (
                est.loadings,
                est.factor_correlation,
                rotate_scores(theta_hat, &est.rotation_matrix)?,
                tru.loadings,
                rotate_scores(&truth.theta, &tru.rotation_matrix)?,
            )
        }
        Mode::Cfa => (
            a_hat.clone(),
            sigma_hat.clone(),
            theta_hat.clone(),
            truth.params.a().clone(),
            truth.theta.clone(),
        ),
    };
    let alignment = rotation::align_factors(&a_est, &a_true)?;
    Ok(AlignedComparison {
        a_hat: alignment.apply_columns(&a_est),
        a_true,
        sigma_hat: alignment.apply_symmetric(&s_est),
        theta_hat: alignment.apply_columns(&th_est),
        theta_true: th_true,
        alignment,
    })
}

/// Recovery metrics for a fit against the generating truth.
pub fn evaluate(fit: &FitResult, truth: &Truth, mode: Mode) -> Result<EvaluationReport> {
    evaluate_with(fit, truth, mode, EvaluateOptions::default())
}

pub fn evaluate_with(
    fit: &FitResult,
    truth: &Truth,
    mode: Mode,
    options: EvaluateOptions,
) -> Result<EvaluationReport> {
    evaluate_estimates(&fit.params, &fit.sigma_theta, &fit.theta_hat, truth, mode, options)
}

/// Recovery metrics from bare estimates, e.g. read back from files.
pub fn evaluate_estimates(
    params_hat: &ItemParameters,
    sigma_hat: &DMatrix<f64>,
    theta_hat: &DMatrix<f64>,
    truth: &Truth,
    mode: Mode,
    options: EvaluateOptions,
) -> Result<EvaluationReport> {
    if params_hat.categories() != truth.params.categories()
        || params_hat.dim() != truth.params.dim()
        || theta_hat.shape() != truth.theta.shape()
        || sigma_hat.shape() != truth.sigma_theta.shape()
    {
        return Err(Error::InvalidArgument("estimates and truth dimensions disagree".into()));
    }
    let cmp = align_to_truth(params_hat.a(), sigma_hat, theta_hat, truth, mode)?;
    Ok(metrics(&cmp, params_hat, truth, options))
}

/// Bias/MSE from an already-aligned comparison.
pub fn metrics(
    cmp: &AlignedComparison,
    params_hat: &ItemParameters,
    truth: &Truth,
    options: EvaluateOptions,
) -> EvaluationReport {
    let (bias_a, mse_a) = mean_diff(cmp.a_hat.iter().zip(cmp.a_true.iter()));
    let tp = &truth.params;
    let b_pairs: Vec<(f64, f64)> = (0..tp.n_items())
        .flat_map(|j| {
            (1..tp.categories()[j]).map(move |k| (params_hat.threshold(j, k), tp.threshold(j, k)))
        })
        .collect();
    let (bias_b, mse_b) = mean_diff(b_pairs.iter().map(|(x, y)| (x, y)));

    let d = truth.sigma_theta.nrows();
    let (bias_sigma, mse_sigma) = if d < 2 {
        (0.0, 0.0)
    } else {
        let norm = 2.0 / (d * (d - 1)) as f64;
        let mut bias = 0.0;
        let mut sq_pairs = 0.0;
        let mut sq_full = 0.0;
        for h in 0..d {
            for l in 0..d {
                let diff = cmp.sigma_hat[(h, l)] - truth.sigma_theta[(h, l)];
                sq_full += diff * diff;
                if l < h {
                    bias += diff;
                    sq_pairs += diff * diff;
                }
            }
        }
        let sq = if options.full_sigma_norm { sq_full } else { sq_pairs };
        (norm * bias, norm * sq)
    };
    let (bias_theta, mse_theta) = mean_diff(cmp.theta_hat.iter().zip(cmp.theta_true.iter()));
    EvaluationReport {
        bias_a,
        mse_a,
        bias_b,
        mse_b,
        bias_sigma,
        mse_sigma,
        bias_theta,
        mse_theta,
        wall_time: 0.0,
    }
}

fn mean_diff<'a>(pairs: impl Iterator<Item = (&'a f64, &'a f64)>) -> (f64, f64) {
    let mut n = 0usize;
    let mut bias = 0.0;
    let mut sq = 0.0;
    for (est, tru) in pairs {
        let diff = est - tru;
        bias += diff;
        sq += diff * diff;
        n += 1;
    }
    if n == 0 {
        (0.0, 0.0)
    } else {
        (bias / n as f64, sq / n as f64)
    }
}

/// Seed for replicate `index` of a batch.
pub fn replicate_seed(seed: u64, index: u64) -> u64 {
    seed ^ index
}
