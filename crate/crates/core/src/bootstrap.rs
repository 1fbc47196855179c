//! Parametric-bootstrap standard errors and the pooled SE-assessment metrics.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{fit_from, FitConfig, FitResult};
use crate::error::{Error, Result};
use crate::model::ItemParameters;
use crate::rotation::align_factors;
use crate::simulator::{replicate_seed, simulate_from_model};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    /// Successful replicates required; capped at `replicates`.
    pub min_successes: usize,
    pub max_retries: usize,
    pub keep_replicates: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replicates: 50,
            min_successes: 30,
            max_retries: 100,
            keep_replicates: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub se_a: DMatrix<f64>,
    pub se_b: DMatrix<f64>,
    /// Successful replicates entering the SE formula.
    pub n_replicates: usize,
    pub n_failed: usize,
    pub replicate_estimates: Option<Vec<ItemParameters>>,
}

impl BootstrapResult {
    pub fn table(&self) -> SeTable {
        SeTable {
            a: self.se_a.clone(),
            b: self.se_b.clone(),
        }
    }
}

/// Per-parameter standard errors laid out like `ItemParameters`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeTable {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl SeTable {
    /// Entrywise mean of several tables.
    pub fn mean(tables: &[SeTable]) -> Result<SeTable> {
        let first = tables
            .first()
            .ok_or_else(|| Error::InvalidArgument("no SE tables to average".into()))?;
        let mut a = DMatrix::zeros(first.a.nrows(), first.a.ncols());
        let mut b = DMatrix::zeros(first.b.nrows(), first.b.ncols());
        for t in tables {
            if t.a.shape() != a.shape() || t.b.shape() != b.shape() {
                return Err(Error::InvalidArgument("SE tables differ in shape".into()));
            }
            a += &t.a;
            b += &t.b;
        }
        let n = tables.len() as f64;
        Ok(SeTable { a: a / n, b: b / n })
    }
}

/// √(Σ_i (v⁽ⁱ⁾ − v̂)² / (B − 1)), centred on the original estimate.
pub fn se_from_replicates(original: &ItemParameters, replicates: &[ItemParameters]) -> Result<SeTable> {
    if replicates.len() < 2 {
        return Err(Error::InvalidArgument("need at least two replicates".into()));
    }
    let (j, d) = (original.n_items(), original.dim());
    let kt = original.b().ncols();
    let mut sa = DMatrix::<f64>::zeros(j, d);
    let mut sb = DMatrix::<f64>::zeros(j, kt);
    for rep in replicates {
        if rep.dim() != d || rep.categories() != original.categories() {
            return Err(Error::InvalidArgument("replicate shape mismatch".into()));
        }
        sa += (rep.a() - original.a()).map(|v| v * v);
        sb += (rep.b() - original.b()).map(|v| v * v);
    }
    let denom = (replicates.len() - 1) as f64;
    Ok(SeTable {
        a: sa.map(|v| (v / denom).sqrt()),
        b: sb.map(|v| (v / denom).sqrt()),
    })
}

/// Map a replicate onto the factor order and signs of `reference`.
pub fn align_to_reference(estimate: &ItemParameters, reference: &ItemParameters) -> Result<ItemParameters> {
    let al = align_factors(estimate.a(), reference.a())?;
    Ok(estimate.permute_factors(&al.permutation, &al.sign_values()))
}

/// Parametric bootstrap around a fitted model: simulate from the estimate,
/// refit from the estimate, align, and take the dispersion about it.
pub fn bootstrap_se(
    fit: &FitResult,
    n_examinees: usize,
    config: &FitConfig,
    boot: &BootstrapConfig,
) -> Result<BootstrapResult> {
    if !fit.converged {
        return Err(Error::InvalidArgument("bootstrap requires a converged fit".into()));
    }
    if boot.replicates < 2 {
        return Err(Error::InvalidArgument("bootstrap needs B ≥ 2".into()));
    }
    if n_examinees == 0 {
        return Err(Error::InvalidArgument("bootstrap needs N ≥ 1".into()));
    }
    config.validate()?;
    let dim = fit.dim();
    let outcomes: Vec<Option<ItemParameters>> = (0..boot.replicates)
        .into_par_iter()
        .map(|r| {
            let seed = replicate_seed(config.seed, r as u64 + 1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (data, _) =
                simulate_from_model(&fit.params, &fit.sigma_theta, n_examinees, boot.max_retries, &mut rng).ok()?;
            let cfg = FitConfig {
                seed,
                ..config.clone()
            };
            let refit = fit_from(&data, dim, &cfg, Some(&fit.params)).ok()?;
            if !refit.converged {
                return None;
            }
            align_to_reference(&refit.params, &fit.params).ok()
        })
        .collect();
    let n_failed = outcomes.iter().filter(|o| o.is_none()).count();
    let estimates: Vec<ItemParameters> = outcomes.into_iter().flatten().collect();
    let required = boot.min_successes.min(boot.replicates).max(2);
    if estimates.len() < required {
        return Err(Error::BootstrapFailed {
            succeeded: estimates.len(),
            required,
        });
    }
    let se = se_from_replicates(&fit.params, &estimates)?;
    Ok(BootstrapResult {
        se_a: se.a,
        se_b: se.b,
        n_replicates: estimates.len(),
        n_failed,
        replicate_estimates: boot.keep_replicates.then_some(estimates),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeAssessment {
    pub average_se: f64,
    pub bias: f64,
    pub relative_bias: f64,
    /// Relative-bias terms dropped because the empirical SE was zero.
    pub skipped: usize,
}

/// Empirical SE across replications, Σ_r (v⁽ʳ⁾ − v)² / (R − 1).
/// With `sqrt` set, the square root of that is returned instead.
pub fn empirical_se(estimates: &[ItemParameters], truth: &ItemParameters, sqrt: bool) -> Result<SeTable> {
    let mut t = se_from_replicates(truth, estimates)?;
    if !sqrt {
        t.a = t.a.map(|v| v * v);
        t.b = t.b.map(|v| v * v);
    }
    Ok(t)
}

/// Pooled Average SE, Bias and Relative Bias of `se_hat` against the
/// empirical SE of `estimates` around `truth`.
pub fn se_assessment(
    estimates: &[ItemParameters],
    truth: &ItemParameters,
    se_hat: &SeTable,
    sqrt_empirical: bool,
) -> Result<SeAssessment> {
    let emp = empirical_se(estimates, truth, sqrt_empirical)?;
    if se_hat.a.shape() != emp.a.shape() || se_hat.b.shape() != emp.b.shape() {
        return Err(Error::InvalidArgument("SE table shape mismatch".into()));
    }
    let d = truth.dim();
    let weight = (truth.n_items() * d + truth.categories().iter().sum::<usize>()) as f64;
    let (mut avg, mut bias, mut rel, mut skipped) = (0.0, 0.0, 0.0, 0usize);
    let mut term = |hat: f64, e: f64| {
        avg += hat;
        bias += hat - e;
        if e == 0.0 {
            skipped += 1;
        } else {
            rel += (hat - e) / e;
        }
    };
    for j in 0..truth.n_items() {
        for r in 0..d {
            term(se_hat.a[(j, r)], emp.a[(j, r)]);
        }
        for k in 0..truth.categories()[j] - 1 {
            term(se_hat.b[(j, k)], emp.b[(j, k)]);
        }
    }
    Ok(SeAssessment {
        average_se: avg / weight,
        bias: bias / weight,
        relative_bias: rel / weight,
        skipped,
    })
}

/// Pooled average of a single SE table with the same weights.
pub fn average_se(se: &SeTable, categories: &[usize]) -> f64 {
    let d = se.a.ncols();
    let weight = (categories.len() * d + categories.iter().sum::<usize>()) as f64;
    let mut total: f64 = se.a.iter().sum();
    for (j, &k) in categories.iter().enumerate() {
        total += (0..k - 1).map(|c| se.b[(j, c)]).sum::<f64>();
    }
    total / weight
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params(shift: f64) -> ItemParameters {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.8, 0.2]).add_scalar(shift);
        let b = DMatrix::from_row_slice(2, 2, &[-0.5, 0.5, 0.0, 1.0]).add_scalar(shift);
        ItemParameters::new(a, b, vec![3, 3]).unwrap()
    }

    #[test]
    fn identical_replicates_give_zero_se() {
        let p = params(0.0);
        let se = se_from_replicates(&p, &[p.clone(), p.clone()]).unwrap();
        assert_eq!(se.a.amax(), 0.0);
        assert_eq!(se.b.amax(), 0.0);
    }

    #[test]
    fn constant_offset_closed_form() {
        let p = params(0.0);
        let c = 0.3;
        for b in [2usize, 5, 50] {
            let reps = vec![params(c); b];
            let se = se_from_replicates(&p, &reps).unwrap();
            let expect = c * (b as f64 / (b as f64 - 1.0)).sqrt();
            assert_abs_diff_eq!(se.a[(1, 1)], expect, epsilon = 1e-12);
            assert_abs_diff_eq!(se.b[(0, 0)], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn assessment_trivial_cases() {
        let truth = params(0.0);
        let reps = vec![params(0.1), params(-0.2), params(0.05)];
        let emp = empirical_se(&reps, &truth, false).unwrap();
        let exact = se_assessment(&reps, &truth, &emp, false).unwrap();
        assert_abs_diff_eq!(exact.bias, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(exact.relative_bias, 0.0, epsilon = 1e-15);
        let shifted = SeTable {
            a: emp.a.add_scalar(0.01),
            b: emp.b.add_scalar(0.01),
        };
        let s = se_assessment(&reps, &truth, &shifted, false).unwrap();
        // 8 parameters over J(D+K) = 10 slots.
        assert_abs_diff_eq!(s.bias, 0.01 * 8.0 / 10.0, epsilon = 1e-14);
    }

    #[test]
    fn zero_empirical_terms_are_skipped() {
        let truth = params(0.0);
        let reps = vec![truth.clone(), truth.clone()];
        let hat = SeTable {
            a: DMatrix::from_element(2, 2, 0.1),
            b: DMatrix::from_element(2, 2, 0.1),
        };
        let s = se_assessment(&reps, &truth, &hat, false).unwrap();
        assert_eq!(s.skipped, 8);
        assert_eq!(s.relative_bias, 0.0);
        assert_abs_diff_eq!(s.average_se, 0.08, epsilon = 1e-15);
        assert_abs_diff_eq!(average_se(&hat, &[3, 3]), 0.08, epsilon = 1e-15);
    }

    #[test]
    fn mean_of_tables() {
        let t1 = SeTable {
            a: DMatrix::from_element(1, 1, 1.0),
            b: DMatrix::from_element(1, 1, 3.0),
        };
        let t2 = SeTable {
            a: DMatrix::from_element(1, 1, 2.0),
            b: DMatrix::from_element(1, 1, 5.0),
        };
        let m = SeTable::mean(&[t1, t2]).unwrap();
        assert_eq!((m.a[(0, 0)], m.b[(0, 0)]), (1.5, 4.0));
    }
}
