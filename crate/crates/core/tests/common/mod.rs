//! Shared fixtures: random small instances and literal loop transcriptions
//! of the estimator's formulas, written without the crate's helpers.
#![allow(dead_code)]

pub mod checks;

use nalgebra::DMatrix;
use pgvem::bootstrap::SeTable;
use pgvem::simulator::Truth;
use pgvem::{ItemParameters, LatentSpec, Mode, ResponseMatrix, VariationalState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_spd<R: Rng>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let l = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    &l * l.transpose() + DMatrix::identity(d, d) * 0.1
}

pub fn random_correlation<R: Rng>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let s = random_spd(d, rng) + DMatrix::identity(d, d);
    let mut c = DMatrix::from_fn(d, d, |r, q| s[(r, q)] / (s[(r, r)] * s[(q, q)]).sqrt());
    for r in 0..d {
        c[(r, r)] = 1.0;
    }
    c
}

pub fn random_params<R: Rng>(categories: &[usize], d: usize, rng: &mut R) -> ItemParameters {
    let j = categories.len();
    let kmax = *categories.iter().max().unwrap();
    let a = DMatrix::from_fn(j, d, |_, _| rng.random_range(-1.5..2.0));
    let b = DMatrix::from_fn(j, kmax - 1, |_, _| rng.random_range(-2.0..2.0));
    ItemParameters::new(a, b, categories.to_vec()).unwrap()
}

/// A complete random instance of every input the surrogate depends on.
pub struct Instance {
    pub params: ItemParameters,
    pub latent: LatentSpec,
    pub state: VariationalState,
    pub responses: ResponseMatrix,
}

pub fn random_instance(seed: u64) -> Instance {
    let mut r = rng(seed);
    let n = r.random_range(1..9);
    let j = r.random_range(1..6);
    let d = r.random_range(1..4);
    let categories: Vec<usize> = (0..j).map(|_| r.random_range(2..6)).collect();
    let params = random_params(&categories, d, &mut r);
    let latent = if r.random_bool(0.5) {
        LatentSpec::new(random_correlation(d, &mut r), Mode::Cfa).unwrap()
    } else {
        LatentSpec::identity(d, Mode::Efa)
    };
    let data: Vec<usize> = (0..n * j).map(|c| r.random_range(0..categories[c % j])).collect();
    let responses = ResponseMatrix::from_flat(n, j, categories.clone(), data).unwrap();
    let mut state = VariationalState::initial(n, &categories, latent.sigma_theta(), 1.0);
    state.mu = DMatrix::from_fn(n, d, |_, _| r.random_range(-2.0..2.0));
    state.sigma = (0..n).map(|_| random_spd(d, &mut r)).collect();
    for x in state.xi.iter_mut() {
        *x = r.random_range(0.0..4.0);
    }
    Instance {
        params,
        latent,
        state,
        responses,
    }
}

/// η(ξ) = (e^ξ − 1) / (4ξ(e^ξ + 1)), limit 1/8 at zero.
pub fn eta_literal(x: f64) -> f64 {
    if x == 0.0 {
        0.125
    } else {
        x.exp_m1() / (4.0 * x * (x.exp() + 1.0))
    }
}

fn b_of(p: &ItemParameters, j: usize, k: usize) -> f64 {
    if k == 0 {
        0.0
    } else {
        p.b()[(j, k - 1)]
    }
}

/// Ē summed literally over examinees, items and categories.
pub fn surrogate_literal(inst: &Instance) -> f64 {
    let Instance {
        params,
        latent,
        state,
        responses,
    } = inst;
    let n = responses.n_examinees();
    let d = params.dim();
    let sigma_theta = latent.sigma_theta();
    let inv = sigma_theta.clone().try_inverse().unwrap();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..responses.n_items() {
            let y = responses.row(i)[j];
            let mut e_at = 0.0;
            let mut e_quad = 0.0;
            for r in 0..d {
                e_at += params.a()[(j, r)] * state.mu[(i, r)];
                for c in 0..d {
                    e_quad += params.a()[(j, r)]
                        * params.a()[(j, c)]
                        * (state.sigma[i][(r, c)] + state.mu[(i, r)] * state.mu[(i, c)]);
                }
            }
            total += 2f64.ln();
            for k in 0..params.categories()[j] {
                let xi = state.xi(i, j, k);
                let et = eta_literal(xi);
                let c = k as f64 - y as f64;
                let db = b_of(params, j, k) - b_of(params, j, y);
                let bracket = et * c * c * e_quad - 2.0 * c * et * db * e_at + 0.5 * c * e_at + et * db * db
                    - 0.5 * db
                    - et * xi * xi
                    - 0.5 * xi
                    + xi.exp().ln_1p();
                total -= bracket;
            }
        }
        let mut tr = 0.0;
        for r in 0..d {
            for c in 0..d {
                tr += inv[(r, c)] * (state.sigma[i][(c, r)] + state.mu[(i, c)] * state.mu[(i, r)]);
            }
        }
        total += -0.5 * sigma_theta.determinant().ln() - 0.5 * tr;
    }
    total
}

/// Coordinate-wise threshold update for item `j`, ascending in `k`.
pub fn thresholds_literal(inst: &Instance, j: usize, a_j: &[f64]) -> Vec<f64> {
    let Instance {
        params,
        state,
        responses,
        ..
    } = inst;
    let kj = params.categories()[j];
    let mut b: Vec<f64> = (0..kj).map(|k| b_of(params, j, k)).collect();
    for k in 1..kj {
        let mut numerator = 0.0;
        let mut denominator = 0.0;
        for i in 0..responses.n_examinees() {
            let y = responses.row(i)[j];
            let at_mu: f64 = (0..a_j.len()).map(|r| a_j[r] * state.mu[(i, r)]).sum();
            if y != k {
                let e = eta_literal(state.xi(i, j, k));
                numerator += 2.0 * e * (k as f64 - y as f64) * at_mu + 0.5 + 2.0 * e * b[y];
                denominator += e;
            } else {
                for v in 0..kj {
                    if v != k {
                        let e = eta_literal(state.xi(i, j, v));
                        numerator += -2.0 * e * (v as f64 - k as f64) * at_mu - 0.5 + 2.0 * e * b[v];
                        denominator += e;
                    }
                }
            }
        }
        b[k] = numerator / (2.0 * denominator);
    }
    b[1..].to_vec()
}

/// Bias and MSE of a, b, Σ (pairs l < h) and θ, on already-aligned inputs.
pub fn metrics_literal(
    a_hat: &DMatrix<f64>,
    params_hat: &ItemParameters,
    sigma_hat: &DMatrix<f64>,
    theta_hat: &DMatrix<f64>,
    truth: &Truth,
) -> [f64; 8] {
    let (j, d) = truth.params.a().shape();
    let (mut ba, mut ma) = (0.0, 0.0);
    for jj in 0..j {
        for r in 0..d {
            let diff = a_hat[(jj, r)] - truth.params.a()[(jj, r)];
            ba += diff;
            ma += diff * diff;
        }
    }
    let (mut bb, mut mb, mut nb) = (0.0, 0.0, 0.0);
    for jj in 0..j {
        for k in 1..truth.params.categories()[jj] {
            let diff = b_of(params_hat, jj, k) - b_of(&truth.params, jj, k);
            bb += diff;
            mb += diff * diff;
            nb += 1.0;
        }
    }
    let (mut bs, mut ms) = (0.0, 0.0);
    if d > 1 {
        let w = 2.0 / (d * (d - 1)) as f64;
        for h in 0..d {
            for l in 0..h {
                let diff = sigma_hat[(h, l)] - truth.sigma_theta[(h, l)];
                bs += w * diff;
                ms += w * diff * diff;
            }
        }
    }
    let n = truth.theta.nrows();
    let (mut bt, mut mt) = (0.0, 0.0);
    for i in 0..n {
        for r in 0..d {
            let diff = theta_hat[(i, r)] - truth.theta[(i, r)];
            bt += diff;
            mt += diff * diff;
        }
    }
    let jd = (j * d) as f64;
    let nd = (n * d) as f64;
    [ba / jd, ma / jd, bb / nb, mb / nb, bs, ms, bt / nd, mt / nd]
}

/// Average SE, Bias and Relative Bias with the empirical SE in variance form.
pub fn se_assessment_literal(
    estimates: &[ItemParameters],
    truth: &ItemParameters,
    se_hat: &SeTable,
) -> (f64, f64, f64) {
    let (j, d) = truth.a().shape();
    let r_count = estimates.len() as f64;
    let empirical = |get: &dyn Fn(&ItemParameters) -> f64| {
        estimates.iter().map(|e| (get(e) - get(truth)).powi(2)).sum::<f64>() / (r_count - 1.0)
    };
    let mut norm = 0.0;
    let (mut avg, mut bias, mut rel) = (0.0, 0.0, 0.0);
    for jj in 0..j {
        let k = truth.categories()[jj];
        norm += (d + k) as f64;
        for r in 0..d {
            let se = empirical(&|p: &ItemParameters| p.a()[(jj, r)]);
            let hat = se_hat.a[(jj, r)];
            avg += hat;
            bias += hat - se;
            if se != 0.0 {
                rel += (hat - se) / se;
            }
        }
        for kk in 1..k {
            let se = empirical(&|p: &ItemParameters| b_of(p, jj, kk));
            let hat = se_hat.b[(jj, kk - 1)];
            avg += hat;
            bias += hat - se;
            if se != 0.0 {
                rel += (hat - se) / se;
            }
        }
    }
    (avg / norm, bias / norm, rel / norm)
}

pub fn close(x: f64, y: f64, rel: f64) -> bool {
    (x - y).abs() <= rel * x.abs().max(y.abs()).max(1.0)
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = s.len() / 2;
    if s.len() % 2 == 0 {
        0.5 * (s[m - 1] + s[m])
    } else {
        s[m]
    }
}
