//! Batch commands: each reads its inputs, writes human-readable and JSON
//! reports into the output directory, and maps the outcome to an exit code.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use crate::bootstrap::bootstrap_se;
use crate::config::RunConfig;
use crate::engine::{fit, FitResult};
use crate::error::{Error, Result};
use crate::io::{self, LoadedResponses};
use crate::model::{Mode, ResponseMatrix};
use crate::oracle::{marginal_loglik, reference_mmle, QuadratureGrid};
use crate::selection::{information_criteria, sweep_dimensions, InformationCriteria};
use crate::simulator::{evaluate_estimates, generate, Truth};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "PGVEM_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Fit,
    Simulate,
    Evaluate,
    Sweep,
    Bootstrap,
    Validate,
}

impl FromStr for Command {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "fit" => Command::Fit,
            "simulate" => Command::Simulate,
            "evaluate" => Command::Evaluate,
            "sweep" => Command::Sweep,
            "bootstrap" => Command::Bootstrap,
            "validate" => Command::Validate,
            other => return Err(Error::Config(format!("unknown command '{other}'"))),
        })
    }
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Fit => "fit",
            Command::Simulate => "simulate",
            Command::Evaluate => "evaluate",
            Command::Sweep => "sweep",
            Command::Bootstrap => "bootstrap",
            Command::Validate => "validate",
        }
    }
}

/// Size the global rayon pool from the environment; unset means one thread.
/// Returns the thread count in effect.
pub fn configure_threads() -> usize {
    let requested = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1);
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(requested)
        .build_global();
    rayon::current_num_threads()
}

#[derive(Debug, Clone)]
pub struct CommandOutput {
    pub summary: String,
    pub passed: bool,
    pub files: Vec<PathBuf>,
}

/// Exit code for an error: configuration problems are usage errors.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

/// Run a command, printing the summary or the error; returns the exit code.
pub fn run(command: Command, config: &RunConfig) -> i32 {
    match execute(command, config) {
        Ok(out) => {
            print!("{}", out.summary);
            if out.passed {
                EXIT_OK
            } else {
                EXIT_FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(command: Command, config: &RunConfig) -> Result<CommandOutput> {
    config.validate()?;
    fs::create_dir_all(&config.out)?;
    let mut ctx = Context {
        command,
        config,
        files: Vec::new(),
    };
    let (summary, passed) = match command {
        Command::Fit => ctx.fit()?,
        Command::Simulate => ctx.simulate()?,
        Command::Evaluate => ctx.evaluate()?,
        Command::Sweep => ctx.sweep()?,
        Command::Bootstrap => ctx.bootstrap()?,
        Command::Validate => ctx.validate()?,
    };
    let header = format!(
        "# {} seed={} config_digest={}\n",
        command.name(),
        config.seed,
        config.digest()
    );
    let summary = header + &summary;
    let txt = config.out.join("report.txt");
    fs::write(&txt, &summary)?;
    ctx.files.push(txt);
    Ok(CommandOutput {
        summary,
        passed,
        files: ctx.files,
    })
}

struct Context<'a> {
    command: Command,
    config: &'a RunConfig,
    files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct FitSummary {
    n_examinees: usize,
    n_items: usize,
    dim: usize,
    mode: Mode,
    iterations: usize,
    converged: bool,
    final_surrogate: f64,
    final_elbo: f64,
    criteria: InformationCriteria,
    wall_time: f64,
    warnings: Vec<String>,
}

impl FitSummary {
    fn new(f: &FitResult, responses: &ResponseMatrix, wall_time: f64) -> Self {
        Self {
            n_examinees: responses.n_examinees(),
            n_items: responses.n_items(),
            dim: f.dim(),
            mode: f.mode,
            iterations: f.iterations,
            converged: f.converged,
            final_surrogate: f.final_surrogate(),
            final_elbo: f.elbo_trace.last().copied().unwrap_or(f64::NAN),
            criteria: information_criteria(f, responses.n_examinees()),
            wall_time,
            warnings: f.warnings.clone(),
        }
    }

    fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "examinees        {}", self.n_examinees);
        let _ = writeln!(s, "items            {}", self.n_items);
        let _ = writeln!(s, "dimension        {} ({})", self.dim, self.mode);
        let _ = writeln!(s, "iterations       {}", self.iterations);
        let _ = writeln!(s, "converged        {}", self.converged);
        let _ = writeln!(s, "surrogate        {:.6}", self.final_surrogate);
        let _ = writeln!(s, "elbo             {:.6}", self.final_elbo);
        let _ = writeln!(s, "parameters       {}", self.criteria.n_params);
        let _ = writeln!(s, "AIC*             {:.4}", self.criteria.aic_star);
        let _ = writeln!(s, "BIC*             {:.4}", self.criteria.bic_star);
        let _ = writeln!(s, "wall time (s)    {:.3}", self.wall_time);
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }
}

fn name_offenders(err: Error, items: &[String]) -> Error {
    match err {
        Error::Rejected { offenders } => {
            let named: Vec<String> = offenders
                .iter()
                .map(|&(j, k)| format!("(item '{}', category {k})", items.get(j).map_or("?", String::as_str)))
                .collect();
            Error::Load(format!(
                "responses rejected: unobserved (item, category) pairs {}",
                named.join(", ")
            ))
        }
        other => other,
    }
}

fn corr(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

fn mean_abs_diff(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64
}

#[derive(Serialize)]
struct Agreement {
    corr_a: f64,
    corr_b: f64,
    mean_abs_diff_a: f64,
    mean_abs_diff_b: f64,
    mmle_iterations: usize,
    mmle_converged: bool,
}

#[derive(Serialize)]
struct ValidationSummary {
    dim: usize,
    nodes: usize,
    marginal_loglik: f64,
    surrogate: f64,
    elbo: f64,
    surrogate_below_loglik: bool,
    elbo_below_loglik: bool,
    agreement: Option<Agreement>,
    passed: bool,
}

impl Context<'_> {
    fn write_report<T: Serialize>(&mut self, name: &str, result: &T) -> Result<()> {
        let map = self.config.to_map();
        let digest = self.config.digest();
        let report = io::Report {
            command: self.command.name(),
            config_digest: &digest,
            seed: self.config.seed,
            config: &map,
            result,
        };
        let path = self.config.out.join(name);
        io::write_json(&path, &report)?;
        self.files.push(path);
        Ok(())
    }

    fn out(&mut self, name: &str) -> PathBuf {
        let p = self.config.out.join(name);
        self.files.push(p.clone());
        p
    }

    fn load(&self) -> Result<LoadedResponses> {
        let path = self
            .config
            .data
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} requires data = <response file>", self.command.name())))?;
        io::load_responses_with(path, &self.config.load_options()?)
    }

    fn fit_loaded(&self, loaded: &LoadedResponses, dim: usize) -> Result<(FitResult, f64)> {
        let start = Instant::now();
        let f = fit(&loaded.responses, dim, &self.config.fit_config())
            .map_err(|e| name_offenders(e, &loaded.items))?;
        Ok((f, start.elapsed().as_secs_f64()))
    }

    fn fit(&mut self) -> Result<(String, bool)> {
        let loaded = self.load()?;
        let (f, secs) = self.fit_loaded(&loaded, self.config.dim)?;
        let p = self.out("params.csv");
        io::write_parameters(&p, &loaded.items, &f.params)?;
        let p = self.out("sigma_theta.csv");
        io::write_matrix(&p, &f.sigma_theta)?;
        let p = self.out("trace.csv");
        io::write_trace(&p, &f)?;
        if self.config.emit_theta {
            let p = self.out("theta.csv");
            io::write_matrix(&p, &f.theta_hat)?;
            let diag = nalgebra::DMatrix::from_fn(f.state.sigma.len(), f.dim(), |i, r| f.state.sigma[i][(r, r)]);
            let p = self.out("sigma_diag.csv");
            io::write_matrix(&p, &diag)?;
        }
        let summary = FitSummary::new(&f, &loaded.responses, secs);
        self.write_report("report.json", &summary)?;
        let mut s = summary.table();
        if loaded.dropped > 0 {
            let _ = writeln!(s, "rows dropped     {}", loaded.dropped);
        }
        Ok((s, true))
    }

    fn simulate(&mut self) -> Result<(String, bool)> {
        let spec = self.config.simulation_spec();
        let data = generate(&spec)?;
        let ext = self.config.format.to_string();
        let items = io::default_item_ids(spec.j);
        let p = self.out(&format!("responses.{ext}"));
        io::save_responses(&p, &items, &data.responses, self.config.format)?;
        let p = self.out("true_params.csv");
        io::write_parameters(&p, &items, &data.truth.params)?;
        let p = self.out("true_sigma_theta.csv");
        io::write_matrix(&p, &data.truth.sigma_theta)?;
        let p = self.out("true_theta.csv");
        io::write_matrix(&p, &data.truth.theta)?;
        #[derive(Serialize)]
        struct Sim {
            n: usize,
            j: usize,
            k: usize,
            d: usize,
            attempts: usize,
        }
        let sim = Sim {
            n: spec.n,
            j: spec.j,
            k: spec.k,
            d: spec.d,
            attempts: data.attempts,
        };
        self.write_report("report.json", &sim)?;
        Ok((
            format!(
                "simulated N={} J={} K={} D={} in {} attempt(s)\n",
                spec.n, spec.j, spec.k, spec.d, data.attempts
            ),
            true,
        ))
    }

    fn evaluate(&mut self) -> Result<(String, bool)> {
        let need = |p: &Option<PathBuf>, key: &str| {
            p.clone()
                .ok_or_else(|| Error::Config(format!("evaluate requires {key} = <directory>")))
        };
        let fit_dir = need(&self.config.fit_dir, "fit_dir")?;
        let truth_dir = need(&self.config.truth_dir, "truth_dir")?;
        let (_, params_hat) = io::read_parameters(&fit_dir.join("params.csv"))?;
        let sigma_hat = io::read_matrix(&fit_dir.join("sigma_theta.csv"))?;
        let theta_path = fit_dir.join("theta.csv");
        if !theta_path.exists() {
            return Err(Error::Load(format!(
                "{} missing; rerun fit with emit_theta = true",
                theta_path.display()
            )));
        }
        let theta_hat = io::read_matrix(&theta_path)?;
        let (_, true_params) = io::read_parameters(&truth_dir.join("true_params.csv"))?;
        let truth = Truth {
            params: true_params,
            sigma_theta: io::read_matrix(&truth_dir.join("true_sigma_theta.csv"))?,
            theta: io::read_matrix(&truth_dir.join("true_theta.csv"))?,
        };
        let mut report = evaluate_estimates(
            &params_hat,
            &sigma_hat,
            &theta_hat,
            &truth,
            self.config.mode,
            self.config.evaluate_options(),
        )?;
        report.wall_time = fit_wall_time(&fit_dir.join("report.json")).unwrap_or(0.0);
        self.write_report("evaluation.json", &report)?;
        let mut s = String::new();
        let _ = writeln!(s, "{:<8} {:>14} {:>14}", "", "bias", "mse");
        for (name, b, m) in [
            ("a", report.bias_a, report.mse_a),
            ("b", report.bias_b, report.mse_b),
            ("sigma", report.bias_sigma, report.mse_sigma),
            ("theta", report.bias_theta, report.mse_theta),
        ] {
            let _ = writeln!(s, "{name:<8} {b:>14.6} {m:>14.6}");
        }
        let _ = writeln!(s, "fit wall time (s) {:.3}", report.wall_time);
        Ok((s, true))
    }

    fn sweep(&mut self) -> Result<(String, bool)> {
        let loaded = self.load()?;
        let result = sweep_dimensions(&loaded.responses, &self.config.dims, &self.config.fit_config())
            .map_err(|e| name_offenders(e, &loaded.items))?;
        let p = self.out("sweep.csv");
        let mut w = csv::Writer::from_path(&p)?;
        w.write_record(["dim", "aic_star", "bic_star", "n_params", "surrogate", "iterations", "converged"])?;
        let mut s = format!(
            "{:>4} {:>16} {:>16} {:>8} {:>6}\n",
            "D", "AIC*", "BIC*", "P", "iter"
        );
        for d in &result.per_dim {
            w.write_record([
                d.dim.to_string(),
                io::fmt_f64(d.criteria.aic_star),
                io::fmt_f64(d.criteria.bic_star),
                d.criteria.n_params.to_string(),
                io::fmt_f64(d.criteria.surrogate),
                d.iterations.to_string(),
                d.converged.to_string(),
            ])?;
            let _ = writeln!(
                s,
                "{:>4} {:>16.4} {:>16.4} {:>8} {:>6}",
                d.dim, d.criteria.aic_star, d.criteria.bic_star, d.criteria.n_params, d.iterations
            );
        }
        w.flush()?;
        let _ = writeln!(s, "best by AIC*: {}\nbest by BIC*: {}", result.best_aic, result.best_bic);
        self.write_report("report.json", &result)?;
        Ok((s, true))
    }

    fn bootstrap(&mut self) -> Result<(String, bool)> {
        let loaded = self.load()?;
        let (f, _) = self.fit_loaded(&loaded, self.config.dim)?;
        let p = self.out("params.csv");
        io::write_parameters(&p, &loaded.items, &f.params)?;
        let result = bootstrap_se(
            &f,
            loaded.responses.n_examinees(),
            &self.config.fit_config(),
            &self.config.bootstrap_config(),
        )?;
        let p = self.out("se.csv");
        let se_params = crate::model::ItemParameters::new(
            result.se_a.clone(),
            result.se_b.clone(),
            f.params.categories().to_vec(),
        )?;
        io::write_parameters(&p, &loaded.items, &se_params)?;
        self.write_report("report.json", &result)?;
        let avg = crate::bootstrap::average_se(&result.table(), f.params.categories());
        Ok((
            format!(
                "replicates used  {}\nreplicates failed {}\naverage SE       {:.6}\n",
                result.n_replicates, result.n_failed, avg
            ),
            true,
        ))
    }

    fn validate(&mut self) -> Result<(String, bool)> {
        let loaded = self.load()?;
        let dim = self.config.dim;
        if dim > crate::oracle::MAX_ORACLE_DIM {
            return Err(Error::Refused(format!(
                "quadrature oracle supports D ≤ {}, got {dim}",
                crate::oracle::MAX_ORACLE_DIM
            )));
        }
        let (f, _) = self.fit_loaded(&loaded, dim)?;
        let grid = QuadratureGrid::new(&f.sigma_theta, self.config.nodes)?;
        let loglik = marginal_loglik(&loaded.responses, &f.params, &grid)?;
        let surrogate = f.final_surrogate();
        let elbo = f.elbo_trace.last().copied().unwrap_or(f64::NAN);
        let agreement = if dim == 1 && loaded.responses.n_items() <= crate::oracle::MAX_MMLE_ITEMS {
            let m = reference_mmle(&loaded.responses, 1, &self.config.mmle_config())?;
            let pick_a = |p: &crate::model::ItemParameters| p.a().iter().copied().collect::<Vec<_>>();
            let pick_b = |p: &crate::model::ItemParameters| {
                (0..p.n_items()).flat_map(|j| p.thresholds(j)).collect::<Vec<_>>()
            };
            let (va, ma) = (pick_a(&f.params), pick_a(&m.params));
            let (vb, mb) = (pick_b(&f.params), pick_b(&m.params));
            Some(Agreement {
                corr_a: corr(&va, &ma),
                corr_b: corr(&vb, &mb),
                mean_abs_diff_a: mean_abs_diff(&va, &ma),
                mean_abs_diff_b: mean_abs_diff(&vb, &mb),
                mmle_iterations: m.iterations,
                mmle_converged: m.converged,
            })
        } else {
            None
        };
        let elbo_ok = elbo <= loglik;
        let summary = ValidationSummary {
            dim,
            nodes: self.config.nodes,
            marginal_loglik: loglik,
            surrogate,
            elbo,
            surrogate_below_loglik: surrogate <= loglik,
            elbo_below_loglik: elbo_ok,
            agreement,
            passed: elbo_ok,
        };
        self.write_report("validation.json", &summary)?;
        let mut s = String::new();
        let _ = writeln!(s, "marginal loglik  {:.6}", summary.marginal_loglik);
        let _ = writeln!(s, "surrogate        {:.6}  (≤ loglik: {})", surrogate, summary.surrogate_below_loglik);
        let _ = writeln!(s, "elbo             {:.6}  (≤ loglik: {})", elbo, summary.elbo_below_loglik);
        if let Some(a) = &summary.agreement {
            let _ = writeln!(s, "vs reference MMLE: corr(a) {:.4}  corr(b) {:.4}  |Δa| {:.4}  |Δb| {:.4}",
                a.corr_a, a.corr_b, a.mean_abs_diff_a, a.mean_abs_diff_b);
        }
        let _ = writeln!(s, "{}", if summary.passed { "PASS" } else { "FAIL" });
        Ok((s, summary.passed))
    }
}

fn fit_wall_time(path: &Path) -> Option<f64> {
    let text = fs::read_to_string(path).ok()?;
    let v: serde_json::Value = serde_json::from_str(&text).ok()?;
    v.get("result")?.get("wall_time")?.as_f64()
}
