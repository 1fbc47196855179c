//! Simulate one design cell, fit it in exploratory mode and report recovery.
//!
//!     cargo run --release --example fit_simulated

use pgvem::cli::configure_threads;
use pgvem::selection::information_criteria;
use pgvem::simulator::{evaluate, generate, SimulationSpec};
use pgvem::{fit, FitConfig, Mode};

fn main() -> pgvem::Result<()> {
    configure_threads();
    let data = generate(&SimulationSpec::new(500, 20, 3, 2, 1))?;
    let f = fit(&data.responses, 2, &FitConfig::default())?;
    println!("iterations {} converged {}", f.iterations, f.converged);
    println!("surrogate {:.4}", f.final_surrogate());
    let ic = information_criteria(&f, data.responses.n_examinees());
    println!("AIC* {:.2}  BIC* {:.2}  P {}", ic.aic_star, ic.bic_star, ic.n_params);
    let r = evaluate(&f, &data.truth, Mode::Efa)?;
    println!("MSE a {:.4}  b {:.4}  theta {:.4}", r.mse_a, r.mse_b, r.mse_theta);
    println!("first item a {:?}", f.params.a_row(0));
    println!("first item b {:?}", f.params.thresholds(0));
    Ok(())
}
