//! Fit D = 1..4 to data generated with three factors and compare the
//! modified information criteria.
//!
//!     cargo run --release --example dimension_sweep

use pgvem::cli::configure_threads;
use pgvem::selection::sweep_dimensions;
use pgvem::simulator::{generate, SimulationSpec, HIGH_LOADINGS};
use pgvem::FitConfig;

fn main() -> pgvem::Result<()> {
    configure_threads();
    let data = generate(&SimulationSpec::new(500, 30, 3, 3, 7).loadings(HIGH_LOADINGS))?;
    let sweep = sweep_dimensions(&data.responses, &[1, 2, 3, 4], &FitConfig::default())?;
    println!("{:>3} {:>14} {:>14} {:>6} {:>6}", "D", "AIC*", "BIC*", "P", "iter");
    for d in &sweep.per_dim {
        println!(
            "{:>3} {:>14.2} {:>14.2} {:>6} {:>6}",
            d.dim, d.criteria.aic_star, d.criteria.bic_star, d.criteria.n_params, d.iterations
        );
    }
    println!("AIC* picks {}, BIC* picks {} (truth 3)", sweep.best_aic, sweep.best_bic);
    Ok(())
}
