//! Compare the variational bounds with the exact marginal log-likelihood
//! and the posterior means with quadrature posterior means.
//!
//!     cargo run --release --example quadrature_check

use pgvem::cli::configure_threads;
use pgvem::oracle::{marginal_loglik, posterior_moments, QuadratureGrid};
use pgvem::simulator::{generate, SimulationSpec};
use pgvem::variational::entropy_correction;
use pgvem::{fit, FitConfig, Mode};

fn main() -> pgvem::Result<()> {
    configure_threads();
    let data = generate(&SimulationSpec::new(300, 12, 3, 2, 8))?;
    let cfg = FitConfig {
        mode: Mode::Cfa,
        ..FitConfig::default()
    };
    let f = fit(&data.responses, 2, &cfg)?;
    let grid = QuadratureGrid::new(&f.sigma_theta, 31)?;
    let ll = marginal_loglik(&data.responses, &f.params, &grid)?;
    let elbo = f.final_surrogate() + entropy_correction(&f.state)?;
    println!("marginal loglik {ll:.4}");
    println!("ELBO            {elbo:.4}  (gap {:.4})", ll - elbo);
    println!("surrogate       {:.4}", f.final_surrogate());
    println!("{:>4} {:>18} {:>18}", "i", "variational mean", "posterior mean");
    for i in 0..5 {
        let (mean, _) = posterior_moments(i, &data.responses, &f.params, &grid)?;
        println!(
            "{:>4} {:>8.3} {:>8.3}  {:>8.3} {:>8.3}",
            i, f.state.mu[(i, 0)], f.state.mu[(i, 1)], mean[0], mean[1]
        );
    }
    Ok(())
}
