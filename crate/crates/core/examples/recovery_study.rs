//! Small replicated recovery study over one design cell.
//!
//!     cargo run --release --example recovery_study [replications]

use pgvem::cli::configure_threads;
use pgvem::simulator::{evaluate, generate, replicate_seed, SimulationSpec};
use pgvem::{fit, FitConfig, Mode};
use rayon::prelude::*;

fn main() -> pgvem::Result<()> {
    let threads = configure_threads();
    let reps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let rows: Vec<pgvem::Result<(f64, f64, f64)>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let seed = replicate_seed(100, r);
            let data = generate(&SimulationSpec::new(500, 20, 3, 2, seed))?;
            let f = fit(&data.responses, 2, &FitConfig { seed, ..FitConfig::default() })?;
            let e = evaluate(&f, &data.truth, Mode::Efa)?;
            Ok((e.mse_a, e.mse_b, e.mse_sigma))
        })
        .collect();
    println!("{reps} replications on {threads} thread(s)");
    println!("{:>4} {:>10} {:>10} {:>10}", "rep", "MSE a", "MSE b", "MSE Σ");
    for (r, row) in rows.into_iter().enumerate() {
        let (a, b, s) = row?;
        println!("{r:>4} {a:>10.4} {b:>10.4} {s:>10.4}");
    }
    Ok(())
}
