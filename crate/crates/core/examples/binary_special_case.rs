//! Two-category items: pGVEM against the fixed-quadrature MMLE reference.
//!
//!     cargo run --release --example binary_special_case

use pgvem::cli::configure_threads;
use pgvem::oracle::{reference_mmle, MmleConfig};
use pgvem::simulator::{generate, SimulationSpec, HIGH_LOADINGS};
use pgvem::{fit, FitConfig};

fn main() -> pgvem::Result<()> {
    configure_threads();
    let data = generate(&SimulationSpec::new(2000, 10, 2, 1, 12).loadings(HIGH_LOADINGS))?;
    let f = fit(&data.responses, 1, &FitConfig::default())?;
    let m = reference_mmle(&data.responses, 1, &MmleConfig::default())?;
    let (sf, sm) = (f.params.a().sum().signum(), m.params.a().sum().signum());
    println!("{:>4} {:>8} {:>8} {:>8}   {:>8} {:>8} {:>8}", "item", "a true", "pGVEM", "MMLE", "b true", "pGVEM", "MMLE");
    for j in 0..10 {
        println!(
            "{:>4} {:>8.3} {:>8.3} {:>8.3}   {:>8.3} {:>8.3} {:>8.3}",
            j + 1,
            data.truth.params.a()[(j, 0)],
            sf * f.params.a()[(j, 0)],
            sm * m.params.a()[(j, 0)],
            data.truth.params.threshold(j, 1),
            f.params.threshold(j, 1),
            m.params.threshold(j, 1)
        );
    }
    println!("pGVEM {} iterations, MMLE {} iterations", f.iterations, m.iterations);
    Ok(())
}
