//! Parametric-bootstrap standard errors for a fitted model.
//!
//!     cargo run --release --example bootstrap_standard_errors

use pgvem::bootstrap::{average_se, bootstrap_se, BootstrapConfig};
use pgvem::cli::configure_threads;
use pgvem::simulator::{generate, SimulationSpec};
use pgvem::{fit, FitConfig};

fn main() -> pgvem::Result<()> {
    configure_threads();
    let n = 400;
    let data = generate(&SimulationSpec::new(n, 10, 3, 2, 3))?;
    let cfg = FitConfig::default();
    let f = fit(&data.responses, 2, &cfg)?;
    let boot = BootstrapConfig {
        replicates: 20,
        min_successes: 15,
        ..BootstrapConfig::default()
    };
    let se = bootstrap_se(&f, n, &cfg, &boot)?;
    println!("{} replicates used, {} failed", se.n_replicates, se.n_failed);
    println!("{:>5} {:>10} {:>10} {:>10} {:>10}", "item", "a_1", "se", "a_2", "se");
    for j in 0..f.params.n_items() {
        let a = f.params.a_row(j);
        println!(
            "{:>5} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
            j + 1,
            a[0],
            se.se_a[(j, 0)],
            a[1],
            se.se_a[(j, 1)]
        );
    }
    println!("average SE {:.4}", average_se(&se.table(), f.params.categories()));
    Ok(())
}
