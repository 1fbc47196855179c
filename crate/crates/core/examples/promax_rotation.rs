//! Rotate an exploratory solution to simple structure and align it with
//! the generating loadings.
//!
//!     cargo run --release --example promax_rotation

use pgvem::cli::configure_threads;
use pgvem::rotation::{align_factors, promax, varimax_traced};
use pgvem::simulator::{generate, SimulationSpec, HIGH_CORRELATION, HIGH_LOADINGS};
use pgvem::{fit, FitConfig};

fn main() -> pgvem::Result<()> {
    configure_threads();
    let spec = SimulationSpec::new(800, 15, 3, 3, 5)
        .loadings(HIGH_LOADINGS)
        .correlation(HIGH_CORRELATION);
    let mut data = generate(&spec)?;
    // Give the truth a simple structure: each item loads on one factor.
    let mut a = data.truth.params.a().clone();
    for j in 0..a.nrows() {
        for r in 0..3 {
            if r != j % 3 {
                a[(j, r)] = 0.0;
            }
        }
    }
    data.truth.params = data.truth.params.with_a(a);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(6);
    let (responses, _) = pgvem::simulator::simulate_from_model(
        &data.truth.params,
        &data.truth.sigma_theta,
        spec.n,
        100,
        &mut rng,
    )?;
    let f = fit(&responses, 3, &FitConfig::default())?;

    let v = varimax_traced(f.params.a());
    println!("varimax criterion per sweep {:?}", v.criterion_trace);
    let rotated = promax(f.params.a(), 4)?;
    let al = align_factors(&rotated.loadings, data.truth.params.a())?;
    let loadings = al.apply_columns(&rotated.loadings);
    println!("promax loadings (aligned) vs truth:");
    for j in 0..loadings.nrows() {
        let est: Vec<String> = loadings.row(j).iter().map(|v| format!("{v:6.2}")).collect();
        let tru: Vec<String> = data.truth.params.a().row(j).iter().map(|v| format!("{v:5.2}")).collect();
        println!("  {}   {}", est.join(" "), tru.join(" "));
    }
    println!("factor correlation\n{:.3}", al.apply_symmetric(&rotated.factor_correlation));
    println!("generating correlation\n{:.3}", data.truth.sigma_theta);
    Ok(())
}
