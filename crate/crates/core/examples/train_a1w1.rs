//! Train the 16-32-1 MLP with 1-bit activations and weights under several
//! lambdas next to a float baseline.
//!
//! `cargo run --release --example train_a1w1 -- [seed] [losses.csv]`

use dq::harness::{run_experiment, write_losses_csv, ExperimentConfig, RunKind};

fn main() -> dq::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().map_or(0, |s| s.parse().expect("seed must be an integer"));
    let cfg = ExperimentConfig { seed, lambdas: vec![0.0, 0.01, 0.1, 1.0], ..Default::default() };
    let reports = run_experiment(&cfg)?;
    for r in &reports {
        let label = match r.run {
            RunKind::Float => "float".to_string(),
            RunKind::Quantized { lambda } => format!("A1W1 lambda={lambda}"),
        };
        println!(
            "{label:<18} initial {:.4}  final {:.4}  finite {}",
            r.initial_loss, r.final_loss, r.finite
        );
    }
    if let Some(path) = args.next() {
        write_losses_csv(&reports, std::fs::File::create(path)?)?;
    }
    Ok(())
}
