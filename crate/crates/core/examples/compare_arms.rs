//! Runs a shortened no-style vs style comparison and prints the report.
//!
//! `cargo run --release --example compare_arms [out_root] [epochs]`

use std::path::PathBuf;

use styleaug::experiment::{run_experiment, ExperimentConfig};

fn main() -> styleaug::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("styleaug-compare"));
    let epochs = args.next().map_or(30, |a| a.parse().expect("epochs must be an integer"));
    let mut config = ExperimentConfig::synthetic_benchmark();
    config.name = "compare_example".into();
    config.output_root = out;
    config.train.epochs = epochs;
    config.seeds = vec![0];
    config.stylizer.calibration.steps = 100;
    config.eval.n_instances = 5;
    let report = run_experiment(&config)?;
    print!("{}", report.to_markdown());
    println!("\nrun directories under {}", config.experiment_dir().display());
    Ok(())
}
