//! Trains briefly and renders the train/validation loss curves as SVG.
//!
//! `cargo run --release --example loss_curves [out_dir]`

use std::path::PathBuf;

use styleaug::dataset::{generate_synthetic, SyntheticSpec};
use styleaug::experiment::emit_loss_curves;
use styleaug::segnet::{build_model, SegNetConfig};
use styleaug::trainer::{train, TrainConfig};

fn main() -> styleaug::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("styleaug-curves"));
    let data = generate_synthetic(&SyntheticSpec::default())?;
    let mut model = build_model(&SegNetConfig::tiny())?;
    let mut config = TrainConfig {
        epochs: 40,
        ..TrainConfig::default()
    };
    config.optimizer.learning_rate = 2e-3;
    train(&mut model, &data.train, &data.val, &config, None, None, Some(&out))?;
    let files = emit_loss_curves(&out.join("history.csv"), &out.join("loss_curves.svg"))?;
    println!("plot {}\nsummary {}", files.plot.display(), files.summary.display());
    println!("{}", std::fs::read_to_string(&files.summary).unwrap_or_default());
    Ok(())
}
