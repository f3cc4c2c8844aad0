//! Trains the tiny network on synthetic data and prints the loss history.
//!
//! `cargo run --release --example train_tiny [epochs] [run_dir]`

use std::path::PathBuf;

use styleaug::augment::AugmentationPolicy;
use styleaug::dataset::{generate_synthetic, SyntheticSpec};
use styleaug::segnet::{build_model, count_parameters, SegNetConfig};
use styleaug::trainer::{train, TrainConfig};

fn main() -> styleaug::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(30, |a| a.parse().expect("epochs must be an integer"));
    let run_dir = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("styleaug-train"));
    let data = generate_synthetic(&SyntheticSpec::default())?;
    let mut model = build_model(&SegNetConfig::tiny())?;
    println!("{} parameters", count_parameters(&model));
    let mut config = TrainConfig {
        epochs,
        policy: AugmentationPolicy::default(),
        ..TrainConfig::default()
    };
    config.optimizer.learning_rate = 2e-3;
    let result = train(&mut model, &data.train, &data.val, &config, None, None, Some(&run_dir))?;
    for r in result.history.iter().step_by((epochs / 10).max(1)) {
        println!("epoch {:>4}  train {:.4}  val {:.4}  val IoU {:.4}", r.epoch, r.train_loss, r.val_loss, r.val_iou);
    }
    println!("best val IoU {:.4} at epoch {}; run in {}", result.best_val_iou, result.best_epoch, run_dir.display());
    Ok(())
}
