//! Scores a briefly trained model with Monte-Carlo dropout.
//!
//! `cargo run --release --example mc_dropout_eval`

use styleaug::dataset::{generate_synthetic, SyntheticSpec};
use styleaug::evaluate::{mc_dropout_evaluate_with, EnsembleMode, EvalOptions};
use styleaug::segnet::{build_model, SegNetConfig};
use styleaug::trainer::{train, TrainConfig};

fn main() -> styleaug::Result<()> {
    let data = generate_synthetic(&SyntheticSpec::default())?;
    let mut model = build_model(&SegNetConfig::tiny())?;
    let mut config = TrainConfig {
        epochs: 40,
        ..TrainConfig::default()
    };
    config.optimizer.learning_rate = 2e-3;
    let result = train(&mut model, &data.train, &data.val, &config, None, None, None)?;
    let options = EvalOptions::default();
    let report = mc_dropout_evaluate_with(&result.best_model, &data.test, &options)?;
    println!("per-instance IoU:");
    for (k, m) in report.per_instance.iter().enumerate() {
        println!("  instance {k:>2}: IoU {:.4}  Dice {:.4}", m.mean_iou, m.mean_dice);
    }
    println!(
        "mean over {} instances: IoU {:.4} ± {:.4}, Dice {:.4} ± {:.4}",
        report.n_instances, report.mean_iou, report.std_iou, report.mean_dice, report.std_dice
    );
    let ensemble = EvalOptions {
        ensemble: EnsembleMode::AveragePredictions,
        ..options
    };
    let pooled = mc_dropout_evaluate_with(&result.best_model, &data.test, &ensemble)?;
    println!("averaged predictions: IoU {:.4}, Dice {:.4}", pooled.mean_iou, pooled.mean_dice);
    Ok(())
}
