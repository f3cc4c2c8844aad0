//! The committed experiment configurations parse and match their presets.

use std::path::Path;

use styleaug::experiment::{DataSource, ExperimentConfig};
use styleaug::segnet::SegNetConfig;

fn configs_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"))
}

#[test]
fn synthetic_benchmark_file_matches_builtin() {
    let config = ExperimentConfig::load(&configs_dir().join("synthetic_benchmark.json")).unwrap();
    assert_eq!(config, ExperimentConfig::synthetic_benchmark());
}

#[test]
fn extended_config_describes_full_scale_run() {
    let config = ExperimentConfig::load(&configs_dir().join("monuseg_extended.json")).unwrap();
    let mut model = SegNetConfig::full();
    model.seed = config.model.seed;
    assert_eq!(config.model, model);
    assert_eq!(config.train.epochs, 2000);
    assert_eq!(config.train.batch_size, 4);
    assert_eq!(config.train.optimizer.learning_rate, 1e-4);
    assert_eq!(config.eval.n_instances, 20);
    match config.data {
        DataSource::Ingested { image_size, n_val, .. } => {
            assert_eq!(image_size, 512);
            assert_eq!(n_val, 5);
        }
        other => panic!("unexpected data source {other:?}"),
    }
}
