//! Generates the synthetic texture-shift dataset and writes it as PNG pairs.
//!
//! `cargo run --release --example synth_dataset [out_dir]`

use std::path::PathBuf;

use styleaug::dataset::{generate_synthetic, save_synthetic, SyntheticSpec};

fn main() -> styleaug::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("styleaug-synth"));
    let spec = SyntheticSpec::default();
    let splits = generate_synthetic(&spec)?;
    save_synthetic(&splits, &spec, &out)?;
    for set in [&splits.train, &splits.val, &splits.test] {
        let fg: f64 = set.samples().iter().map(|s| s.mask.foreground_fraction()).sum::<f64>() / set.len() as f64;
        println!("{:>5}: {} images, mean foreground fraction {fg:.3}", set.split().as_str(), set.len());
    }
    println!("written to {}", out.display());
    Ok(())
}
