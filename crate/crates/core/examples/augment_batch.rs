//! Draws one augmented mini-batch and reports what was applied.
//!
//! `cargo run --release --example augment_batch`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use styleaug::augment::{augment_batch_traced, AugmentationPolicy};
use styleaug::dataset::{generate_synthetic, SyntheticSpec};
use styleaug::stylizer::{StylePrior, Stylizer, StylizerConfig};

fn main() -> styleaug::Result<()> {
    let data = generate_synthetic(&SyntheticSpec::default())?;
    let batch = &data.train.samples()[..4];
    // an uncalibrated stylizer is enough to show the mechanics
    let stylizer = Stylizer::new(StylizerConfig::default())?;
    let prior = StylePrior::isotropic(stylizer.dim(), 1.0)?;
    let policy = AugmentationPolicy {
        style_enabled: true,
        ..AugmentationPolicy::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for round in 0..3 {
        let out = augment_batch_traced(batch, &policy, Some(&stylizer), Some(&prior), &mut rng)?;
        println!("batch {round}: stylized positions {:?}", out.stylized);
        for (s, t) in out.samples.iter().zip(&out.transforms) {
            println!(
                "  {}: {} quarter turns, flip_h {}, flip_v {}, {} mask pixels",
                s.id,
                t.quarter_turns,
                t.flip_h,
                t.flip_v,
                s.mask.count_ones()
            );
        }
    }
    Ok(())
}
