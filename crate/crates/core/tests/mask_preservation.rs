//! Augmentation never alters mask labels, only their geometry.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use styleaug::augment::{apply_geometric, augment_batch, augment_batch_traced, AugmentationPolicy, RatioLaw};
use styleaug::dataset::{BinaryMask, Image, Sample};
use styleaug::stylizer::{StylePrior, Stylizer, StylizerConfig};

fn random_sample(rng: &mut ChaCha8Rng, size: usize, k: usize) -> Sample {
    let v: Vec<f64> = (0..size * size * 3).map(|_| rng.gen()).collect();
    let image = Image::from_fn(size, size, |i, j, c| v[(i * size + j) * 3 + c]);
    let bits: Vec<bool> = (0..size * size).map(|_| rng.gen_bool(0.3)).collect();
    let mask = BinaryMask::from_fn(size, size, |i, j| bits[i * size + j]);
    Sample::new(image, mask, format!("s{k}")).unwrap()
}

fn small_stylizer() -> (Stylizer, StylePrior) {
    let config = StylizerConfig {
        dim: 8,
        predictor_channels: [4, 4, 8],
        renderer_channels: 4,
        seed: 5,
    };
    (Stylizer::new(config).unwrap(), StylePrior::isotropic(8, 1.0).unwrap())
}

fn random_policy(rng: &mut ChaCha8Rng, geometric: bool) -> AugmentationPolicy {
    AugmentationPolicy {
        geometric_enabled: geometric,
        style_enabled: rng.gen_bool(0.5),
        alpha: rng.gen_range(0.0..=1.0),
        ratio_law: if rng.gen_bool(0.5) {
            RatioLaw::Uniform
        } else {
            RatioLaw::Fixed { ratio: rng.gen_range(0.0..=1.0) }
        },
    }
}

#[test]
fn masks_are_bitwise_unchanged_without_geometric() {
    let (stylizer, prior) = small_stylizer();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for call in 0..1000 {
        let size = [8, 12, 16][call % 3];
        let batch: Vec<Sample> = (0..rng.gen_range(1..=4)).map(|k| random_sample(&mut rng, size, k)).collect();
        let policy = random_policy(&mut rng, false);
        let out = augment_batch(&batch, &policy, Some(&stylizer), Some(&prior), &mut rng).unwrap();
        assert_eq!(out.len(), batch.len());
        for (a, b) in batch.iter().zip(&out) {
            assert_eq!(a.mask, b.mask, "call {call}");
            assert_eq!(a.id, b.id);
        }
    }
}

#[test]
fn inverse_transform_restores_masks() {
    let (stylizer, prior) = small_stylizer();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for call in 0..1000 {
        let size = [8, 16][call % 2];
        let batch: Vec<Sample> = (0..rng.gen_range(1..=4)).map(|k| random_sample(&mut rng, size, k)).collect();
        let policy = random_policy(&mut rng, true);
        let out = augment_batch_traced(&batch, &policy, Some(&stylizer), Some(&prior), &mut rng).unwrap();
        for ((a, b), t) in batch.iter().zip(&out.samples).zip(&out.transforms) {
            let restored = apply_geometric(b, t.inverse());
            assert_eq!(restored.mask, a.mask, "call {call}");
            assert_eq!(b.mask.count_ones(), a.mask.count_ones());
        }
    }
}
