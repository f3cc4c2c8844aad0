use ndarray::{Array2, Array3};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::image::{BinaryMask, Dataset, Image, Sample, Split};
use crate::error::{Error, Result};

/// Smallest accepted output side length.
pub const MIN_SIDE: usize = 8;

/// Half-pixel-centre source coordinate of output index `o`.
fn source_coord(o: usize, in_len: usize, out_len: usize) -> f64 {
    (o as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5
}

/// Bilinear resize of an image to `height × width`.
pub fn resize_image(image: &Image, height: usize, width: usize) -> Image {
    let (h, w) = (image.height(), image.width());
    if (h, w) == (height, width) {
        return image.clone();
    }
    let src = image.pixels();
    let taps = |o: usize, in_len: usize, out_len: usize| {
        let x = source_coord(o, in_len, out_len).clamp(0.0, (in_len - 1) as f64);
        let x0 = x.floor() as usize;
        let x1 = (x0 + 1).min(in_len - 1);
        (x0, x1, x - x0 as f64)
    };
    let rows: Vec<_> = (0..height).map(|i| taps(i, h, height)).collect();
    let cols: Vec<_> = (0..width).map(|j| taps(j, w, width)).collect();
    let pixels = Array3::from_shape_fn((height, width, 3), |(i, j, c)| {
        let (y0, y1, fy) = rows[i];
        let (x0, x1, fx) = cols[j];
        let top = src[[y0, x0, c]] * (1.0 - fx) + src[[y0, x1, c]] * fx;
        let bottom = src[[y1, x0, c]] * (1.0 - fx) + src[[y1, x1, c]] * fx;
        (top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0)
    });
    Image::new(pixels).expect("clamped bilinear output is a valid image")
}

/// Nearest-neighbour resize; keeps the mask binary.
pub fn resize_mask(mask: &BinaryMask, height: usize, width: usize) -> BinaryMask {
    let (h, w) = (mask.height(), mask.width());
    if (h, w) == (height, width) {
        return mask.clone();
    }
    let near = |o: usize, in_len: usize, out_len: usize| {
        (((o as f64 + 0.5) * in_len as f64 / out_len as f64).floor() as usize).min(in_len - 1)
    };
    let src = mask.pixels();
    let pixels = Array2::from_shape_fn((height, width), |(i, j)| {
        src[[near(i, h, height), near(j, w, width)]]
    });
    BinaryMask::new(pixels).expect("nearest-neighbour output is binary")
}

/// Resizes a sample to `target × target`: bilinear image, nearest-neighbour mask.
pub fn resize_sample(sample: &Sample, target: usize) -> Result<Sample> {
    if target < MIN_SIDE {
        return Err(Error::arg(format!("resize target {target} is below {MIN_SIDE}")));
    }
    Sample::new(
        resize_image(&sample.image, target, target),
        resize_mask(&sample.mask, target, target),
        sample.id.clone(),
    )
}

/// Seeded partition into `(train, val)` with `n_val` held-out samples.
///
/// Both parts keep the input order.
pub fn split_train_val(dataset: &Dataset, n_val: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = dataset.len();
    if n_val > n {
        return Err(Error::arg(format!(
            "n_val = {n_val} exceeds dataset size {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut held_out = vec![false; n];
    for i in index::sample(&mut rng, n, n_val) {
        held_out[i] = true;
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (s, &out) in dataset.samples().iter().zip(&held_out) {
        if out {
            val.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    Ok((Dataset::new(train, Split::Train)?, Dataset::new(val, Split::Val)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(size: usize, id: &str) -> Sample {
        let image = Image::from_fn(size, size, |i, j, c| ((i * 7 + j * 3 + c) % 11) as f64 / 10.0);
        let mask = BinaryMask::from_fn(size, size, |i, j| (i + j) % 3 == 0);
        Sample::new(image, mask, id).unwrap()
    }

    #[test]
    fn identity_resize_is_bitwise_equal() {
        let s = sample(512, "a");
        assert_eq!(resize_sample(&s, 512).unwrap(), s);
    }

    #[test]
    fn downsizing_keeps_mask_binary() {
        let s = sample(100, "a");
        let r = resize_sample(&s, 64).unwrap();
        assert_eq!((r.image.height(), r.image.width()), (64, 64));
        assert_eq!((r.mask.height(), r.mask.width()), (64, 64));
        assert!(r.mask.pixels().iter().all(|&v| v <= 1));
        assert!(r.image.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn monuseg_sized_sample_resizes_to_512() {
        let image = Image::from_fn(1000, 1000, |i, j, _| ((i ^ j) % 255) as f64 / 255.0);
        let mask = BinaryMask::from_fn(1000, 1000, |i, j| (i / 40 + j / 40) % 2 == 0);
        let s = Sample::new(image, mask, "TCGA").unwrap();
        let r = resize_sample(&s, 512).unwrap();
        assert_eq!((r.image.height(), r.image.width()), (512, 512));
        assert!(r.mask.pixels().iter().all(|&v| v <= 1));
    }

    #[test]
    fn constant_image_stays_constant() {
        for &(from, to) in &[(13, 8), (8, 31), (64, 64), (9, 100)] {
            let img = Image::constant(from, from, 0.5);
            let r = resize_image(&img, to, to);
            assert!(r.pixels().iter().all(|&v| v == 0.5), "{from} -> {to}");
        }
    }

    #[test]
    fn target_below_minimum_is_rejected() {
        assert!(matches!(resize_sample(&sample(16, "a"), 7), Err(Error::Argument(_))));
    }

    fn dataset(n: usize) -> Dataset {
        Dataset::new((0..n).map(|i| sample(8, &format!("s{i:02}"))).collect(), Split::Train).unwrap()
    }

    #[test]
    fn thirty_split_into_twenty_five_and_five() {
        let (train, val) = split_train_val(&dataset(30), 5, 3).unwrap();
        assert_eq!((train.len(), val.len()), (25, 5));
        assert_eq!(val.split(), Split::Val);
    }

    #[test]
    fn zero_val_preserves_order() {
        let d = dataset(6);
        let (train, val) = split_train_val(&d, 0, 11).unwrap();
        assert_eq!(train.ids(), d.ids());
        assert!(val.is_empty());
    }

    #[test]
    fn split_is_deterministic_and_rejects_oversize() {
        let d = dataset(10);
        let a = split_train_val(&d, 4, 42).unwrap();
        let b = split_train_val(&d, 4, 42).unwrap();
        assert_eq!(a.1.ids(), b.1.ids());
        assert!(split_train_val(&d, 11, 0).is_err());
    }
}
