//! Batch augmentation: style randomisation of a random subset of images,
//! followed by joint dihedral transforms of image and mask.

use ndarray::{s, Array2, Array3};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{BinaryMask, Image, Sample};
use crate::error::{Error, Result};
use crate::stylizer::{blend_embeddings, sample_style_embedding, StyleEmbedding, StylePrior, Stylizer};

/// Counter-clockwise quarter turns, then an optional left-right flip, then an
/// optional top-bottom flip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct GeometricTransform {
    pub quarter_turns: u8,
    pub flip_h: bool,
    pub flip_v: bool,
}

impl GeometricTransform {
    pub const IDENTITY: Self = Self {
        quarter_turns: 0,
        flip_h: false,
        flip_v: false,
    };

    pub fn new(quarter_turns: u8, flip_h: bool, flip_v: bool) -> Result<Self> {
        if quarter_turns > 3 {
            return Err(Error::arg(format!("quarter_turns = {quarter_turns} is not in 0..=3")));
        }
        Ok(Self {
            quarter_turns,
            flip_h,
            flip_v,
        })
    }

    /// All 16 parameterisations (8 distinct dihedral elements).
    pub fn all() -> impl Iterator<Item = Self> {
        (0..4u8).flat_map(|q| {
            [(false, false), (true, false), (false, true), (true, true)]
                .into_iter()
                .map(move |(h, v)| Self {
                    quarter_turns: q,
                    flip_h: h,
                    flip_v: v,
                })
        })
    }

    /// Action on centred coordinates `(x right, y down)` as a 2×2 integer matrix.
    pub fn matrix(&self) -> [[i32; 2]; 2] {
        // counter-clockwise on screen: (x, y) -> (y, -x)
        let rot = [[0, 1], [-1, 0]];
        let mut m = [[1, 0], [0, 1]];
        for _ in 0..self.quarter_turns {
            m = mat_mul(rot, m);
        }
        if self.flip_h {
            m = mat_mul([[-1, 0], [0, 1]], m);
        }
        if self.flip_v {
            m = mat_mul([[1, 0], [0, -1]], m);
        }
        m
    }

    /// The transform equivalent to applying `self` and then `next`.
    pub fn then(&self, next: &GeometricTransform) -> GeometricTransform {
        let m = mat_mul(next.matrix(), self.matrix());
        Self::from_matrix(m)
    }

    pub fn inverse(&self) -> GeometricTransform {
        let m = self.matrix();
        // orthogonal: inverse is the transpose
        Self::from_matrix([[m[0][0], m[1][0]], [m[0][1], m[1][1]]])
    }

    fn from_matrix(m: [[i32; 2]; 2]) -> GeometricTransform {
        Self::all()
            .find(|t| t.matrix() == m)
            .expect("dihedral group is closed")
    }
}

fn mat_mul(a: [[i32; 2]; 2], b: [[i32; 2]; 2]) -> [[i32; 2]; 2] {
    let mut out = [[0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn rotate_ccw3(a: &Array3<f64>) -> Array3<f64> {
    a.slice(s![.., ..;-1, ..]).permuted_axes([1, 0, 2]).as_standard_layout().into_owned()
}

fn rotate_ccw2(a: &Array2<u8>) -> Array2<u8> {
    a.slice(s![.., ..;-1]).reversed_axes().as_standard_layout().into_owned()
}

fn transform_pixels(img: &Array3<f64>, mask: &Array2<u8>, t: GeometricTransform) -> (Array3<f64>, Array2<u8>) {
    let mut img = img.clone();
    let mut mask = mask.clone();
    for _ in 0..t.quarter_turns {
        img = rotate_ccw3(&img);
        mask = rotate_ccw2(&mask);
    }
    if t.flip_h {
        img = img.slice(s![.., ..;-1, ..]).to_owned();
        mask = mask.slice(s![.., ..;-1]).to_owned();
    }
    if t.flip_v {
        img = img.slice(s![..;-1, .., ..]).to_owned();
        mask = mask.slice(s![..;-1, ..]).to_owned();
    }
    (img, mask)
}

/// Applies one transform jointly to image and mask.
pub fn apply_geometric(sample: &Sample, t: GeometricTransform) -> Sample {
    if t == GeometricTransform::IDENTITY {
        return sample.clone();
    }
    let (img, mask) = transform_pixels(sample.image.pixels(), sample.mask.pixels(), t);
    Sample {
        image: Image::new(img).expect("permuted pixels stay in range"),
        mask: BinaryMask::new(mask).expect("permuted mask stays binary"),
        id: sample.id.clone(),
    }
}

/// Uniform quarter turn and two independent fair-coin flips.
pub fn draw_geometric<R: Rng>(rng: &mut R) -> GeometricTransform {
    GeometricTransform {
        quarter_turns: rng.gen_range(0..4),
        flip_h: rng.gen_bool(0.5),
        flip_v: rng.gen_bool(0.5),
    }
}

/// Distribution of the number of stylised images in a batch of size `B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RatioLaw {
    /// Count uniform over `{0, …, B}`.
    Uniform,
    /// `round(ratio · B)` every batch.
    Fixed { ratio: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    pub geometric_enabled: bool,
    pub style_enabled: bool,
    /// Stylisation strength: weight of the random style in the blend.
    pub alpha: f64,
    pub ratio_law: RatioLaw,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            geometric_enabled: true,
            style_enabled: false,
            alpha: 0.5,
            ratio_law: RatioLaw::Uniform,
        }
    }
}

impl AugmentationPolicy {
    pub fn off() -> Self {
        Self {
            geometric_enabled: false,
            style_enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::arg(format!("alpha = {} is outside [0, 1]", self.alpha)));
        }
        if let RatioLaw::Fixed { ratio } = self.ratio_law {
            if !(0.0..=1.0).contains(&ratio) {
                return Err(Error::arg(format!("fixed ratio {ratio} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Number of images to stylise in a batch of `batch_size`.
pub fn draw_stylization_count<R: Rng>(batch_size: usize, policy: &AugmentationPolicy, rng: &mut R) -> usize {
    if !policy.style_enabled || batch_size == 0 {
        return 0;
    }
    match policy.ratio_law {
        RatioLaw::Uniform => rng.gen_range(0..=batch_size),
        RatioLaw::Fixed { ratio } => ((ratio * batch_size as f64).round() as usize).min(batch_size),
    }
}

/// Result of [`augment_batch_traced`]: the augmented samples plus what was drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedBatch {
    pub samples: Vec<Sample>,
    /// Batch positions that were stylised, ascending.
    pub stylized: Vec<usize>,
    /// Transform applied to each position (identity when geometric is off).
    pub transforms: Vec<GeometricTransform>,
}

/// Augments a batch. Random draws happen in a fixed order: stylisation count,
/// subset, one style embedding per chosen position (ascending), then one
/// transform per sample.
pub fn augment_batch<R: Rng>(
    batch: &[Sample],
    policy: &AugmentationPolicy,
    stylizer: Option<&Stylizer>,
    prior: Option<&StylePrior>,
    rng: &mut R,
) -> Result<Vec<Sample>> {
    Ok(augment_batch_traced(batch, policy, stylizer, prior, rng)?.samples)
}

pub fn augment_batch_traced<R: Rng>(
    batch: &[Sample],
    policy: &AugmentationPolicy,
    stylizer: Option<&Stylizer>,
    prior: Option<&StylePrior>,
    rng: &mut R,
) -> Result<AugmentedBatch> {
    policy.validate()?;
    if let Some(first) = batch.first() {
        let dims = (first.image.height(), first.image.width());
        if batch.iter().any(|s| (s.image.height(), s.image.width()) != dims) {
            return Err(Error::arg("batch samples differ in size"));
        }
    }
    let mut samples: Vec<Sample> = batch.to_vec();
    let mut stylized = Vec::new();
    if policy.style_enabled {
        let (stylizer, prior) = match (stylizer, prior) {
            (Some(s), Some(p)) => (s, p),
            _ => {
                return Err(Error::Config(
                    "style augmentation is enabled but no stylizer/prior was supplied".into(),
                ))
            }
        };
        if stylizer.dim() != prior.dim() {
            return Err(Error::Config(format!(
                "prior dimension {} does not match stylizer dimension {}",
                prior.dim(),
                stylizer.dim()
            )));
        }
        let k = draw_stylization_count(batch.len(), policy, rng);
        let mut chosen = index::sample(rng, batch.len(), k).into_vec();
        chosen.sort_unstable();
        let styles: Vec<StyleEmbedding> = chosen.iter().map(|_| sample_style_embedding(prior, rng)).collect();
        if !chosen.is_empty() {
            let images: Vec<&Image> = chosen.iter().map(|&i| &batch[i].image).collect();
            let content = stylizer.predict_batch(&images)?;
            let blended = content
                .iter()
                .zip(&styles)
                .map(|(c, s)| blend_embeddings(c, s, policy.alpha))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&StyleEmbedding> = blended.iter().collect();
            let rendered = stylizer.stylize_batch(&images, &refs)?;
            for (&i, img) in chosen.iter().zip(rendered) {
                samples[i].image = img;
            }
        }
        stylized = chosen;
    }
    let mut transforms = vec![GeometricTransform::IDENTITY; samples.len()];
    if policy.geometric_enabled {
        for (s, t) in samples.iter_mut().zip(transforms.iter_mut()) {
            *t = draw_geometric(rng);
            *s = apply_geometric(s, *t);
        }
    }
    Ok(AugmentedBatch {
        samples,
        stylized,
        transforms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn probe(h: usize, w: usize) -> Sample {
        let img = Array3::from_shape_fn((h, w, 3), |(i, j, c)| ((i * w + j) * 3 + c) as f64 / (h * w * 3) as f64);
        let mask = BinaryMask::from_fn(h, w, |i, j| (i * 7 + j * 3) % 5 < 2);
        Sample::new(Image::new(img).unwrap(), mask, "p").unwrap()
    }

    #[test]
    fn identity_leaves_sample_unchanged() {
        let s = probe(4, 5);
        assert_eq!(apply_geometric(&s, GeometricTransform::IDENTITY), s);
    }

    #[test]
    fn quarter_turn_of_two_by_two() {
        // a b / c d  ->  b d / a c
        let img = Array3::from_shape_fn((2, 2, 3), |(i, j, _)| (i * 2 + j) as f64 / 4.0);
        let mask = BinaryMask::new(ndarray::arr2(&[[1, 0], [0, 0]])).unwrap();
        let s = Sample::new(Image::new(img).unwrap(), mask, "x").unwrap();
        let r = apply_geometric(&s, GeometricTransform::new(1, false, false).unwrap());
        let got: Vec<f64> = r.image.pixels().slice(s![.., .., 0]).iter().copied().collect();
        let (a, b, c, d) = (0.0, 0.25, 0.5, 0.75);
        assert_eq!(got, vec![b, d, a, c]);
        assert_eq!(r.mask.pixels(), &ndarray::arr2(&[[0, 0], [1, 0]]));
    }

    #[test]
    fn four_quarter_turns_are_identity() {
        let s = probe(3, 6);
        let t = GeometricTransform::new(1, false, false).unwrap();
        let mut r = s.clone();
        for _ in 0..4 {
            r = apply_geometric(&r, t);
        }
        assert_eq!(r, s);
    }

    #[test]
    fn inverse_restores_sample() {
        let s = probe(4, 6);
        for t in GeometricTransform::all() {
            let back = apply_geometric(&apply_geometric(&s, t), t.inverse());
            assert_eq!(back, s, "{t:?}");
        }
    }

    #[test]
    fn composition_is_closed() {
        let s = probe(4, 4);
        for a in GeometricTransform::all() {
            for b in GeometricTransform::all() {
                let two = apply_geometric(&apply_geometric(&s, a), b);
                assert_eq!(apply_geometric(&s, a.then(&b)), two, "{a:?} then {b:?}");
            }
        }
    }

    #[test]
    fn draws_are_deterministic() {
        let a = draw_geometric(&mut ChaCha8Rng::seed_from_u64(5));
        let b = draw_geometric(&mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn count_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let on = AugmentationPolicy {
            style_enabled: true,
            ..AugmentationPolicy::default()
        };
        assert_eq!(draw_stylization_count(0, &on, &mut rng), 0);
        assert_eq!(draw_stylization_count(4, &AugmentationPolicy::default(), &mut rng), 0);
        let fixed = AugmentationPolicy {
            ratio_law: RatioLaw::Fixed { ratio: 1.0 },
            ..on
        };
        assert_eq!(draw_stylization_count(4, &fixed, &mut rng), 4);
    }

    #[test]
    fn all_off_is_identity() {
        let batch = vec![probe(4, 4), probe(4, 4)];
        let out = augment_batch(&batch, &AugmentationPolicy::off(), None, None, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(out, batch);
    }

    #[test]
    fn style_without_stylizer_is_config_error() {
        let policy = AugmentationPolicy {
            style_enabled: true,
            ..AugmentationPolicy::off()
        };
        let err = augment_batch(&[probe(8, 8)], &policy, None, None, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn invalid_alpha_is_rejected() {
        let policy = AugmentationPolicy {
            alpha: 1.5,
            ..AugmentationPolicy::off()
        };
        assert!(augment_batch(&[probe(4, 4)], &policy, None, None, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }
}
