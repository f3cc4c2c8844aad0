//! Synthetic texture-shift datasets.
//!
//! Every image is an oriented sinusoid plus uniform noise (background band)
//! with ellipse-shaped foreground regions textured from the foreground band.
//! With `texture_shift`, test images take their texture parameters from
//! separate bands whose frequency ranges are disjoint from the training ones,
//! while the shape layout law is unchanged.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::{BinaryMask, Dataset, Image, Sample, Split};
use crate::error::{Error, Result};

/// Closed real interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn is_valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.gen_range(self.lo..=self.hi)
        }
    }
}

/// Texture law for one region type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextureBand {
    /// Sinusoid frequency in cycles per image width.
    pub frequency: Interval,
    /// Wave-vector orientation in radians.
    pub orientation: Interval,
    /// Half-width of the additive uniform noise.
    pub noise: f64,
    /// Base RGB colour.
    pub color: [f64; 3],
    /// Sinusoid amplitude.
    pub contrast: f64,
}

impl TextureBand {
    fn validate(&self, name: &str) -> Result<()> {
        if !self.frequency.is_valid() || self.frequency.lo < 0.0 {
            return Err(Error::arg(format!("{name}: invalid frequency range")));
        }
        if !self.orientation.is_valid() {
            return Err(Error::arg(format!("{name}: invalid orientation range")));
        }
        if !(self.noise >= 0.0 && self.contrast >= 0.0) {
            return Err(Error::arg(format!("{name}: noise and contrast must be non-negative")));
        }
        if self.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::arg(format!("{name}: colour channels must lie in [0, 1]")));
        }
        Ok(())
    }
}

/// Parameters of a synthetic train/val/test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub image_size: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Inclusive range of ellipse counts per image.
    pub shapes_per_image: (usize, usize),
    /// Semi-axis length range in pixels.
    pub ellipse_radius_range: Interval,
    pub background_band: TextureBand,
    pub foreground_band: TextureBand,
    /// Draw test textures from the shifted bands below.
    pub texture_shift: bool,
    pub shifted_background_band: TextureBand,
    pub shifted_foreground_band: TextureBand,
    /// Half-width of a per-image, per-channel colour offset shared by both
    /// regions (stain variation between slides).
    #[serde(default)]
    pub stain_jitter: f64,
    /// Per-channel colour offset added to every test image when
    /// `texture_shift` is set.
    #[serde(default)]
    pub shifted_stain: [f64; 3],
    /// Relative disagreement between annotated and imaged nucleus outlines:
    /// each imaged ellipse has its semi-axes scaled by `1 + U(-j, j)` and its
    /// centre moved by up to `j` times its minor semi-axis. Masks always
    /// follow the annotated ellipses.
    #[serde(default)]
    pub annotation_jitter: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            image_size: 64,
            n_train: 12,
            n_val: 16,
            n_test: 12,
            shapes_per_image: (3, 8),
            ellipse_radius_range: Interval::new(3.0, 8.0),
            background_band: TextureBand {
                frequency: Interval::new(2.0, 5.0),
                orientation: Interval::new(0.0, PI),
                noise: 0.2,
                color: [0.8, 0.6, 0.75],
                contrast: 0.12,
            },
            foreground_band: TextureBand {
                frequency: Interval::new(12.0, 16.0),
                orientation: Interval::new(0.0, PI),
                noise: 0.2,
                color: [0.55, 0.35, 0.6],
                contrast: 0.12,
            },
            texture_shift: true,
            shifted_background_band: TextureBand {
                frequency: Interval::new(8.0, 11.0),
                orientation: Interval::new(0.0, PI),
                noise: 0.2,
                color: [0.8, 0.6, 0.75],
                contrast: 0.12,
            },
            shifted_foreground_band: TextureBand {
                frequency: Interval::new(20.0, 26.0),
                orientation: Interval::new(0.0, PI),
                noise: 0.2,
                color: [0.55, 0.35, 0.6],
                contrast: 0.12,
            },
            stain_jitter: 0.25,
            shifted_stain: [-0.3, -0.2, 0.2],
            annotation_jitter: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < super::MIN_SIDE {
            return Err(Error::arg(format!(
                "image_size must be at least {}",
                super::MIN_SIDE
            )));
        }
        if self.shapes_per_image.0 > self.shapes_per_image.1 {
            return Err(Error::arg("shapes_per_image range is empty"));
        }
        if !self.ellipse_radius_range.is_valid() || self.ellipse_radius_range.lo <= 0.0 {
            return Err(Error::arg("ellipse_radius_range must be a positive interval"));
        }
        self.background_band.validate("background_band")?;
        self.foreground_band.validate("foreground_band")?;
        self.shifted_background_band.validate("shifted_background_band")?;
        self.shifted_foreground_band.validate("shifted_foreground_band")?;
        if !(0.0..=0.5).contains(&self.stain_jitter) || self.shifted_stain.iter().any(|v| !(-0.5..=0.5).contains(v)) {
            return Err(Error::arg("stain offsets must lie in [-0.5, 0.5]"));
        }
        if !(0.0..0.5).contains(&self.annotation_jitter) {
            return Err(Error::arg("annotation_jitter must lie in [0, 0.5)"));
        }
        if self.texture_shift {
            let pairs = [
                (&self.background_band, &self.shifted_background_band, "background"),
                (&self.foreground_band, &self.shifted_foreground_band, "foreground"),
            ];
            for (train, test, name) in pairs {
                if train.frequency.overlaps(&test.frequency) {
                    return Err(Error::arg(format!(
                        "texture_shift requires disjoint {name} frequency bands"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Texture bands used for a split: `(background, foreground)`.
    pub fn bands(&self, split: Split) -> (&TextureBand, &TextureBand) {
        if self.texture_shift && split == Split::Test {
            (&self.shifted_background_band, &self.shifted_foreground_band)
        } else {
            (&self.background_band, &self.foreground_band)
        }
    }

    fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            Split::Val => self.n_val,
            Split::Test => self.n_test,
        }
    }
}

/// Rotated ellipse in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub semi_major: f64,
    pub semi_minor: f64,
    pub angle: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.angle.sin_cos();
        let u = (dx * c + dy * s) / self.semi_major;
        let v = (-dx * s + dy * c) / self.semi_minor;
        u * u + v * v <= 1.0
    }
}

#[derive(Debug, Clone, Copy)]
enum Stream {
    Layout = 0,
    Texture = 1,
    Outline = 2,
}

fn split_code(split: Split) -> u64 {
    match split {
        Split::Train => 0,
        Split::Val => 1,
        Split::Test => 2,
    }
}

fn stream_rng(seed: u64, split: Split, index: usize, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((split_code(split) << 40) | ((index as u64) << 2) | stream as u64);
    rng
}

/// Ellipse layout of sample `index` in `split`; independent of the texture bands.
pub fn sample_layout(spec: &SyntheticSpec, split: Split, index: usize) -> Vec<Ellipse> {
    let mut rng = stream_rng(spec.seed, split, index, Stream::Layout);
    let (lo, hi) = spec.shapes_per_image;
    let n = rng.gen_range(lo..=hi);
    let size = spec.image_size as f64;
    (0..n)
        .map(|_| Ellipse {
            cx: rng.gen_range(0.0..size),
            cy: rng.gen_range(0.0..size),
            semi_major: spec.ellipse_radius_range.sample(&mut rng),
            semi_minor: spec.ellipse_radius_range.sample(&mut rng),
            angle: rng.gen_range(0.0..PI),
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
}

impl Wave {
    fn draw<R: Rng>(band: &TextureBand, size: f64, rng: &mut R) -> Self {
        let f = band.frequency.sample(rng);
        let theta = band.orientation.sample(rng);
        let k = 2.0 * PI * f / size;
        Self {
            kx: k * theta.cos(),
            ky: k * theta.sin(),
            phase: rng.gen_range(0.0..2.0 * PI),
        }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        (self.kx * x + self.ky * y + self.phase).sin()
    }
}

/// Ellipses as they appear in the image; equal to `layout` without jitter.
fn imaged_outlines(spec: &SyntheticSpec, split: Split, index: usize, layout: &[Ellipse]) -> Vec<Ellipse> {
    let j = spec.annotation_jitter;
    if j == 0.0 {
        return layout.to_vec();
    }
    let mut rng = stream_rng(spec.seed, split, index, Stream::Outline);
    layout
        .iter()
        .map(|e| {
            let shift = j * e.semi_minor;
            Ellipse {
                cx: e.cx + rng.gen_range(-shift..=shift),
                cy: e.cy + rng.gen_range(-shift..=shift),
                semi_major: e.semi_major * (1.0 + rng.gen_range(-j..=j)),
                semi_minor: e.semi_minor * (1.0 + rng.gen_range(-j..=j)),
                angle: e.angle,
            }
        })
        .collect()
}

fn render(spec: &SyntheticSpec, split: Split, index: usize, layout: &[Ellipse]) -> (Image, BinaryMask) {
    let size = spec.image_size;
    let (bg, fg) = spec.bands(split);
    let mut rng = stream_rng(spec.seed, split, index, Stream::Texture);
    let bg_wave = Wave::draw(bg, size as f64, &mut rng);
    let fg_wave = Wave::draw(fg, size as f64, &mut rng);
    let mut stain = [0.0; 3];
    for v in stain.iter_mut() {
        if spec.stain_jitter > 0.0 {
            *v = rng.gen_range(-spec.stain_jitter..=spec.stain_jitter);
        }
    }
    if spec.texture_shift && split == Split::Test {
        for (v, s) in stain.iter_mut().zip(spec.shifted_stain) {
            *v += s;
        }
    }
    let mask = BinaryMask::from_fn(size, size, |i, j| {
        let (x, y) = (j as f64 + 0.5, i as f64 + 0.5);
        layout.iter().any(|e| e.contains(x, y))
    });
    let imaged = imaged_outlines(spec, split, index, layout);
    let region = BinaryMask::from_fn(size, size, |i, j| {
        let (x, y) = (j as f64 + 0.5, i as f64 + 0.5);
        imaged.iter().any(|e| e.contains(x, y))
    });
    let mut values = vec![0.0; size * size * 3];
    for i in 0..size {
        for j in 0..size {
            let (x, y) = (j as f64 + 0.5, i as f64 + 0.5);
            let (band, wave) = if region.get(i, j) { (fg, &fg_wave) } else { (bg, &bg_wave) };
            let s = wave.at(x, y);
            for c in 0..3 {
                let noise = if band.noise > 0.0 {
                    rng.gen_range(-band.noise..=band.noise)
                } else {
                    0.0
                };
                values[(i * size + j) * 3 + c] = band.color[c] + stain[c] + band.contrast * s + noise;
            }
        }
    }
    let image = Image::from_fn(size, size, |i, j, c| values[(i * size + j) * 3 + c]);
    (image, mask)
}

/// Generated splits of a [`SyntheticSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSplits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

fn generate_split(spec: &SyntheticSpec, split: Split) -> Result<Dataset> {
    let samples = (0..spec.count(split))
        .map(|index| {
            let layout = sample_layout(spec, split, index);
            let (image, mask) = render(spec, split, index, &layout);
            Sample::new(image, mask, format!("{}_{index:04}", split.as_str()))
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, split)
}

/// Generates train, validation and test sets; fully determined by `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticSplits> {
    spec.validate()?;
    Ok(SyntheticSplits {
        train: generate_split(spec, Split::Train)?,
        val: generate_split(spec, Split::Val)?,
        test: generate_split(spec, Split::Test)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            image_size: 32,
            n_train: 3,
            n_val: 2,
            n_test: 3,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_shapes_give_empty_masks() {
        let spec = SyntheticSpec {
            shapes_per_image: (0, 0),
            ..small()
        };
        let s = generate_synthetic(&spec).unwrap();
        for d in [&s.train, &s.val, &s.test] {
            assert!(d.samples().iter().all(|x| x.mask.count_ones() == 0));
        }
    }

    #[test]
    fn overlapping_shift_bands_are_rejected() {
        let mut spec = small();
        spec.shifted_foreground_band.frequency = Interval::new(10.0, 13.0);
        assert!(spec.validate().is_err());
        spec.texture_shift = false;
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn layout_ignores_texture_bands() {
        let a = small();
        let mut b = small();
        b.background_band.frequency = Interval::new(30.0, 31.0);
        for i in 0..3 {
            assert_eq!(sample_layout(&a, Split::Test, i), sample_layout(&b, Split::Test, i));
        }
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&SyntheticSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(a.train, b.train);
    }
}
