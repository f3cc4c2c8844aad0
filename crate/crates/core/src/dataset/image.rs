use std::collections::HashSet;
use std::fmt;

use ndarray::{Array2, Array3, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// RGB image, `H×W×3`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pixels: Array3<f64>,
}

impl Image {
    pub fn new(pixels: Array3<f64>) -> Result<Self> {
        let (h, w, c) = pixels.dim();
        if c != 3 || h == 0 || w == 0 {
            return Err(Error::arg(format!("image must be H×W×3, got {h}×{w}×{c}")));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::arg(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { pixels })
    }

    /// Builds an image from `f(row, col, channel)`, clamping into `[0, 1]`.
    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let pixels = Array3::from_shape_fn((height, width, 3), |(i, j, c)| f(i, j, c).clamp(0.0, 1.0));
        Self { pixels }
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Self::from_fn(height, width, |_, _, _| value)
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn pixels(&self) -> &Array3<f64> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array3<f64> {
        self.pixels
    }
}

/// Strictly binary `H×W` mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    pixels: Array2<u8>,
}

impl BinaryMask {
    pub fn new(pixels: Array2<u8>) -> Result<Self> {
        if pixels.iter().any(|&v| v > 1) {
            return Err(Error::arg("mask values must be 0 or 1"));
        }
        Ok(Self { pixels })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            pixels: Array2::zeros((height, width)),
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        Self {
            pixels: Array2::from_shape_fn((height, width), |(i, j)| f(i, j) as u8),
        }
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn pixels(&self) -> &Array2<u8> {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.pixels[[row, col]] == 1
    }

    pub fn count_ones(&self) -> usize {
        self.pixels.iter().filter(|&&v| v == 1).count()
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.count_ones() as f64 / self.pixels.len().max(1) as f64
    }
}

/// An image paired with its mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub mask: BinaryMask,
    pub id: String,
}

impl Sample {
    pub fn new(image: Image, mask: BinaryMask, id: impl Into<String>) -> Result<Self> {
        if image.height() != mask.height() || image.width() != mask.width() {
            return Err(Error::arg(format!(
                "image {}×{} and mask {}×{} differ",
                image.height(),
                image.width(),
                mask.height(),
                mask.width()
            )));
        }
        Ok(Self {
            image,
            mask,
            id: id.into(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::arg(format!("unknown split tag {other:?}"))),
        }
    }
}

/// Ordered samples sharing a split tag. Ids are unique.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    split: Split,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, split: Split) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::arg(format!("duplicate sample id {:?}", s.id)));
            }
        }
        Ok(Self { samples, split })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.id.clone()).collect()
    }
}

/// Stacks images into an `N×3×H×W` tensor. All images must share a size.
pub fn images_to_tensor<'a>(images: impl IntoIterator<Item = &'a Image>) -> Tensor {
    let images: Vec<&Image> = images.into_iter().collect();
    assert!(!images.is_empty(), "empty image batch");
    let (h, w) = (images[0].height(), images[0].width());
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in &images {
        assert_eq!((img.height(), img.width()), (h, w), "batch images differ in size");
        for c in 0..3 {
            for i in 0..h {
                for j in 0..w {
                    data.push(img.pixels[[i, j, c]]);
                }
            }
        }
    }
    ArrayD::from_shape_vec(IxDyn(&[images.len(), 3, h, w]), data).expect("batch shape")
}

/// Inverse of [`images_to_tensor`] for sample `n`; values are clamped into `[0, 1]`.
pub fn tensor_to_image(t: &Tensor, n: usize) -> Image {
    let s = t.shape();
    assert!(s.len() == 4 && s[1] == 3, "expected N×3×H×W");
    let (h, w) = (s[2], s[3]);
    Image::from_fn(h, w, |i, j, c| t[[n, c, i, j]])
}

/// Stacks masks into an `N×1×H×W` tensor of 0.0/1.0.
pub fn masks_to_tensor<'a>(masks: impl IntoIterator<Item = &'a BinaryMask>) -> Tensor {
    let masks: Vec<&BinaryMask> = masks.into_iter().collect();
    assert!(!masks.is_empty(), "empty mask batch");
    let (h, w) = (masks[0].height(), masks[0].width());
    let mut data = Vec::with_capacity(masks.len() * h * w);
    for m in &masks {
        assert_eq!((m.height(), m.width()), (h, w), "batch masks differ in size");
        data.extend(m.pixels.iter().map(|&v| v as f64));
    }
    ArrayD::from_shape_vec(IxDyn(&[masks.len(), 1, h, w]), data).expect("batch shape")
}
