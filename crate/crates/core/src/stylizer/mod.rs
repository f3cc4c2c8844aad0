//! Arbitrary style transfer with an embedding-space prior.
//!
//! A strided-convolution predictor maps an image to a style embedding; a
//! renderer re-draws the image through instance-normalised convolutions whose
//! per-channel scale and shift are affine functions of that embedding. Feeding
//! the renderer the image's own embedding reconstructs it; feeding it a blend
//! with a random draw from a [`StylePrior`] restyles it without touching the
//! geometry.

mod prior;

use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use prior::{blend_embeddings, sample_style_embedding, StyleEmbedding, StylePrior};

use crate::container;
use crate::dataset::{images_to_tensor, tensor_to_image, Image};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Graph, ParamId, ParamStore, Var};

/// Smallest image side the predictor accepts.
pub const MIN_PREDICTOR_SIDE: usize = 8;

const KIND: &str = "stylizer";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StylizerConfig {
    /// Embedding dimension.
    pub dim: usize,
    /// Widths of the three stride-2 predictor convolutions.
    pub predictor_channels: [usize; 3],
    /// Width of the renderer's hidden layers.
    pub renderer_channels: usize,
    pub seed: u64,
}

impl Default for StylizerConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            predictor_channels: [16, 32, 64],
            renderer_channels: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            steps: 600,
            batch: 4,
            learning_rate: 3e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Cin {
    scale_w: ParamId,
    scale_b: ParamId,
    shift_w: ParamId,
    shift_b: ParamId,
}

#[derive(Debug, Clone)]
struct Layout {
    predictor: [Conv; 3],
    head_w: ParamId,
    head_b: ParamId,
    render: [Conv; 3],
    cin: [Cin; 2],
}

/// Predictor + renderer parameters.
#[derive(Debug, Clone)]
pub struct Stylizer {
    config: StylizerConfig,
    params: ParamStore,
    layout: Layout,
}

fn conv_params(store: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Conv {
    Conv {
        w: store.add_normal(format!("{name}.w"), &[cout, cin, 3, 3], cin * 9, 2.0, rng),
        b: store.add_constant(format!("{name}.b"), &[cout], 0.0),
    }
}

impl Stylizer {
    /// Seeded initialisation.
    pub fn new(config: StylizerConfig) -> Result<Self> {
        if config.dim == 0 || config.renderer_channels == 0 || config.predictor_channels.contains(&0) {
            return Err(Error::arg("stylizer widths and dimension must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut p = ParamStore::new();
        let [c1, c2, c3] = config.predictor_channels;
        let predictor = [
            conv_params(&mut p, "predictor.conv0", 3, c1, &mut rng),
            conv_params(&mut p, "predictor.conv1", c1, c2, &mut rng),
            conv_params(&mut p, "predictor.conv2", c2, c3, &mut rng),
        ];
        let d = config.dim;
        let head_w = p.add_normal("predictor.head.w", &[d, c3], c3, 1.0, &mut rng);
        let head_b = p.add_constant("predictor.head.b", &[d], 0.0);
        let k = config.renderer_channels;
        let render = [
            conv_params(&mut p, "renderer.conv0", 3, k, &mut rng),
            conv_params(&mut p, "renderer.conv1", k, k, &mut rng),
            conv_params(&mut p, "renderer.conv2", k, 3, &mut rng),
        ];
        let mut cin = |name: &str, rng: &mut ChaCha8Rng| Cin {
            scale_w: p.add_normal(format!("{name}.scale.w"), &[k, d], d, 0.01, rng),
            scale_b: p.add_constant(format!("{name}.scale.b"), &[k], 1.0),
            shift_w: p.add_normal(format!("{name}.shift.w"), &[k, d], d, 0.01, rng),
            shift_b: p.add_constant(format!("{name}.shift.b"), &[k], 0.0),
        };
        let cin = [cin("renderer.cin0", &mut rng), cin("renderer.cin1", &mut rng)];
        Ok(Self {
            config,
            params: p,
            layout: Layout {
                predictor,
                head_w,
                head_b,
                render,
                cin,
            },
        })
    }

    pub fn config(&self) -> &StylizerConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    fn conv(&self, g: &mut Graph, x: Var, c: Conv, stride: usize) -> Var {
        let w = g.param(&self.params, c.w);
        let b = g.param(&self.params, c.b);
        g.conv2d(x, w, Some(b), stride, 1)
    }

    /// `(N, 3, H, W) -> (N, dim)`.
    fn predict_graph(&self, g: &mut Graph, x: Var) -> Var {
        let mut h = x;
        for c in self.layout.predictor {
            let y = self.conv(g, h, c, 2);
            h = g.relu(y);
        }
        let pooled = g.global_avg_pool(h);
        let w = g.param(&self.params, self.layout.head_w);
        let b = g.param(&self.params, self.layout.head_b);
        g.linear(pooled, w, b)
    }

    fn conditional_norm(&self, g: &mut Graph, x: Var, z: Var, c: Cin) -> Var {
        let normed = g.instance_norm(x);
        let sw = g.param(&self.params, c.scale_w);
        let sb = g.param(&self.params, c.scale_b);
        let scale = g.linear(z, sw, sb);
        let tw = g.param(&self.params, c.shift_w);
        let tb = g.param(&self.params, c.shift_b);
        let shift = g.linear(z, tw, tb);
        g.channel_affine(normed, scale, shift)
    }

    /// `(N, 3, H, W)` images and `(N, dim)` embeddings to `(N, 3, H, W)` in `(0, 1)`.
    fn render_graph(&self, g: &mut Graph, x: Var, z: Var) -> Var {
        let [c0, c1, c2] = self.layout.render;
        let h = self.conv(g, x, c0, 1);
        let h = self.conditional_norm(g, h, z, self.layout.cin[0]);
        let h = g.relu(h);
        let h = self.conv(g, h, c1, 1);
        let h = self.conditional_norm(g, h, z, self.layout.cin[1]);
        let h = g.relu(h);
        let out = self.conv(g, h, c2, 1);
        g.sigmoid(out)
    }

    fn check_size(image: &Image) -> Result<()> {
        if image.height() < MIN_PREDICTOR_SIDE || image.width() < MIN_PREDICTOR_SIDE {
            return Err(Error::arg(format!(
                "image {}×{} is below the predictor minimum of {MIN_PREDICTOR_SIDE}×{MIN_PREDICTOR_SIDE}",
                image.height(),
                image.width()
            )));
        }
        Ok(())
    }

    /// Style embeddings of a batch of equally sized images.
    pub fn predict_batch(&self, images: &[&Image]) -> Result<Vec<StyleEmbedding>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        for img in images {
            Self::check_size(img)?;
        }
        let mut g = Graph::inference();
        let x = g.input(images_to_tensor(images.iter().copied()));
        let z = self.predict_graph(&mut g, x);
        let zv = g.value(z);
        (0..images.len())
            .map(|n| StyleEmbedding::new(zv.index_axis(ndarray::Axis(0), n).iter().copied().collect()))
            .collect()
    }

    /// Renders each image with its paired embedding.
    pub fn stylize_batch(&self, images: &[&Image], embeddings: &[&StyleEmbedding]) -> Result<Vec<Image>> {
        if images.len() != embeddings.len() {
            return Err(Error::arg("one embedding per image is required"));
        }
        if images.is_empty() {
            return Ok(Vec::new());
        }
        if let Some(e) = embeddings.iter().find(|e| e.dim() != self.dim()) {
            return Err(Error::arg(format!(
                "embedding dimension {} does not match stylizer dimension {}",
                e.dim(),
                self.dim()
            )));
        }
        let mut zdata = Vec::with_capacity(images.len() * self.dim());
        for e in embeddings {
            zdata.extend_from_slice(e.values());
        }
        let mut g = Graph::inference();
        let x = g.input(images_to_tensor(images.iter().copied()));
        let z = g.input(ArrayD::from_shape_vec(IxDyn(&[images.len(), self.dim()]), zdata).expect("embedding batch"));
        let y = self.render_graph(&mut g, x, z);
        Ok((0..images.len()).map(|n| tensor_to_image(g.value(y), n)).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({ "dim": self.config.dim, "config": self.config });
        container::write(path, KIND, meta, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (manifest, store) = container::read(path, KIND)?;
        let bad = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        let config: StylizerConfig = serde_json::from_value(manifest.meta["config"].clone())
            .map_err(|e| bad(format!("config: {e}")))?;
        let mut s = Self::new(config)?;
        s.params.load_from(&store).map_err(bad)?;
        Ok(s)
    }
}

/// Deterministic style embedding of one image.
pub fn predict_style_embedding(stylizer: &Stylizer, image: &Image) -> Result<StyleEmbedding> {
    Ok(stylizer.predict_batch(&[image])?.remove(0))
}

/// Renders `image` in the style given by `embedding`; same shape, values in `[0, 1]`.
pub fn stylize_image(stylizer: &Stylizer, image: &Image, embedding: &StyleEmbedding) -> Result<Image> {
    Ok(stylizer.stylize_batch(&[image], &[embedding])?.remove(0))
}

/// Output of [`calibrate_stylizer`].
#[derive(Debug, Clone)]
pub struct Calibration {
    pub stylizer: Stylizer,
    /// Mean-squared reconstruction error per step.
    pub loss_history: Vec<f64>,
}

/// Trains predictor and renderer jointly on self-reconstruction:
/// `render(x, predict(x)) ≈ x` in mean squared error.
pub fn calibrate_stylizer(
    images: &[Image],
    stylizer_config: &StylizerConfig,
    config: &CalibrationConfig,
) -> Result<Calibration> {
    if images.is_empty() {
        return Err(Error::arg("calibration needs at least one image"));
    }
    if config.batch == 0 {
        return Err(Error::arg("calibration batch must be positive"));
    }
    for img in images {
        Stylizer::check_size(img)?;
    }
    let mut stylizer = Stylizer::new(stylizer_config.clone())?;
    let mut opt = Adam::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
        &stylizer.params,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut cursor = order.len();
    let mut history = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let mut batch = Vec::with_capacity(config.batch);
        while batch.len() < config.batch.min(images.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&images[order[cursor]]);
            cursor += 1;
        }
        let target = images_to_tensor(batch.iter().copied());
        let mut g = Graph::new();
        let x = g.input(target.clone());
        let z = stylizer.predict_graph(&mut g, x);
        let y = stylizer.render_graph(&mut g, x, z);
        let loss = g.mse_loss(y, target);
        let value = g.value(loss).iter().next().copied().unwrap_or(f64::NAN);
        if !value.is_finite() {
            return Err(Error::Divergence {
                epoch: history.len(),
                loss: value,
            });
        }
        history.push(value);
        let grads = g.backward(loss).params(&g, &stylizer.params);
        opt.step(&mut stylizer.params, &grads);
    }
    Ok(Calibration {
        stylizer,
        loss_history: history,
    })
}

/// Peak signal-to-noise ratio in dB for images in `[0, 1]`.
pub fn psnr(a: &Image, b: &Image) -> f64 {
    assert_eq!(a.pixels().dim(), b.pixels().dim(), "psnr needs equal shapes");
    let mse = a
        .pixels()
        .iter()
        .zip(b.pixels().iter())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / a.pixels().len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// Mean PSNR of self-embedding reconstructions.
pub fn reconstruction_psnr(stylizer: &Stylizer, images: &[Image]) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::arg("no images to reconstruct"));
    }
    let mut total = 0.0;
    for chunk in images.chunks(8) {
        let refs: Vec<&Image> = chunk.iter().collect();
        let z = stylizer.predict_batch(&refs)?;
        let zr: Vec<&StyleEmbedding> = z.iter().collect();
        let out = stylizer.stylize_batch(&refs, &zr)?;
        total += chunk.iter().zip(&out).map(|(a, b)| psnr(a, b)).sum::<f64>();
    }
    Ok(total / images.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticSpec};

    fn small_config() -> StylizerConfig {
        StylizerConfig {
            dim: 8,
            predictor_channels: [4, 8, 8],
            renderer_channels: 6,
            seed: 3,
        }
    }

    fn images() -> Vec<Image> {
        let spec = SyntheticSpec {
            image_size: 16,
            n_train: 4,
            n_val: 0,
            n_test: 2,
            ..SyntheticSpec::default()
        };
        generate_synthetic(&spec).unwrap().train.into_samples().into_iter().map(|s| s.image).collect()
    }

    #[test]
    fn shapes_and_determinism() {
        let s = Stylizer::new(small_config()).unwrap();
        let imgs = images();
        let z = predict_style_embedding(&s, &imgs[0]).unwrap();
        assert_eq!(z.dim(), 8);
        assert_eq!(predict_style_embedding(&s, &imgs[0]).unwrap(), z);
        let out = stylize_image(&s, &imgs[0], &z).unwrap();
        assert_eq!(out.pixels().dim(), imgs[0].pixels().dim());
        assert_eq!(stylize_image(&s, &imgs[0], &z).unwrap(), out);
        assert!(out.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn non_square_images_keep_shape() {
        let s = Stylizer::new(small_config()).unwrap();
        let img = Image::from_fn(12, 20, |i, j, c| ((i + 2 * j + c) % 5) as f64 / 4.0);
        let z = predict_style_embedding(&s, &img).unwrap();
        assert_eq!(stylize_image(&s, &img, &z).unwrap().pixels().dim(), (12, 20, 3));
    }

    #[test]
    fn argument_errors() {
        let s = Stylizer::new(small_config()).unwrap();
        assert!(predict_style_embedding(&s, &Image::constant(7, 16, 0.5)).is_err());
        let wrong = StyleEmbedding::new(vec![0.0; 5]).unwrap();
        assert!(stylize_image(&s, &Image::constant(16, 16, 0.5), &wrong).is_err());
        assert!(calibrate_stylizer(&[], &small_config(), &CalibrationConfig::default()).is_err());
    }

    #[test]
    fn zero_steps_returns_initialisation() {
        let cfg = CalibrationConfig {
            steps: 0,
            ..CalibrationConfig::default()
        };
        let cal = calibrate_stylizer(&images(), &small_config(), &cfg).unwrap();
        assert_eq!(cal.stylizer.params(), Stylizer::new(small_config()).unwrap().params());
        assert!(cal.loss_history.is_empty());
    }

    #[test]
    fn calibration_is_deterministic_and_improves() {
        let cfg = CalibrationConfig {
            steps: 30,
            batch: 2,
            learning_rate: 3e-3,
            seed: 1,
        };
        let a = calibrate_stylizer(&images(), &small_config(), &cfg).unwrap();
        let b = calibrate_stylizer(&images(), &small_config(), &cfg).unwrap();
        assert_eq!(a.stylizer.params(), b.stylizer.params());
        assert_eq!(a.loss_history, b.loss_history);
        assert!(a.loss_history.last().unwrap() <= a.loss_history.first().unwrap());
    }

    #[test]
    fn weights_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.weights");
        let s = Stylizer::new(small_config()).unwrap();
        s.save(&path).unwrap();
        let back = Stylizer::load(&path).unwrap();
        assert_eq!(back.params(), s.params());
        assert_eq!(back.config(), s.config());
    }
}
