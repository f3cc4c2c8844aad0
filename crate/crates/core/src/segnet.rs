//! Compact UNeXt-style segmentation network.
//!
//! Five encoder stages: the first `5 - mlp_stages` are convolutional (3×3
//! convolution + ReLU, max-pooled on entry except for the first stage), the
//! remaining ones are tokenized-MLP stages (stride-2 overlapping patch
//! embedding, channel layer norm, residual token MLP). The decoder mirrors the
//! encoder with additive skip connections and ends in a 1×1 convolution to a
//! single logit map. Dropout follows every encoder and decoder stage.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::dataset::{images_to_tensor, Image};
use crate::error::{Error, Result};
use crate::nn::{Graph, ParamId, ParamStore, Tensor, Var};

pub const NUM_STAGES: usize = 5;
const CHECKPOINT_KIND: &str = "segnet-checkpoint";
const HEAD_GAIN: f64 = 1.0;

/// Latent block variant used by the MLP stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenBlock {
    /// Pre-norm residual MLP applied to every token independently.
    #[default]
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegNetConfig {
    pub stage_channels: [usize; NUM_STAGES],
    pub mlp_stages: usize,
    pub dropout_rate: f64,
    pub input_channels: usize,
    pub output_channels: usize,
    /// Hidden width multiplier of the token MLP.
    pub mlp_ratio: usize,
    #[serde(default)]
    pub token_block: TokenBlock,
    pub seed: u64,
}

impl SegNetConfig {
    pub fn full() -> Self {
        Self {
            stage_channels: [32, 64, 128, 160, 256],
            mlp_stages: 2,
            dropout_rate: 0.10,
            input_channels: 3,
            output_channels: 1,
            mlp_ratio: 1,
            token_block: TokenBlock::Plain,
            seed: 0,
        }
    }

    pub fn tiny() -> Self {
        Self {
            stage_channels: [8, 16, 32, 48, 64],
            ..Self::full()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Config(format!("unknown preset {other:?} (expected tiny or full)"))),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate = {} must lie in [0, 1)",
                self.dropout_rate
            )));
        }
        if self.stage_channels.contains(&0) {
            return Err(Error::Config("stage_channels must be positive".into()));
        }
        if self.mlp_stages >= NUM_STAGES {
            return Err(Error::Config(format!(
                "mlp_stages = {} leaves no convolutional stage",
                self.mlp_stages
            )));
        }
        if self.input_channels != 3 || self.output_channels != 1 {
            return Err(Error::Config("only 3 input channels and 1 output channel are supported".into()));
        }
        if self.mlp_ratio == 0 {
            return Err(Error::Config("mlp_ratio must be positive".into()));
        }
        Ok(())
    }

    /// Input sides must be multiples of this.
    pub fn required_multiple(&self) -> usize {
        1 << (NUM_STAGES - 1)
    }

    fn is_mlp_stage(&self, stage: usize) -> bool {
        stage >= NUM_STAGES - self.mlp_stages
    }
}

/// How dropout behaves in a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForwardMode {
    Train,
    Eval,
    McDropout,
}

#[derive(Debug, Clone, Copy)]
struct ConvIds {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct NormIds {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct TokenMlpIds {
    norm: NormIds,
    fc1: ConvIds,
    fc2: ConvIds,
    out_norm: NormIds,
}

#[derive(Debug, Clone)]
enum EncoderStage {
    Conv(ConvIds, NormIds),
    Mlp { embed: ConvIds, embed_norm: NormIds, block: TokenMlpIds },
}

#[derive(Debug, Clone)]
struct DecoderStage {
    conv: ConvIds,
    norm: NormIds,
    block: Option<TokenMlpIds>,
}

#[derive(Debug, Clone)]
struct Layout {
    encoder: Vec<EncoderStage>,
    /// `decoder[i]` maps stage `i + 1` back to the resolution of stage `i`.
    decoder: Vec<DecoderStage>,
    head: ConvIds,
}

/// Network parameters plus configuration.
#[derive(Debug, Clone)]
pub struct Model {
    config: SegNetConfig,
    params: ParamStore,
    layout: Layout,
}

fn conv_ids(p: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize, rng: &mut ChaCha8Rng) -> ConvIds {
    conv_ids_gain(p, name, cin, cout, k, 2.0, rng)
}

fn conv_ids_gain(
    p: &mut ParamStore,
    name: &str,
    cin: usize,
    cout: usize,
    k: usize,
    gain: f64,
    rng: &mut ChaCha8Rng,
) -> ConvIds {
    ConvIds {
        w: p.add_normal(format!("{name}.w"), &[cout, cin, k, k], cin * k * k, gain, rng),
        b: p.add_constant(format!("{name}.b"), &[cout], 0.0),
    }
}

fn norm_ids(p: &mut ParamStore, name: &str, c: usize) -> NormIds {
    NormIds {
        gamma: p.add_constant(format!("{name}.gamma"), &[c], 1.0),
        beta: p.add_constant(format!("{name}.beta"), &[c], 0.0),
    }
}

fn token_mlp_ids(p: &mut ParamStore, name: &str, c: usize, ratio: usize, rng: &mut ChaCha8Rng) -> TokenMlpIds {
    TokenMlpIds {
        norm: norm_ids(p, &format!("{name}.norm"), c),
        fc1: conv_ids(p, &format!("{name}.fc1"), c, c * ratio, 1, rng),
        fc2: conv_ids(p, &format!("{name}.fc2"), c * ratio, c, 1, rng),
        out_norm: norm_ids(p, &format!("{name}.out_norm"), c),
    }
}

/// Seeded construction of a [`Model`].
pub fn build_model(config: &SegNetConfig) -> Result<Model> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut p = ParamStore::new();
    let ch = config.stage_channels;
    let mut encoder = Vec::with_capacity(NUM_STAGES);
    for s in 0..NUM_STAGES {
        let cin = if s == 0 { config.input_channels } else { ch[s - 1] };
        let name = format!("encoder{s}");
        if config.is_mlp_stage(s) {
            encoder.push(EncoderStage::Mlp {
                embed: conv_ids(&mut p, &format!("{name}.embed"), cin, ch[s], 3, &mut rng),
                embed_norm: norm_ids(&mut p, &format!("{name}.embed_norm"), ch[s]),
                block: token_mlp_ids(&mut p, &format!("{name}.block"), ch[s], config.mlp_ratio, &mut rng),
            });
        } else {
            encoder.push(EncoderStage::Conv(
                conv_ids(&mut p, &format!("{name}.conv"), cin, ch[s], 3, &mut rng),
                norm_ids(&mut p, &format!("{name}.norm"), ch[s]),
            ));
        }
    }
    let mut decoder = Vec::with_capacity(NUM_STAGES - 1);
    for s in 0..NUM_STAGES - 1 {
        let name = format!("decoder{s}");
        decoder.push(DecoderStage {
            conv: conv_ids(&mut p, &format!("{name}.conv"), ch[s + 1], ch[s], 3, &mut rng),
            norm: norm_ids(&mut p, &format!("{name}.norm"), ch[s]),
            block: config
                .is_mlp_stage(s)
                .then(|| token_mlp_ids(&mut p, &format!("{name}.block"), ch[s], config.mlp_ratio, &mut rng)),
        });
    }
    // small head so initial logits sit near zero
    let head = conv_ids_gain(&mut p, "head", ch[0], config.output_channels, 1, HEAD_GAIN, &mut rng);
    Ok(Model {
        config: config.clone(),
        params: p,
        layout: Layout { encoder, decoder, head },
    })
}

/// Sum of all parameter tensor sizes.
pub fn count_parameters(model: &Model) -> usize {
    model.params.count()
}

/// Checkpoint contents besides the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: SegNetConfig,
    pub epoch: usize,
    pub best_val_iou: f64,
    pub parameter_count: usize,
}

impl Model {
    pub fn config(&self) -> &SegNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn check_input(&self, height: usize, width: usize) -> Result<()> {
        let m = self.config.required_multiple();
        if height == 0 || width == 0 || height % m != 0 || width % m != 0 {
            return Err(Error::arg(format!(
                "input {height}×{width} must have sides divisible by {m}"
            )));
        }
        Ok(())
    }

    fn conv(&self, g: &mut Graph, x: Var, c: ConvIds, stride: usize, pad: usize) -> Var {
        let w = g.param(&self.params, c.w);
        let b = g.param(&self.params, c.b);
        g.conv2d(x, w, Some(b), stride, pad)
    }

    fn norm(&self, g: &mut Graph, x: Var, n: NormIds) -> Var {
        let gamma = g.param(&self.params, n.gamma);
        let beta = g.param(&self.params, n.beta);
        g.layer_norm_channels(x, gamma, beta)
    }

    fn token_mlp<R: Rng>(&self, g: &mut Graph, x: Var, ids: TokenMlpIds, rng: &mut Option<&mut R>) -> Var {
        let rate = self.config.dropout_rate;
        let h = self.norm(g, x, ids.norm);
        let h = self.conv(g, h, ids.fc1, 1, 0);
        let h = g.gelu(h);
        let h = g.dropout(h, rate, rng.as_deref_mut());
        let h = self.conv(g, h, ids.fc2, 1, 0);
        let y = g.add(x, h);
        self.norm(g, y, ids.out_norm)
    }

    /// Builds the forward pass on `g`; `x` is `N×3×H×W`, the result `N×1×H×W` logits.
    /// Dropout is active iff `dropout_rng` is given.
    pub fn forward_graph<R: Rng>(&self, g: &mut Graph, x: Var, mut dropout_rng: Option<&mut R>) -> Result<Var> {
        let shape = g.value(x).shape().to_vec();
        if shape.len() != 4 || shape[1] != self.config.input_channels {
            return Err(Error::arg(format!("expected N×3×H×W input, got {shape:?}")));
        }
        self.check_input(shape[2], shape[3])?;
        let rate = self.config.dropout_rate;
        let mut skips = Vec::with_capacity(NUM_STAGES);
        let mut h = x;
        for (s, stage) in self.layout.encoder.iter().enumerate() {
            h = match stage {
                EncoderStage::Conv(c, n) => {
                    let input = if s == 0 { h } else { g.max_pool2(h) };
                    let y = self.conv(g, input, *c, 1, 1);
                    let y = self.norm(g, y, *n);
                    g.relu(y)
                }
                EncoderStage::Mlp { embed, embed_norm, block } => {
                    let y = self.conv(g, h, *embed, 2, 1);
                    let y = self.norm(g, y, *embed_norm);
                    self.token_mlp(g, y, *block, &mut dropout_rng)
                }
            };
            h = g.dropout(h, rate, dropout_rng.as_deref_mut());
            skips.push(h);
        }
        for s in (0..NUM_STAGES - 1).rev() {
            let stage = &self.layout.decoder[s];
            let y = self.conv(g, h, stage.conv, 1, 1);
            let y = self.norm(g, y, stage.norm);
            let y = g.upsample2(y);
            let y = g.add(y, skips[s]);
            let mut y = g.relu(y);
            if let Some(block) = stage.block {
                y = self.token_mlp(g, y, block, &mut dropout_rng);
            }
            h = g.dropout(y, rate, dropout_rng.as_deref_mut());
        }
        Ok(self.conv(g, h, self.layout.head, 1, 0))
    }

    /// Logits for a batch tensor. `rng` drives dropout in train and mc-dropout modes.
    pub fn forward_tensor<R: Rng>(&self, images: Tensor, mode: ForwardMode, rng: &mut R) -> Result<Tensor> {
        let mut g = Graph::inference();
        let x = g.input(images);
        let out = match mode {
            ForwardMode::Eval => self.forward_graph::<R>(&mut g, x, None)?,
            ForwardMode::Train | ForwardMode::McDropout => self.forward_graph(&mut g, x, Some(rng))?,
        };
        Ok(g.value(out).clone())
    }

    pub fn save_checkpoint(&self, path: &Path, epoch: usize, best_val_iou: f64) -> Result<()> {
        let meta = CheckpointMeta {
            config: self.config.clone(),
            epoch,
            best_val_iou,
            parameter_count: count_parameters(self),
        };
        container::write(path, CHECKPOINT_KIND, serde_json::to_value(meta)?, &self.params)
    }

    pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointMeta)> {
        let (manifest, store) = container::read(path, CHECKPOINT_KIND)?;
        let bad = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        let meta: CheckpointMeta =
            serde_json::from_value(manifest.meta).map_err(|e| bad(format!("metadata: {e}")))?;
        let mut model = build_model(&meta.config)?;
        model.params.load_from(&store).map_err(bad)?;
        Ok((model, meta))
    }
}

/// Logits (`N` maps of `H×W`) for a batch of images.
pub fn forward<R: Rng>(model: &Model, images: &[&Image], mode: ForwardMode, rng: &mut R) -> Result<Vec<ndarray::Array2<f64>>> {
    if images.is_empty() {
        return Ok(Vec::new());
    }
    let (h, w) = (images[0].height(), images[0].width());
    if images.iter().any(|i| (i.height(), i.width()) != (h, w)) {
        return Err(Error::arg("batch images differ in size"));
    }
    let out = model.forward_tensor(images_to_tensor(images.iter().copied()), mode, rng)?;
    Ok((0..images.len())
        .map(|n| out.slice(ndarray::s![n, 0, .., ..]).to_owned())
        .collect())
}

/// Outcome of comparing analytic parameter gradients with central differences.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradientCheck {
    /// Coordinates compared.
    pub checked: usize,
    /// Largest per-coordinate relative error.
    pub max_relative_error: f64,
    /// Parameter tensor and flat index of the worst coordinate.
    pub worst: (String, usize),
}

/// Checks gradients of the segmentation loss (dropout off) w.r.t. `per_tensor`
/// seeded coordinates of every parameter tensor. Relative error is
/// `|a - n| / max(|a|, |n|, floor)` with `floor` guarding vanishing gradients.
pub fn gradient_check(
    model: &Model,
    images: &Tensor,
    masks: &Tensor,
    per_tensor: usize,
    step: f64,
    floor: f64,
    seed: u64,
) -> Result<GradientCheck> {
    let loss_of = |m: &Model| -> Result<(Graph, Var)> {
        let mut g = Graph::new();
        let x = g.input(images.clone());
        let logits = m.forward_graph::<ChaCha8Rng>(&mut g, x, None)?;
        let loss = g.seg_loss(logits, masks.clone(), 0.5, 1.0);
        Ok((g, loss))
    };
    let (g, loss) = loss_of(model)?;
    let grads = g.backward(loss).params(&g, model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = model.clone();
    let mut report = GradientCheck {
        checked: 0,
        max_relative_error: 0.0,
        worst: (String::new(), 0),
    };
    for id in model.params().ids().collect::<Vec<_>>() {
        let len = model.params().get(id).len();
        let analytic = grads[id.index()].clone().unwrap_or_else(|| Tensor::zeros(model.params().get(id).raw_dim()));
        for _ in 0..per_tensor.min(len) {
            let k = rng.gen_range(0..len);
            let original = model.params().get(id).as_slice().expect("contiguous")[k];
            let mut eval_at = |v: f64| -> Result<f64> {
                probe.params_mut().get_mut(id).as_slice_mut().expect("contiguous")[k] = v;
                let (g, l) = loss_of(&probe)?;
                Ok(g.value(l).iter().next().copied().unwrap_or(f64::NAN))
            };
            let numeric = (eval_at(original + step)? - eval_at(original - step)?) / (2.0 * step);
            eval_at(original)?;
            let a = analytic.as_slice().expect("contiguous")[k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            report.checked += 1;
            if err > report.max_relative_error || err.is_nan() {
                report.max_relative_error = err;
                report.worst = (model.params().name(id).to_string(), k);
            }
        }
    }
    Ok(report)
}
