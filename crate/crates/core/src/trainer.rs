//! Seeded training loop with per-batch augmentation and best-IoU checkpointing.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_batch, AugmentationPolicy};
use crate::dataset::{images_to_tensor, masks_to_tensor, BinaryMask, Dataset, Image, Sample};
use crate::error::{Error, Result};
use crate::evaluate::{binarize, iou, DEFAULT_THRESHOLD};
use crate::nn::{seg_loss, sigmoid, Adam, AdamConfig, Graph, Tensor};
use crate::segnet::{ForwardMode, Model};
use crate::stylizer::{StylePrior, Stylizer};

const VAL_BATCH: usize = 4;
const SHUFFLE_STREAM: u64 = 1;
const AUGMENT_STREAM: u64 = 2;
const DROPOUT_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub bce_weight: f64,
    pub dice_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            bce_weight: 0.5,
            dice_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: AdamConfig,
    pub loss_weights: LossWeights,
    pub policy: AugmentationPolicy,
    pub seed: u64,
    /// Validate every this many epochs; skipped epochs repeat the last values.
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            epochs: 2000,
            optimizer: AdamConfig::default(),
            loss_weights: LossWeights::default(),
            policy: AugmentationPolicy::default(),
            seed: 0,
            val_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.val_every == 0 {
            return Err(Error::Config("batch_size, epochs and val_every must be at least 1".into()));
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        self.policy.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_iou: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_iou: f64,
    /// `best.ckpt` inside the run directory, when one was given.
    pub checkpoint_path: Option<PathBuf>,
    /// Model with the best validation IoU.
    pub best_model: Model,
}

/// Weighted BCE + (1 - soft Dice) of a batch of logit maps.
pub fn compute_loss(logits: &[Array2<f64>], masks: &[BinaryMask], weights: LossWeights) -> Result<f64> {
    if logits.len() != masks.len() || logits.is_empty() {
        return Err(Error::arg(format!("{} logit maps for {} masks", logits.len(), masks.len())));
    }
    let mut l = Vec::new();
    let mut m = Vec::new();
    for (lg, mk) in logits.iter().zip(masks) {
        if lg.dim() != mk.pixels().dim() {
            return Err(Error::arg(format!("logits {:?} vs mask {:?}", lg.dim(), mk.pixels().dim())));
        }
        l.extend(lg.iter().copied());
        m.extend(mk.pixels().iter().map(|&v| f64::from(v)));
    }
    Ok(seg_loss(&l, &m, logits.len(), weights.bce_weight, weights.dice_weight, false).0)
}

fn logit_maps(t: &Tensor) -> Vec<Array2<f64>> {
    (0..t.shape()[0])
        .map(|n| t.slice(ndarray::s![n, 0, .., ..]).to_owned())
        .collect()
}

/// Deterministic eval-mode pass: mean per-sample loss and mean per-image IoU
/// at threshold 0.5.
pub fn validation_pass(model: &Model, val: &Dataset, weights: LossWeights) -> Result<(f64, f64)> {
    if val.is_empty() {
        return Err(Error::arg("validation set is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut loss, mut iou_sum) = (0.0, 0.0);
    for chunk in val.samples().chunks(VAL_BATCH) {
        let images = images_to_tensor(chunk.iter().map(|s| &s.image));
        let logits = logit_maps(&model.forward_tensor(images, ForwardMode::Eval, &mut rng)?);
        let masks: Vec<BinaryMask> = chunk.iter().map(|s| s.mask.clone()).collect();
        loss += compute_loss(&logits, &masks, weights)? * chunk.len() as f64;
        for (lg, s) in logits.iter().zip(chunk) {
            iou_sum += iou(&binarize(&lg.mapv(sigmoid), DEFAULT_THRESHOLD)?, &s.mask)?;
        }
    }
    let n = val.len() as f64;
    Ok((loss / n, iou_sum / n))
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

struct RunFiles {
    dir: PathBuf,
    history: csv::Writer<fs::File>,
}

impl RunFiles {
    fn create(dir: &Path, config: &TrainConfig) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cfg = dir.join("config.json");
        fs::write(&cfg, serde_json::to_string_pretty(config)?).map_err(|e| Error::io(&cfg, e))?;
        let path = dir.join("history.csv");
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            history: csv::Writer::from_writer(file),
        })
    }

    fn record(&mut self, r: &EpochRecord) -> Result<()> {
        self.history.serialize(r)?;
        let path = self.dir.join("history.csv");
        self.history.flush().map_err(|e| Error::io(&path, e))
    }
}

/// One optimisation step on a batch; returns the batch loss.
fn train_step(
    model: &mut Model,
    adam: &mut Adam,
    batch: &[Sample],
    weights: LossWeights,
    dropout_rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut g = Graph::new();
    let x = g.input(images_to_tensor(batch.iter().map(|s| &s.image)));
    let logits = model.forward_graph(&mut g, x, Some(dropout_rng))?;
    let masks = masks_to_tensor(batch.iter().map(|s| &s.mask));
    let loss = g.seg_loss(logits, masks, weights.bce_weight, weights.dice_weight);
    let value = g.value(loss)[[]];
    if !value.is_finite() {
        return Ok(value);
    }
    let grads = g.backward(loss).params(&g, model.params());
    adam.step(model.params_mut(), &grads);
    Ok(value)
}

/// Trains `model` in place. With `run_dir`, writes `config.json`,
/// `history.csv` (one row per epoch, flushed as it goes) and `best.ckpt`
/// (rewritten whenever the validation IoU strictly improves).
pub fn train(
    model: &mut Model,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
    stylizer: Option<&Stylizer>,
    prior: Option<&StylePrior>,
    run_dir: Option<&Path>,
) -> Result<TrainResult> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::arg("training set is empty"));
    }
    if val.is_empty() {
        return Err(Error::arg("validation set is empty"));
    }
    if config.policy.style_enabled && (stylizer.is_none() || prior.is_none()) {
        return Err(Error::Config("style augmentation needs a stylizer and a prior".into()));
    }
    if let Some(s) = train.samples().first() {
        model.check_input(s.image.height(), s.image.width())?;
    }
    let mut files = run_dir.map(|d| RunFiles::create(d, config)).transpose()?;
    let checkpoint_path = run_dir.map(|d| d.join("best.ckpt"));
    let mut adam = Adam::new(config.optimizer, model.params());
    let mut shuffle_rng = stream(config.seed, SHUFFLE_STREAM);
    let mut augment_rng = stream(config.seed, AUGMENT_STREAM);
    let mut dropout_rng = stream(config.seed, DROPOUT_STREAM);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best_model = model.clone();
    let (mut best_epoch, mut best_iou) = (0, f64::NEG_INFINITY);
    let mut last_val = (f64::NAN, 0.0);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<Sample> = idx.iter().map(|&i| train.samples()[i].clone()).collect();
            let batch = augment_batch(&batch, &config.policy, stylizer, prior, &mut augment_rng)?;
            let loss = train_step(model, &mut adam, &batch, config.loss_weights, &mut dropout_rng)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / train.len() as f64;
        if epoch == 1 || epoch % config.val_every == 0 || epoch == config.epochs {
            last_val = validation_pass(model, val, config.loss_weights)?;
            if !last_val.0.is_finite() {
                return Err(Error::Divergence { epoch, loss: last_val.0 });
            }
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss: last_val.0,
            val_iou: last_val.1,
        };
        log::debug!(
            "epoch {epoch}: train {:.4} val {:.4} iou {:.4}",
            record.train_loss,
            record.val_loss,
            record.val_iou
        );
        if record.val_iou > best_iou {
            best_iou = record.val_iou;
            best_epoch = epoch;
            best_model = model.clone();
            if let Some(path) = &checkpoint_path {
                model.save_checkpoint(path, epoch, best_iou)?;
            }
        }
        if let Some(f) = files.as_mut() {
            f.record(&record)?;
        }
        history.push(record);
    }
    Ok(TrainResult {
        history,
        best_epoch,
        best_val_iou: best_iou,
        checkpoint_path,
        best_model,
    })
}

/// Reads a `history.csv` written by [`train`].
pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let records = csv::Reader::from_reader(file)
        .deserialize()
        .collect::<std::result::Result<Vec<EpochRecord>, _>>()
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    Ok(records)
}

/// Images of a dataset, in order.
pub fn images(dataset: &Dataset) -> Vec<&Image> {
    dataset.samples().iter().map(|s| &s.image).collect()
}
