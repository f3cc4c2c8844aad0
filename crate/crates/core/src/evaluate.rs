//! Binary segmentation metrics and Monte-Carlo dropout evaluation.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{images_to_tensor, BinaryMask, Dataset, Image};
use crate::error::{Error, Result};
use crate::nn::sigmoid;
use crate::segnet::{ForwardMode, Model};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_INSTANCES: usize = 20;
const EVAL_BATCH: usize = 4;

/// Pixel is foreground iff `p >= threshold`.
pub fn binarize(probabilities: &Array2<f64>, threshold: f64) -> Result<BinaryMask> {
    check_threshold(threshold)?;
    Ok(BinaryMask::new(probabilities.mapv(|p| u8::from(p >= threshold))).expect("0/1 values"))
}

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(Error::arg(format!("threshold = {threshold} must lie in (0, 1)")))
    }
}

/// `(|pred ∧ truth|, |pred|, |truth|)`.
fn counts(pred: &BinaryMask, truth: &BinaryMask) -> Result<(usize, usize, usize)> {
    if pred.pixels().dim() != truth.pixels().dim() {
        return Err(Error::arg(format!(
            "mask shapes differ: {:?} vs {:?}",
            pred.pixels().dim(),
            truth.pixels().dim()
        )));
    }
    let mut both = 0;
    for (&p, &t) in pred.pixels().iter().zip(truth.pixels()) {
        both += usize::from(p != 0 && t != 0);
    }
    Ok((both, pred.count_ones(), truth.count_ones()))
}

/// Intersection over union; 1.0 when both masks are empty.
pub fn iou(pred: &BinaryMask, truth: &BinaryMask) -> Result<f64> {
    let (i, p, t) = counts(pred, truth)?;
    let union = p + t - i;
    Ok(if union == 0 { 1.0 } else { i as f64 / union as f64 })
}

/// Dice coefficient; 1.0 when both masks are empty.
pub fn dice(pred: &BinaryMask, truth: &BinaryMask) -> Result<f64> {
    let (i, p, t) = counts(pred, truth)?;
    Ok(if p + t == 0 { 1.0 } else { 2.0 * i as f64 / (p + t) as f64 })
}

/// How per-image results are reduced within one instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean of per-image metrics.
    #[default]
    PerImage,
    /// Metrics of the pixel counts pooled over all images.
    PooledPixels,
}

/// How the stochastic instances are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    /// Score every instance, then average the scores.
    #[default]
    AverageMetrics,
    /// Average the instances' probabilities, then score once.
    AveragePredictions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub n_instances: usize,
    pub threshold: f64,
    pub seed: u64,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub ensemble: EnsembleMode,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            n_instances: DEFAULT_INSTANCES,
            threshold: DEFAULT_THRESHOLD,
            seed: 0,
            aggregation: Aggregation::PerImage,
            ensemble: EnsembleMode::AverageMetrics,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetrics {
    pub iou: Vec<f64>,
    pub dice: Vec<f64>,
    pub mean_iou: f64,
    pub mean_dice: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_instance: Vec<InstanceMetrics>,
    pub mean_iou: f64,
    pub mean_dice: f64,
    /// Population standard deviation over instances.
    pub std_iou: f64,
    pub std_dice: f64,
    pub n_instances: usize,
    pub threshold: f64,
    pub seed: u64,
    pub aggregation: Aggregation,
    pub ensemble: EnsembleMode,
    /// Test ids whose truth and prediction were both empty in some instance
    /// (scored 1.0 by convention).
    pub empty_agreement: Vec<String>,
}

/// Welford's update: identical values give exactly that mean and a zero spread.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let (mut mean, mut m2) = (0.0, 0.0);
    for (i, &v) in values.iter().enumerate() {
        let delta = v - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (v - mean);
    }
    (mean, (m2 / values.len() as f64).sqrt())
}

/// Foreground probabilities of one stochastic instance (or a deterministic
/// pass when `mode` is eval) over a list of images, in batches.
pub fn predict_probabilities(
    model: &Model,
    images: &[&Image],
    mode: ForwardMode,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Array2<f64>>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(EVAL_BATCH) {
        let logits = model.forward_tensor(images_to_tensor(chunk.iter().copied()), mode, rng)?;
        for n in 0..chunk.len() {
            out.push(logits.slice(ndarray::s![n, 0, .., ..]).mapv(sigmoid));
        }
    }
    Ok(out)
}

/// Random stream of instance `i` under `seed`.
pub fn instance_rng(seed: u64, instance: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(instance as u64 + 1);
    rng
}

/// Mean foreground probability over `n_instances` dropout instances.
pub fn ensemble_probabilities(model: &Model, images: &[&Image], n_instances: usize, seed: u64) -> Result<Vec<Array2<f64>>> {
    if n_instances == 0 {
        return Err(Error::arg("n_instances must be at least 1"));
    }
    let mut sum: Option<Vec<Array2<f64>>> = None;
    for i in 0..n_instances {
        let probs = predict_probabilities(model, images, ForwardMode::McDropout, &mut instance_rng(seed, i))?;
        sum = Some(match sum {
            None => probs,
            Some(mut acc) => {
                for (a, p) in acc.iter_mut().zip(&probs) {
                    *a += p;
                }
                acc
            }
        });
    }
    let k = n_instances as f64;
    Ok(sum.unwrap_or_default().into_iter().map(|a| a / k).collect())
}

fn score(
    preds: &[BinaryMask],
    test: &Dataset,
    aggregation: Aggregation,
    empty: &mut Vec<String>,
) -> Result<InstanceMetrics> {
    let mut ious = Vec::with_capacity(preds.len());
    let mut dices = Vec::with_capacity(preds.len());
    let (mut both, mut p_sum, mut t_sum) = (0usize, 0usize, 0usize);
    for (pred, sample) in preds.iter().zip(test.samples()) {
        let (i, p, t) = counts(pred, &sample.mask)?;
        if p + t == 0 && !empty.contains(&sample.id) {
            empty.push(sample.id.clone());
        }
        ious.push(iou(pred, &sample.mask)?);
        dices.push(dice(pred, &sample.mask)?);
        both += i;
        p_sum += p;
        t_sum += t;
    }
    let (mean_iou, mean_dice) = match aggregation {
        Aggregation::PerImage => (mean_std(&ious).0, mean_std(&dices).0),
        Aggregation::PooledPixels => {
            let union = p_sum + t_sum - both;
            (
                if union == 0 { 1.0 } else { both as f64 / union as f64 },
                if p_sum + t_sum == 0 { 1.0 } else { 2.0 * both as f64 / (p_sum + t_sum) as f64 },
            )
        }
    };
    Ok(InstanceMetrics {
        iou: ious,
        dice: dices,
        mean_iou,
        mean_dice,
    })
}

/// Scores `n_instances` dropout instances of `model` on `test`, each with its
/// own stream derived from `seed`, and averages the per-instance means.
pub fn mc_dropout_evaluate(model: &Model, test: &Dataset, n_instances: usize, threshold: f64, seed: u64) -> Result<MetricsReport> {
    mc_dropout_evaluate_with(
        model,
        test,
        &EvalOptions {
            n_instances,
            threshold,
            seed,
            ..EvalOptions::default()
        },
    )
}

pub fn mc_dropout_evaluate_with(model: &Model, test: &Dataset, options: &EvalOptions) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::arg("test set is empty"));
    }
    if options.n_instances == 0 {
        return Err(Error::arg("n_instances must be at least 1"));
    }
    check_threshold(options.threshold)?;
    let images: Vec<&Image> = test.samples().iter().map(|s| &s.image).collect();
    let mut empty = Vec::new();
    let binarize_all = |probs: Vec<Array2<f64>>| -> Result<Vec<BinaryMask>> {
        probs.iter().map(|p| binarize(p, options.threshold)).collect()
    };
    let per_instance = match options.ensemble {
        EnsembleMode::AverageMetrics => (0..options.n_instances)
            .map(|i| {
                let probs = predict_probabilities(model, &images, ForwardMode::McDropout, &mut instance_rng(options.seed, i))?;
                score(&binarize_all(probs)?, test, options.aggregation, &mut empty)
            })
            .collect::<Result<Vec<_>>>()?,
        EnsembleMode::AveragePredictions => {
            let probs = ensemble_probabilities(model, &images, options.n_instances, options.seed)?;
            vec![score(&binarize_all(probs)?, test, options.aggregation, &mut empty)?]
        }
    };
    let ious: Vec<f64> = per_instance.iter().map(|m| m.mean_iou).collect();
    let dices: Vec<f64> = per_instance.iter().map(|m| m.mean_dice).collect();
    let (mean_iou, std_iou) = mean_std(&ious);
    let (mean_dice, std_dice) = mean_std(&dices);
    Ok(MetricsReport {
        per_instance,
        mean_iou,
        mean_dice,
        std_iou,
        std_dice,
        n_instances: options.n_instances,
        threshold: options.threshold,
        seed: options.seed,
        aggregation: options.aggregation,
        ensemble: options.ensemble,
        empty_agreement: empty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Sample;
    use crate::segnet::{build_model, SegNetConfig};

    #[test]
    fn spread_of_identical_values_is_exactly_zero() {
        for v in [0.1, 0.7316, 1.0 / 3.0] {
            assert_eq!(mean_std(&[v; 20]), (v, 0.0));
        }
        let (mean, std) = mean_std(&[1.0, 3.0]);
        assert_eq!((mean, std), (2.0, 1.0));
    }

    fn mask(h: usize, w: usize, on: &[(usize, usize)]) -> BinaryMask {
        BinaryMask::from_fn(h, w, |r, c| on.contains(&(r, c)))
    }

    #[test]
    fn binarize_tie_rule() {
        let half = Array2::from_elem((3, 3), 0.5);
        assert_eq!(binarize(&half, 0.5).unwrap().count_ones(), 9);
        assert_eq!(binarize(&Array2::zeros((3, 3)), 0.5).unwrap().count_ones(), 0);
        assert!(binarize(&half, 0.0).is_err());
        assert!(binarize(&half, 1.0).is_err());
    }

    #[test]
    fn small_examples() {
        let p = mask(2, 2, &[(0, 0), (0, 1)]);
        let t = mask(2, 2, &[(0, 1), (1, 1)]);
        assert!((iou(&p, &t).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(dice(&p, &t).unwrap(), 0.5);
        assert_eq!(iou(&p, &p).unwrap(), 1.0);
        let d = mask(2, 2, &[(1, 0)]);
        assert_eq!(iou(&p, &d).unwrap(), 0.0);
        let e = BinaryMask::zeros(2, 2);
        assert_eq!(iou(&e, &e).unwrap(), 1.0);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        assert!(iou(&p, &BinaryMask::zeros(3, 2)).is_err());
    }

    fn test_set() -> Dataset {
        let samples = (0..3)
            .map(|i| {
                let image = Image::from_fn(16, 16, |r, c, ch| ((r * 3 + c * 5 + ch + i) % 7) as f64 / 6.0);
                let m = BinaryMask::from_fn(16, 16, |r, c| (r + c + i) % 3 == 0);
                Sample::new(image, m, format!("t{i}")).unwrap()
            })
            .collect();
        Dataset::new(samples, crate::dataset::Split::Test).unwrap()
    }

    #[test]
    fn zero_dropout_instances_agree() {
        let model = build_model(&SegNetConfig::tiny().with_dropout(0.0)).unwrap();
        let r = mc_dropout_evaluate(&model, &test_set(), 4, 0.5, 3).unwrap();
        assert_eq!(r.std_iou, 0.0);
        assert_eq!(r.std_dice, 0.0);
        assert!(r.per_instance.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn reproducible_and_single_instance() {
        let model = build_model(&SegNetConfig::tiny()).unwrap();
        let a = mc_dropout_evaluate(&model, &test_set(), 3, 0.5, 11).unwrap();
        let b = mc_dropout_evaluate(&model, &test_set(), 3, 0.5, 11).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let one = mc_dropout_evaluate(&model, &test_set(), 1, 0.5, 11).unwrap();
        assert_eq!(one.mean_iou, one.per_instance[0].mean_iou);
        assert_eq!(one.std_iou, 0.0);
    }

    #[test]
    fn rejects_empty_test_set() {
        let model = build_model(&SegNetConfig::tiny()).unwrap();
        let empty = Dataset::new(Vec::new(), crate::dataset::Split::Test).unwrap();
        assert!(mc_dropout_evaluate(&model, &empty, 2, 0.5, 0).is_err());
    }

    #[test]
    fn prediction_ensemble_reports_one_instance() {
        let model = build_model(&SegNetConfig::tiny()).unwrap();
        let options = EvalOptions {
            n_instances: 3,
            ensemble: EnsembleMode::AveragePredictions,
            aggregation: Aggregation::PooledPixels,
            ..EvalOptions::default()
        };
        let r = mc_dropout_evaluate_with(&model, &test_set(), &options).unwrap();
        assert_eq!(r.per_instance.len(), 1);
        assert!((0.0..=1.0).contains(&r.mean_iou));
    }
}
