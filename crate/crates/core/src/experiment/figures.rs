use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{read_image, write_image, Image};
use crate::error::{Error, Result};
use crate::stylizer::{blend_embeddings, predict_style_embedding, sample_style_embedding, stylize_image, StylePrior, Stylizer};
use crate::trainer::{read_history, EpochRecord};

/// Shape of a training run's loss curves.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurveSummary {
    pub epochs: usize,
    /// First epoch attaining the minimum validation loss.
    pub min_val_loss_epoch: usize,
    pub min_val_loss: f64,
    pub final_val_loss: f64,
    pub final_over_min_val_loss: f64,
    pub min_train_loss_epoch: usize,
    pub min_train_loss: f64,
    pub final_train_loss: f64,
}

fn argmin(history: &[EpochRecord], f: impl Fn(&EpochRecord) -> f64) -> (usize, f64) {
    history.iter().fold((0, f64::INFINITY), |best, r| {
        let v = f(r);
        if v < best.1 {
            (r.epoch, v)
        } else {
            best
        }
    })
}

pub fn summarize_history(history: &[EpochRecord]) -> Result<LossCurveSummary> {
    let last = history.last().ok_or_else(|| Error::arg("empty training history"))?;
    let (min_val_loss_epoch, min_val_loss) = argmin(history, |r| r.val_loss);
    let (min_train_loss_epoch, min_train_loss) = argmin(history, |r| r.train_loss);
    Ok(LossCurveSummary {
        epochs: history.len(),
        min_val_loss_epoch,
        min_val_loss,
        final_val_loss: last.val_loss,
        final_over_min_val_loss: last.val_loss / min_val_loss,
        min_train_loss_epoch,
        min_train_loss,
        final_train_loss: last.train_loss,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossCurveFiles {
    pub plot: PathBuf,
    pub summary: PathBuf,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN: (f64, f64, f64, f64) = (64.0, 24.0, 28.0, 48.0); // left, right, top, bottom
const TRAIN_COLOR: &str = "#1f77b4";
const VAL_COLOR: &str = "#ff7f0e";

fn svg_plot(history: &[EpochRecord]) -> String {
    let (l, r, t, b) = MARGIN;
    let (pw, ph) = (WIDTH - l - r, HEIGHT - t - b);
    let first = history[0].epoch as f64;
    let last = history[history.len() - 1].epoch as f64;
    let ymax = history
        .iter()
        .flat_map(|h| [h.train_loss, h.val_loss])
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max)
        .max(1e-12)
        * 1.05;
    let x = |e: f64| {
        if last > first {
            l + (e - first) / (last - first) * pw
        } else {
            l + pw / 2.0
        }
    };
    let y = |v: f64| t + ph - (v / ymax).clamp(0.0, 1.0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{l}" y="{t}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let v = ymax * i as f64 / 4.0;
        let yy = y(v);
        let _ = writeln!(
            s,
            r##"<line x1="{l}" y1="{yy:.1}" x2="{:.1}" y2="{yy:.1}" stroke="#dddddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.3}</text>"##,
            l + pw,
            l - 6.0,
            yy + 4.0
        );
    }
    let ticks: Vec<f64> = if last > first {
        (0..=4).map(|i| (first + (last - first) * i as f64 / 4.0).round()).collect()
    } else {
        vec![first]
    };
    for e in ticks {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{e}</text>"#,
            x(e),
            t + ph + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">epoch</text>"#,
        l + pw / 2.0,
        HEIGHT - 8.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">loss</text>"#,
        t + ph / 2.0,
        t + ph / 2.0
    );
    for (name, color, get) in [
        ("train", TRAIN_COLOR, (|h: &EpochRecord| h.train_loss) as fn(&EpochRecord) -> f64),
        ("validation", VAL_COLOR, |h: &EpochRecord| h.val_loss),
    ] {
        let points: Vec<String> = history
            .iter()
            .map(|h| format!("{:.2},{:.2}", x(h.epoch as f64), y(get(h))))
            .collect();
        if points.len() == 1 {
            let h = &history[0];
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"><title>{name}</title></circle>"#,
                x(h.epoch as f64),
                y(get(h))
            );
        } else {
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"><title>{name}</title></polyline>"#,
                points.join(" ")
            );
        }
    }
    let lx = l + pw - 110.0;
    for (i, (name, color)) in [("train", TRAIN_COLOR), ("validation", VAL_COLOR)].iter().enumerate() {
        let ly = t + 16.0 + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{:.1}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{name}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Reads `history.csv` and writes an SVG of train and validation loss versus
/// epoch at `out_path`, plus a summary next to it (`.json` extension).
pub fn emit_loss_curves(history_path: &Path, out_path: &Path) -> Result<LossCurveFiles> {
    let history = read_history(history_path)?;
    if history.is_empty() {
        return Err(Error::Format {
            path: history_path.to_path_buf(),
            message: "history has no rows".into(),
        });
    }
    let summary = summarize_history(&history)?;
    if let Some(dir) = out_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(out_path, svg_plot(&history)).map_err(|e| Error::io(out_path, e))?;
    let summary_path = out_path.with_extension("json");
    let text = serde_json::to_string_pretty(&summary)? + "\n";
    fs::write(&summary_path, text).map_err(|e| Error::io(&summary_path, e))?;
    Ok(LossCurveFiles {
        plot: out_path.to_path_buf(),
        summary: summary_path,
    })
}

/// The image followed by `n_styles` stylisations at strength `alpha`, side by side.
pub fn preview_stylization(
    image: &Image,
    stylizer: &Stylizer,
    prior: &StylePrior,
    n_styles: usize,
    alpha: f64,
    seed: u64,
) -> Result<Image> {
    let content = predict_style_embedding(stylizer, image)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (image.height(), image.width());
    let mut grid = Array3::zeros((h, w * (n_styles + 1), 3));
    grid.slice_mut(s![.., 0..w, ..]).assign(image.pixels());
    for k in 0..n_styles {
        let style = sample_style_embedding(prior, &mut rng);
        let z = blend_embeddings(&content, &style, alpha)?;
        let out = stylize_image(stylizer, image, &z)?;
        grid.slice_mut(s![.., (k + 1) * w..(k + 2) * w, ..]).assign(out.pixels());
    }
    Image::new(grid)
}

/// File-based [`preview_stylization`]; missing weights or prior are a
/// configuration error.
pub fn preview_stylization_file(
    image_path: &Path,
    stylizer_path: &Path,
    prior_path: &Path,
    n_styles: usize,
    alpha: f64,
    seed: u64,
    out_path: &Path,
) -> Result<()> {
    for (what, p) in [("stylizer weights", stylizer_path), ("style prior", prior_path)] {
        if !p.is_file() {
            return Err(Error::Config(format!("{what} not found at {}", p.display())));
        }
    }
    let stylizer = Stylizer::load(stylizer_path)?;
    let prior = StylePrior::load(prior_path)?;
    let image = read_image(image_path)?;
    let grid = preview_stylization(&image, &stylizer, &prior, n_styles, alpha, seed)?;
    if let Some(dir) = out_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_image(&grid, out_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(epoch: usize, train: f64, val: f64) -> EpochRecord {
        EpochRecord {
            epoch,
            train_loss: train,
            val_loss: val,
            val_iou: 0.5,
        }
    }

    #[test]
    fn monotone_history_has_unit_ratio() {
        let h: Vec<_> = (1..=5).map(|e| rec(e, 1.0 / e as f64, 2.0 / e as f64)).collect();
        let s = summarize_history(&h).unwrap();
        assert_eq!(s.final_over_min_val_loss, 1.0);
        assert_eq!(s.min_val_loss_epoch, 5);
    }

    #[test]
    fn overfit_history_summary() {
        let vals = [1.0, 0.5, 0.4, 0.6, 0.8];
        let h: Vec<_> = vals.iter().enumerate().map(|(i, &v)| rec(i + 1, 1.0 - 0.1 * i as f64, v)).collect();
        let s = summarize_history(&h).unwrap();
        assert_eq!(s.min_val_loss_epoch, 3);
        assert!((s.final_over_min_val_loss - 2.0).abs() < 1e-12);
        assert_eq!(s.min_train_loss_epoch, 5);
    }

    #[test]
    fn single_row_and_malformed_histories() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("history.csv");
        fs::write(&csv, "epoch,train_loss,val_loss,val_iou\n1,0.5,0.6,0.1\n").unwrap();
        let files = emit_loss_curves(&csv, &dir.path().join("plot/curves.svg")).unwrap();
        let svg = fs::read_to_string(&files.plot).unwrap();
        assert!(svg.contains("<circle") && svg.ends_with("</svg>\n"));
        let summary: LossCurveSummary = serde_json::from_str(&fs::read_to_string(files.summary).unwrap()).unwrap();
        assert_eq!(summary.epochs, 1);

        fs::write(&csv, "epoch,train_loss\n1,abc\n").unwrap();
        assert!(matches!(emit_loss_curves(&csv, &dir.path().join("x.svg")), Err(Error::Format { .. })));
        assert!(emit_loss_curves(&dir.path().join("missing.csv"), &dir.path().join("y.svg")).is_err());
    }

    #[test]
    fn missing_weights_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = preview_stylization_file(
            &dir.path().join("a.png"),
            &dir.path().join("stylizer.bin"),
            &dir.path().join("prior.json"),
            1,
            0.5,
            0,
            &dir.path().join("out.png"),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
