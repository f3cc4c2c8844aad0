//! Calibrates a stylizer on synthetic images and renders random restylings.
//!
//! `cargo run --release --example stylize_preview [out.png]`

use std::path::PathBuf;

use styleaug::dataset::{generate_synthetic, write_image, Image, SyntheticSpec};
use styleaug::experiment::{fit_prior, preview_stylization};
use styleaug::stylizer::{calibrate_stylizer, reconstruction_psnr, CalibrationConfig, StylizerConfig};

fn main() -> styleaug::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("styleaug-preview.png"));
    let data = generate_synthetic(&SyntheticSpec::default())?;
    let images: Vec<Image> = data.train.samples().iter().map(|s| s.image.clone()).collect();
    let calibration = CalibrationConfig {
        steps: 150,
        ..CalibrationConfig::default()
    };
    let cal = calibrate_stylizer(&images, &StylizerConfig::default(), &calibration)?;
    println!("reconstruction PSNR {:.2} dB", reconstruction_psnr(&cal.stylizer, &images)?);
    let prior = fit_prior(&cal.stylizer, &data.train, 4.0)?;
    // original followed by five restylings at full and half strength
    let strong = preview_stylization(&images[0], &cal.stylizer, &prior, 5, 1.0, 7)?;
    let half = preview_stylization(&images[0], &cal.stylizer, &prior, 5, 0.5, 7)?;
    let (h, w) = (strong.height(), strong.width());
    let grid = Image::from_fn(2 * h, w, |i, j, c| if i < h { strong.pixels()[[i, j, c]] } else { half.pixels()[[i - h, j, c]] });
    write_image(&grid, &out)?;
    println!("written to {}", out.display());
    Ok(())
}
