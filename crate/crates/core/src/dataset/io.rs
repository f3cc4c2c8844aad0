//! On-disk dataset layout.
//!
//! Input: `<root>/images/*.{tif,tiff,png}` with either
//! `<root>/annotations/<stem>.xml` or `<root>/masks/<stem>.png` (0/255).
//! Output: `<out>/<split>/images/*.png` and `<out>/<split>/masks/*.png`.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use ndarray::Array2;

use super::annotation::parse_annotation_xml;
use super::image::{BinaryMask, Dataset, Image, Sample, Split};
use super::raster::rasterize_polygons;
use super::resize::resize_sample;
use super::synthetic::{SyntheticSpec, SyntheticSplits};
use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: &[&str] = &["tif", "tiff", "png"];

pub fn read_image(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    Ok(Image::from_fn(h as usize, w as usize, |i, j, c| {
        rgb.get_pixel(j as u32, i as u32)[c] as f64 / 255.0
    }))
}

/// Any nonzero pixel is foreground.
pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    let pixels = Array2::from_shape_fn((h as usize, w as usize), |(i, j)| {
        (gray.get_pixel(j as u32, i as u32)[0] > 0) as u8
    });
    BinaryMask::new(pixels)
}

pub fn write_image(image: &Image, path: &Path) -> Result<()> {
    let (h, w) = (image.height(), image.width());
    let p = image.pixels();
    let out = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| (p[[y as usize, x as usize, c]] * 255.0).round() as u8;
        Rgb([px(0), px(1), px(2)])
    });
    out.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Single-channel PNG with 0/255 encoding.
pub fn write_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    let out = GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([if mask.get(y as usize, x as usize) { 255 } else { 0 }])
    });
    out.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn list_images(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(dir, e)),
    };
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if let (Some(ext), Some(stem)) = (ext, path.file_stem().and_then(|s| s.to_str())) {
            if IMAGE_EXTENSIONS.contains(&ext.as_str()) {
                out.push((stem.to_string(), path));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn load_mask_for(root: &Path, id: &str, width: usize, height: usize) -> Result<Option<BinaryMask>> {
    let xml = root.join("annotations").join(format!("{id}.xml"));
    if xml.is_file() {
        let text = fs::read_to_string(&xml).map_err(|e| Error::io(&xml, e))?;
        let parsed = parse_annotation_xml(&text)?;
        return Ok(Some(rasterize_polygons(&parsed.polygons, width, height)));
    }
    let png = root.join("masks").join(format!("{id}.png"));
    if png.is_file() {
        return Ok(Some(read_mask(&png)?));
    }
    Ok(None)
}

/// Loads `<root>` as one split, resized to `target × target` and ordered by id.
pub fn load_dataset(root: &Path, split: Split, target: usize) -> Result<Dataset> {
    let images = list_images(&root.join("images"))?;
    if images.is_empty() {
        return Err(Error::Load(format!(
            "no samples found under {}",
            root.join("images").display()
        )));
    }
    let mut samples = Vec::with_capacity(images.len());
    let mut missing = Vec::new();
    for (id, path) in images {
        let image = read_image(&path)?;
        match load_mask_for(root, &id, image.width(), image.height())? {
            Some(mask) => {
                let sample = Sample::new(image, mask, id.clone())
                    .map_err(|e| Error::Load(format!("{id}: {e}")))?;
                samples.push(resize_sample(&sample, target)?);
            }
            None => missing.push(id),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Load(format!(
            "no annotation or mask for: {}",
            missing.join(", ")
        )));
    }
    Dataset::new(samples, split)
}

/// Writes a dataset under `<out>/<split>/{images,masks}/<id>.png`.
pub fn save_dataset(dataset: &Dataset, out: &Path) -> Result<()> {
    let base = out.join(dataset.split().as_str());
    let images = base.join("images");
    let masks = base.join("masks");
    for dir in [&images, &masks] {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    for s in dataset.samples() {
        write_image(&s.image, &images.join(format!("{}.png", s.id)))?;
        write_mask(&s.mask, &masks.join(format!("{}.png", s.id)))?;
    }
    Ok(())
}

/// Writes all three synthetic splits plus `spec.json`.
pub fn save_synthetic(splits: &SyntheticSplits, spec: &SyntheticSpec, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for d in [&splits.train, &splits.val, &splits.test] {
        save_dataset(d, out)?;
    }
    let path = out.join("spec.json");
    let text = serde_json::to_string_pretty(spec)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
