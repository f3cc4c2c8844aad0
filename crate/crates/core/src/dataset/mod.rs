//! Samples, annotation ingestion, resizing, splitting and synthetic data.

mod annotation;
mod image;
mod io;
mod raster;
mod resize;
mod synthetic;

pub use self::annotation::{parse_annotation_xml, ParsedAnnotation, Polygon};
pub use self::image::{
    images_to_tensor, masks_to_tensor, tensor_to_image, BinaryMask, Dataset, Image, Sample, Split,
};
pub use self::io::{
    load_dataset, read_image, read_mask, save_dataset, save_synthetic, write_image, write_mask,
};
pub use self::raster::rasterize_polygons;
pub use self::resize::{resize_image, resize_mask, resize_sample, split_train_val, MIN_SIDE};
pub use self::synthetic::{
    generate_synthetic, sample_layout, Ellipse, Interval, SyntheticSpec, SyntheticSplits,
    TextureBand,
};
