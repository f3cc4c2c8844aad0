//! Minimal tensor autodiff used by the segmentation network and the stylizer.

mod adam;
mod conv;
mod graph;
mod params;

pub use adam::{Adam, AdamConfig};
pub use graph::{Gradients, Graph, Var};
pub(crate) use graph::{seg_loss, sigmoid};
pub use params::{ParamEntry, ParamId, ParamStore, Tensor};
