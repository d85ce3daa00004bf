//! Decomposition, thresholding and scaling of weight deltas.

mod bitplane;
mod layer;
mod quantize;
mod task;

pub use bitplane::BitPlane;
pub use layer::{decode_layer, encode_layer, LayerPayload, LayerRecord};
pub use quantize::{apply_codes, threshold_codes, GroupCodes, ScaleSet};
pub use task::{encode_task, reconstruct_model, BaseKind, DtsArchive};
