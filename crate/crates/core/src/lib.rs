//! Compression of per-task weight deltas by truncated SVD, four-group sign and
//! magnitude thresholding, and per-group RMS scaling, plus the archive format,
//! merging baselines, unseen-task fusion and a synthetic benchmark.

pub mod archive;
pub mod bench;
pub mod codec;
pub mod container;
pub mod error;
pub mod lowrank;
pub mod merging;
pub mod tensor;
pub mod unseen;

pub use archive::{read_archive, storage_report, write_archive, StorageReport};
pub use codec::{encode_task, reconstruct_model, DtsArchive};
pub use container::{load_tensor_map, save_tensor_map};
pub use error::{Error, Result};
pub use lowrank::{CodecConfig, CodecMode};
pub use tensor::{DeltaKind, DeltaMap, Tensor, TensorMap};
