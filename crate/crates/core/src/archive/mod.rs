//! DTSA serialization and storage accounting.

mod format;
mod storage;

pub use format::{decode_archive, encode_archive, read_archive, write_archive, MAGIC, VERSION};
pub use storage::{
    layer_bytes, matrix_bytes, ratio_for_budget, shape_amr, storage_report, vector_bytes, Accounting, LayerStorage,
    StorageReport, BUDGET_RATIO_STEP,
};
