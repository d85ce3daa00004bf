use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layer::{decode_layer, encode_layer, LayerRecord};
use crate::error::{Error, Result};
use crate::lowrank::CodecConfig;
use crate::tensor::{DeltaKind, DeltaMap, Tensor, TensorMap};

/// Which model an archive's delta is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseKind {
    Pretrained,
    Merged,
}

impl From<DeltaKind> for BaseKind {
    fn from(kind: DeltaKind) -> Self {
        match kind {
            DeltaKind::TaskVector => BaseKind::Pretrained,
            DeltaKind::DifferenceVector => BaseKind::Merged,
        }
    }
}

/// All compressed layers for one task, tied to the base they decode onto.
#[derive(Debug, Clone, PartialEq)]
pub struct DtsArchive {
    pub task_name: String,
    pub base_kind: BaseKind,
    pub base_fingerprint: u64,
    pub config: CodecConfig,
    /// Sorted by layer name.
    pub records: Vec<LayerRecord>,
}

impl DtsArchive {
    pub fn record(&self, name: &str) -> Option<&LayerRecord> {
        self.records
            .binary_search_by(|r| r.name.as_str().cmp(name))
            .ok()
            .map(|i| &self.records[i])
    }

    /// Decodes every layer into a delta map.
    pub fn decode(&self) -> Result<TensorMap> {
        let tensors: Vec<Tensor> = self.records.par_iter().map(decode_layer).collect::<Result<_>>()?;
        TensorMap::from_entries(self.records.iter().map(|r| r.name.clone()).zip(tensors))
    }

    /// Checks the archive against `base`: fingerprint, layer set and shapes.
    pub fn check_base(&self, base: &TensorMap) -> Result<()> {
        let fp = base.fingerprint();
        if fp != self.base_fingerprint {
            return Err(Error::BaseMismatch(format!(
                "archive {:?} expects base {:016x}, got {fp:016x}",
                self.task_name, self.base_fingerprint
            )));
        }
        for (name, tensor) in base.iter() {
            let record = self.record(name).ok_or_else(|| Error::MissingLayer(name.clone()))?;
            if record.original_shape != tensor.shape() {
                return Err(Error::BaseMismatch(format!(
                    "layer {name:?}: archive shape {:?}, base shape {:?}",
                    record.original_shape,
                    tensor.shape()
                )));
            }
        }
        if self.records.len() != base.len() {
            let extra = self
                .records
                .iter()
                .find(|r| base.get(&r.name).is_none())
                .map(|r| r.name.clone())
                .unwrap_or_default();
            return Err(Error::BaseMismatch(format!("archive layer {extra:?} not in base")));
        }
        Ok(())
    }
}

pub fn encode_task(
    task_name: &str,
    delta: &DeltaMap,
    base_fingerprint: u64,
    config: &CodecConfig,
) -> Result<DtsArchive> {
    if delta.map.is_empty() {
        return Err(Error::EmptyInput(format!("delta for task {task_name:?} has no layers")));
    }
    let layers: Vec<(&String, &Tensor)> = delta.map.iter().collect();
    let records = layers
        .par_iter()
        .map(|(name, tensor)| encode_layer(name, tensor, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(DtsArchive {
        task_name: task_name.to_string(),
        base_kind: delta.kind.into(),
        base_fingerprint,
        config: *config,
        records,
    })
}

/// `base + decoded delta`, layer by layer.
pub fn reconstruct_model(base: &TensorMap, archive: &DtsArchive) -> Result<TensorMap> {
    archive.check_base(base)?;
    let delta = archive.decode()?;
    add_delta(base, &delta, 1.0)
}

/// `base + weight · delta`; zero delta entries leave the base value untouched
/// so a zero archive reproduces the base bit for bit.
pub(crate) fn add_delta(base: &TensorMap, delta: &TensorMap, weight: f64) -> Result<TensorMap> {
    let mut out = TensorMap::new();
    for (name, tensor) in base.iter() {
        let d = delta.get(name).ok_or_else(|| Error::MissingLayer(name.clone()))?;
        let data: Vec<f32> = tensor
            .data()
            .iter()
            .zip(d.data())
            .map(|(&b, &x)| {
                if x == 0.0 {
                    b
                } else {
                    (b as f64 + weight * x as f64) as f32
                }
            })
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteResult(name.clone()));
        }
        out.insert(name.clone(), Tensor::new(tensor.shape().to_vec(), data)?)?;
    }
    Ok(out.with_metadata(base.metadata().clone()))
}
