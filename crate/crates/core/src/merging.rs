//! Static merging strategies and delta construction.

use serde::{Deserialize, Serialize};

use crate::codec::{encode_task, DtsArchive};
use crate::error::{Error, Result};
use crate::lowrank::{CodecConfig, CodecMode};
use crate::tensor::{linear_combine, DeltaKind, DeltaMap, Tensor, TensorMap};

pub const DEFAULT_LAMBDA: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeStrategy {
    WeightAverage,
    TaskArithmetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeSpec {
    pub strategy: MergeStrategy,
    /// Only used by task arithmetic.
    pub lambda: f64,
}

impl Default for MergeSpec {
    fn default() -> Self {
        Self {
            strategy: MergeStrategy::WeightAverage,
            lambda: DEFAULT_LAMBDA,
        }
    }
}

impl MergeSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() {
            return Err(Error::InvalidConfig(format!("lambda {} is not finite", self.lambda)));
        }
        if self.strategy == MergeStrategy::TaskArithmetic && self.lambda <= 0.0 {
            return Err(Error::InvalidConfig(format!("lambda {} must be positive", self.lambda)));
        }
        Ok(())
    }

    /// Produces the merged model for `finetuned` models sharing `base`.
    pub fn merge(&self, base: &TensorMap, finetuned: &[&TensorMap]) -> Result<TensorMap> {
        self.validate()?;
        match self.strategy {
            MergeStrategy::WeightAverage => weight_average(finetuned),
            MergeStrategy::TaskArithmetic => {
                let deltas = finetuned
                    .iter()
                    .map(|m| DeltaMap::between(m, base, DeltaKind::TaskVector))
                    .collect::<Result<Vec<_>>>()?;
                task_arithmetic_merge(base, &deltas, self.lambda)
            }
        }
    }
}

/// Elementwise mean: sum in f64, divide once.
pub fn weight_average(models: &[&TensorMap]) -> Result<TensorMap> {
    let first = models
        .first()
        .ok_or_else(|| Error::EmptyInput("weight_average needs at least one model".into()))?;
    for model in &models[1..] {
        first.check_aligned(model)?;
    }
    let count = models.len() as f64;
    let mut out = TensorMap::new();
    for (name, tensor) in first.iter() {
        let mut acc = vec![0.0f64; tensor.len()];
        for model in models {
            for (a, &v) in acc.iter_mut().zip(model.get(name).unwrap().data()) {
                *a += v as f64;
            }
        }
        let data = acc.into_iter().map(|v| (v / count) as f32).collect();
        out.insert(name.clone(), Tensor::new(tensor.shape().to_vec(), data)?)?;
    }
    Ok(out)
}

/// `base + λ Σ τ_n`.
pub fn task_arithmetic_merge(base: &TensorMap, deltas: &[DeltaMap], lambda: f64) -> Result<TensorMap> {
    if deltas.is_empty() {
        return Err(Error::EmptyInput("task arithmetic needs at least one delta".into()));
    }
    let mut terms: Vec<(f64, &TensorMap)> = vec![(1.0, base)];
    terms.extend(deltas.iter().map(|d| (lambda, &d.map)));
    linear_combine(&terms)
}

/// `θ_n − θ_m` for every model.
pub fn difference_vectors(models: &[&TensorMap], merged: &TensorMap) -> Result<Vec<DeltaMap>> {
    models
        .iter()
        .map(|m| DeltaMap::between(m, merged, DeltaKind::DifferenceVector))
        .collect()
}

/// Same pipeline as [`encode_task`] but with sign-only groups.
pub fn binarize_baseline(task_name: &str, delta: &DeltaMap, base_fingerprint: u64, r: f64) -> Result<DtsArchive> {
    let config = CodecConfig::new(r, CodecMode::TwoGroup)?;
    encode_task(task_name, delta, base_fingerprint, &config)
}
