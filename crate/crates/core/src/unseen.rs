//! Data-free fusion of compressed deltas for a task without a fine-tuned model.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::DtsArchive;
use crate::error::{Error, Result};
use crate::tensor::{Tensor, TensorMap};

#[derive(Debug, Clone, PartialEq)]
pub struct TaskEmbedding {
    pub task_name: String,
    pub vector: Vec<f64>,
}

impl TaskEmbedding {
    pub fn new(task_name: impl Into<String>, vector: Vec<f64>) -> Result<Self> {
        let e = Self {
            task_name: task_name.into(),
            vector,
        };
        e.norm()?;
        Ok(e)
    }

    fn norm(&self) -> Result<f64> {
        if self.vector.is_empty() || self.vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::ZeroNormEmbedding(self.task_name.clone()));
        }
        let n = self.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 && n.is_finite() {
            Ok(n)
        } else {
            Err(Error::ZeroNormEmbedding(self.task_name.clone()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeWeights {
    pub weights: Vec<(String, f64)>,
}

impl MergeWeights {
    pub fn get(&self, task: &str) -> Option<f64> {
        self.weights.iter().find(|(n, _)| n == task).map(|(_, w)| *w)
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().map(|(_, w)| w).sum()
    }
}

fn cosine(a: &TaskEmbedding, b: &TaskEmbedding) -> Result<f64> {
    if a.vector.len() != b.vector.len() {
        return Err(Error::DimensionMismatch {
            expected: a.vector.len(),
            got: b.vector.len(),
        });
    }
    let dot: f64 = a.vector.iter().zip(&b.vector).map(|(x, y)| x * y).sum();
    Ok(dot / (a.norm()? * b.norm()?))
}

/// Clamped, normalized cosine similarities; uniform if every clamped value is 0.
pub fn similarity_weights(target: &TaskEmbedding, seen: &[TaskEmbedding]) -> Result<MergeWeights> {
    if seen.is_empty() {
        return Err(Error::EmptyInput("no seen-task embeddings".into()));
    }
    target.norm()?;
    let sims = seen
        .iter()
        .map(|e| cosine(target, e).map(|c| c.max(0.0)))
        .collect::<Result<Vec<_>>>()?;
    let total: f64 = sims.iter().sum();
    let n = seen.len() as f64;
    let weights = seen
        .iter()
        .zip(&sims)
        .map(|(e, &s)| {
            let w = if total > 0.0 { s / total } else { 1.0 / n };
            (e.task_name.clone(), w)
        })
        .collect();
    Ok(MergeWeights { weights })
}

/// `base + Σ γ_n · decode(archive_n)`, fused in f64.
pub fn merge_for_unseen(base: &TensorMap, archives: &[DtsArchive], weights: &MergeWeights) -> Result<TensorMap> {
    if archives.is_empty() {
        return Err(Error::EmptyInput("no archives to fuse".into()));
    }
    if weights.weights.len() != archives.len() {
        return Err(Error::WeightTaskMismatch(format!(
            "{} weights for {} archives",
            weights.weights.len(),
            archives.len()
        )));
    }
    let mut gammas = Vec::with_capacity(archives.len());
    for archive in archives {
        let matches = weights.weights.iter().filter(|(n, _)| *n == archive.task_name).count();
        if matches != 1 {
            return Err(Error::WeightTaskMismatch(format!(
                "task {:?} has {matches} weights",
                archive.task_name
            )));
        }
        gammas.push(weights.get(&archive.task_name).unwrap());
    }
    let fp = archives[0].base_fingerprint;
    if let Some(a) = archives.iter().find(|a| a.base_fingerprint != fp) {
        return Err(Error::BaseMismatch(format!(
            "archive {:?} has base {:016x}, expected {fp:016x}",
            a.task_name, a.base_fingerprint
        )));
    }
    for archive in archives {
        archive.check_base(base)?;
    }

    let decoded = archives.iter().map(DtsArchive::decode).collect::<Result<Vec<_>>>()?;
    let mut out = TensorMap::new();
    for (name, tensor) in base.iter() {
        let mut acc: Vec<f64> = vec![0.0; tensor.len()];
        for (delta, &g) in decoded.iter().zip(&gammas) {
            if g == 0.0 {
                continue;
            }
            for (a, &x) in acc.iter_mut().zip(delta.get(name).unwrap().data()) {
                *a += g * x as f64;
            }
        }
        let data: Vec<f32> = tensor
            .data()
            .iter()
            .zip(&acc)
            .map(|(&b, &d)| if d == 0.0 { b } else { (b as f64 + d) as f32 })
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteResult(name.clone()));
        }
        out.insert(name.clone(), Tensor::new(tensor.shape().to_vec(), data)?)?;
    }
    Ok(out.with_metadata(base.metadata().clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingsFile {
    pub dimension: usize,
    pub tasks: BTreeMap<String, Vec<f64>>,
    pub target: Vec<f64>,
}

impl EmbeddingsFile {
    pub fn parse(json: &str) -> Result<Self> {
        let file: Self = serde_json::from_str(json).map_err(|e| Error::InvalidConfig(format!("embeddings: {e}")))?;
        file.check()?;
        Ok(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn check(&self) -> Result<()> {
        let dim = self.dimension;
        for v in self.tasks.values().chain(std::iter::once(&self.target)) {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
        }
        Ok(())
    }

    pub fn seen(&self) -> Result<Vec<TaskEmbedding>> {
        self.tasks
            .iter()
            .map(|(n, v)| TaskEmbedding::new(n.clone(), v.clone()))
            .collect()
    }

    pub fn target_embedding(&self) -> Result<TaskEmbedding> {
        TaskEmbedding::new("target", self.target.clone())
    }

    pub fn weights(&self) -> Result<MergeWeights> {
        self.check()?;
        similarity_weights(&self.target_embedding()?, &self.seen()?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("embeddings serialize")
    }
}
