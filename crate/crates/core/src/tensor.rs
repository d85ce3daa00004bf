//! Named collections of dense f32 tensors and the elementwise algebra used to
//! form task vectors, difference vectors and merged models.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Dense row-major f32 tensor of rank >= 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::InvalidTensor("rank must be at least 1".into()));
        }
        if shape.contains(&0) {
            return Err(Error::InvalidTensor(format!("zero dimension in shape {shape:?}")));
        }
        let expected = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::InvalidTensor(format!("shape {shape:?} overflows")))?;
        if expected != data.len() {
            return Err(Error::InvalidTensor(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let len = shape.iter().product();
        Self::new(shape, vec![0.0; len])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

/// Row-major 2-D view of a tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows * cols != data.len() || rows == 0 || cols == 0 {
            return Err(Error::InvalidTensor(format!(
                "{rows}x{cols} matrix cannot hold {} values",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }
}

/// The original shape of a tensor folded into a matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeMeta {
    pub original_shape: Vec<usize>,
}

/// Folds a rank >= 2 tensor into `[d0, d1 * ... * dk]`.
pub fn as_matrix(tensor: &Tensor) -> Result<(Matrix, ShapeMeta)> {
    if tensor.rank() < 2 {
        return Err(Error::RankTooLow(tensor.rank()));
    }
    let rows = tensor.shape[0];
    let cols = tensor.len() / rows;
    let meta = ShapeMeta {
        original_shape: tensor.shape.clone(),
    };
    Ok((Matrix::new(rows, cols, tensor.data.clone())?, meta))
}

/// Inverse of [`as_matrix`].
pub fn from_matrix(matrix: Matrix, meta: &ShapeMeta) -> Result<Tensor> {
    Tensor::new(meta.original_shape.clone(), matrix.data)
}

/// Ordered map from layer name to tensor, plus optional string metadata.
///
/// Iteration is always in sorted name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorMap {
    entries: BTreeMap<String, Tensor>,
    metadata: BTreeMap<String, String>,
}

impl TensorMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if name.is_empty() || name == "__metadata__" {
            return Err(Error::InvalidName(name));
        }
        if !tensor.is_finite() {
            return Err(Error::NonFiniteValue(name));
        }
        if self.entries.contains_key(&name) {
            return Err(Error::InvalidName(format!("{name} (duplicate)")));
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn from_entries<I, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Tensor)>,
        S: Into<String>,
    {
        let mut map = Self::new();
        for (name, tensor) in entries {
            map.insert(name, tensor)?;
        }
        Ok(map)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn set_metadata(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    pub fn with_metadata(mut self, metadata: BTreeMap<String, String>) -> Self {
        self.metadata = metadata;
        self
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Checks that `other` has exactly the same layer names and shapes.
    pub fn check_aligned(&self, other: &TensorMap) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} layers vs {} layers",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for ((na, ta), (nb, tb)) in self.entries.iter().zip(other.entries.iter()) {
            if na != nb {
                return Err(Error::ShapeMismatch(format!("layer {na:?} vs {nb:?}")));
            }
            if ta.shape != tb.shape {
                return Err(Error::ShapeMismatch(format!(
                    "layer {na:?}: {:?} vs {:?}",
                    ta.shape, tb.shape
                )));
            }
        }
        Ok(())
    }

    /// 64-bit content hash over names, shapes and raw values (metadata excluded).
    pub fn fingerprint(&self) -> u64 {
        let mut hasher = Sha256::new();
        for (name, tensor) in &self.entries {
            hasher.update((name.len() as u64).to_le_bytes());
            hasher.update(name.as_bytes());
            hasher.update((tensor.shape.len() as u64).to_le_bytes());
            for &d in &tensor.shape {
                hasher.update((d as u64).to_le_bytes());
            }
            for v in &tensor.data {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest is 32 bytes"))
    }
}

/// What a delta is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaKind {
    /// `θn − θ0`, relative to the pretrained model.
    TaskVector,
    /// `θn − θm`, relative to a merged model.
    DifferenceVector,
}

impl DeltaKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DeltaKind::TaskVector => "task",
            DeltaKind::DifferenceVector => "diff",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "task" => Some(DeltaKind::TaskVector),
            "diff" => Some(DeltaKind::DifferenceVector),
            _ => None,
        }
    }
}

/// Metadata key under which a delta's kind is persisted.
pub const DELTA_KIND_KEY: &str = "dts.delta_kind";

/// A task-specific weight delta, layer-aligned with the base it was taken from.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaMap {
    pub kind: DeltaKind,
    pub map: TensorMap,
}

impl DeltaMap {
    /// `finetuned − base`, checked for alignment.
    pub fn between(finetuned: &TensorMap, base: &TensorMap, kind: DeltaKind) -> Result<Self> {
        let map = linear_combine(&[(1.0, finetuned), (-1.0, base)])?;
        Ok(Self { kind, map })
    }

    /// Wraps a map that is already a delta (e.g. loaded from disk).
    pub fn from_map(mut map: TensorMap, kind: DeltaKind) -> Self {
        map.set_metadata(DELTA_KIND_KEY, kind.as_str());
        Self { kind, map }
    }

    /// Reads the kind back from metadata; defaults to a task vector.
    pub fn from_loaded(map: TensorMap) -> Self {
        let kind = map
            .metadata()
            .get(DELTA_KIND_KEY)
            .and_then(|s| DeltaKind::parse(s))
            .unwrap_or(DeltaKind::TaskVector);
        Self { kind, map }
    }

    pub fn into_tagged_map(self) -> TensorMap {
        let mut map = self.map;
        map.set_metadata(DELTA_KIND_KEY, self.kind.as_str());
        map
    }
}

/// Per-element weighted sum `Σ c_i · M_i`, accumulated in f64 and rounded once.
pub fn linear_combine(terms: &[(f64, &TensorMap)]) -> Result<TensorMap> {
    let (_, first) = terms
        .first()
        .ok_or_else(|| Error::EmptyInput("linear_combine needs at least one term".into()))?;
    for (coef, map) in &terms[1..] {
        if !coef.is_finite() {
            return Err(Error::NonFiniteInput);
        }
        first.check_aligned(map)?;
    }
    if !terms[0].0.is_finite() {
        return Err(Error::NonFiniteInput);
    }

    let mut out = TensorMap::new();
    for (name, tensor) in first.iter() {
        let mut acc = vec![0.0f64; tensor.len()];
        for (coef, map) in terms {
            let src = map.get(name).expect("aligned maps share names").data();
            for (a, &v) in acc.iter_mut().zip(src) {
                *a += coef * v as f64;
            }
        }
        let data: Vec<f32> = acc.into_iter().map(|v| v as f32).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteResult(name.clone()));
        }
        out.entries
            .insert(name.clone(), Tensor::new(tensor.shape.clone(), data)?);
    }
    Ok(out)
}
