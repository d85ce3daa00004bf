//! Analytic storage accounting and the budgeted choice of `r`.
//!
//! Per matrix layer (`m × n`, rank `k`) the archive stores two bitplanes for
//! U and two for Vt, `k` singular values and eight scales:
//! `ceil(2mk/8) + ceil(2kn/8) + 4k + 32` bytes. A vector layer of length `L`
//! costs `ceil(2L/8) + 16`. The three-mask accounting charges 3 bits per
//! element instead of 2 and is reported alongside for comparison.

use serde::{Deserialize, Serialize};

use crate::codec::{DtsArchive, LayerPayload};
use crate::error::{Error, Result};
use crate::lowrank::rank_for_ratio;
use crate::tensor::TensorMap;

/// Bits charged per element and bitplane set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Accounting {
    /// Sign plane plus merged magnitude plane (what DTSA actually stores).
    TwoBit,
    /// Separate sign, positive-magnitude and negative-magnitude masks.
    ThreeMask,
}

impl Accounting {
    fn bits(self) -> u64 {
        match self {
            Accounting::TwoBit => 2,
            Accounting::ThreeMask => 3,
        }
    }
}

pub fn matrix_bytes(m: usize, n: usize, k: usize, accounting: Accounting) -> u64 {
    let bits = accounting.bits();
    let (m, n, k) = (m as u64, n as u64, k as u64);
    (bits * m * k).div_ceil(8) + (bits * k * n).div_ceil(8) + 4 * k + 32
}

pub fn vector_bytes(len: usize, accounting: Accounting) -> u64 {
    (accounting.bits() * len as u64).div_ceil(8) + 16
}

/// Bytes a layer of `shape` costs when encoded at ratio `r`.
pub fn layer_bytes(shape: &[usize], r: f64, accounting: Accounting) -> Result<u64> {
    let total: usize = shape.iter().product();
    match shape.len() {
        0 => Err(Error::ShapeMismatch("rank-0 layer".into())),
        1 => Ok(vector_bytes(total, accounting)),
        _ => {
            let m = shape[0];
            let n = total / m;
            Ok(matrix_bytes(m, n, rank_for_ratio(m, n, r)?, accounting))
        }
    }
}

fn full_bytes_of(shapes: &[(String, Vec<usize>)]) -> u64 {
    shapes.iter().map(|(_, s)| 4 * s.iter().product::<usize>() as u64).sum()
}

/// AMR of a model described only by its layer shapes.
pub fn shape_amr(shapes: &[(String, Vec<usize>)], r: f64, accounting: Accounting) -> Result<f64> {
    let mut archive = 0u64;
    for (_, shape) in shapes {
        archive += layer_bytes(shape, r, accounting)?;
    }
    let full = full_bytes_of(shapes);
    if full == 0 {
        return Err(Error::EmptyInput("model has no parameters".into()));
    }
    Ok(archive as f64 / full as f64)
}

/// Granularity of the budget search over `r`.
pub const BUDGET_RATIO_STEP: f64 = 1e-3;

/// Largest `r` on the `0.001` grid whose two-bit AMR stays within `budget`,
/// found by bisection (AMR is non-decreasing in `r`).
pub fn ratio_for_budget(shapes: &[(String, Vec<usize>)], budget: f64) -> Result<f64> {
    if !(budget.is_finite() && budget > 0.0) {
        return Err(Error::InvalidConfig(format!("AMR budget {budget} must be positive")));
    }
    let steps = (1.0 / BUDGET_RATIO_STEP).round() as u32;
    let ratio = |i: u32| i as f64 / steps as f64;
    let fits = |i: u32| shape_amr(shapes, ratio(i), Accounting::TwoBit).map(|a| a <= budget);

    if !fits(1)? {
        return Err(Error::BudgetUnattainable(budget));
    }
    let (mut lo, mut hi) = (1u32, steps);
    if fits(hi)? {
        return Ok(1.0);
    }
    // invariant: fits(lo) && !fits(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if fits(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(ratio(lo))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStorage {
    pub name: String,
    pub bytes: u64,
    /// Share of this layer's own full-precision size.
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageReport {
    pub archive_bytes: u64,
    pub full_model_bytes: u64,
    pub amr_2bit: f64,
    pub amr_paper_3mask: f64,
    pub per_layer: Vec<LayerStorage>,
}

pub fn storage_report(archive: &DtsArchive, base: &TensorMap) -> Result<StorageReport> {
    if archive.records.len() != base.len() {
        return Err(Error::ShapeMismatch(format!(
            "archive has {} layers, base has {}",
            archive.records.len(),
            base.len()
        )));
    }
    let mut per_layer = Vec::with_capacity(archive.records.len());
    let (mut two_bit, mut three_mask, mut full) = (0u64, 0u64, 0u64);
    for record in &archive.records {
        let tensor = base
            .get(&record.name)
            .ok_or_else(|| Error::ShapeMismatch(format!("layer {:?} not in base", record.name)))?;
        if tensor.shape() != record.original_shape {
            return Err(Error::ShapeMismatch(format!(
                "layer {:?}: {:?} vs {:?}",
                record.name,
                record.original_shape,
                tensor.shape()
            )));
        }
        let (bytes, bytes3) = match &record.payload {
            LayerPayload::Vec1D { codes, .. } => (
                vector_bytes(codes.len(), Accounting::TwoBit),
                vector_bytes(codes.len(), Accounting::ThreeMask),
            ),
            LayerPayload::Mat2D { m, n, k, .. } => (
                matrix_bytes(*m, *n, *k, Accounting::TwoBit),
                matrix_bytes(*m, *n, *k, Accounting::ThreeMask),
            ),
        };
        let layer_full = 4 * tensor.len() as u64;
        two_bit += bytes;
        three_mask += bytes3;
        full += layer_full;
        per_layer.push(LayerStorage {
            name: record.name.clone(),
            bytes,
            fraction: bytes as f64 / layer_full as f64,
        });
    }
    if full == 0 {
        return Err(Error::ShapeMismatch("empty base model".into()));
    }
    Ok(StorageReport {
        archive_bytes: two_bit,
        full_model_bytes: full,
        amr_2bit: two_bit as f64 / full as f64,
        amr_paper_3mask: three_mask as f64 / full as f64,
        per_layer,
    })
}
