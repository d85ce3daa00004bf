//! Deterministic truncated SVD and rank selection.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// How group codes are formed for U, Vt and 1-D layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodecMode {
    /// Sign split plus a median split on each side (four groups).
    FourGroup,
    /// Sign split only, one RMS scale per sign.
    TwoGroup,
    /// Four groups with every scale forced to 1.
    NoScaling,
}

impl CodecMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CodecMode::FourGroup => "four",
            CodecMode::TwoGroup => "two",
            CodecMode::NoScaling => "noscale",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "four" => Some(CodecMode::FourGroup),
            "two" => Some(CodecMode::TwoGroup),
            "noscale" => Some(CodecMode::NoScaling),
            _ => None,
        }
    }
}

/// Fraction of singular values kept plus the grouping mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodecConfig {
    pub r: f64,
    pub mode: CodecMode,
}

impl CodecConfig {
    pub fn new(r: f64, mode: CodecMode) -> Result<Self> {
        validate_ratio(r)?;
        Ok(Self { r, mode })
    }
}

pub(crate) fn validate_ratio(r: f64) -> Result<()> {
    if r.is_finite() && r > 0.0 && r <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidRatio(r))
    }
}

/// `k = max(1, ceil(r * min(m, n)))`.
pub fn rank_for_ratio(m: usize, n: usize, r: f64) -> Result<usize> {
    validate_ratio(r)?;
    let full = m.min(n);
    let k = (r * full as f64).ceil() as usize;
    Ok(k.clamp(1, full.max(1)))
}

/// Rank-k factors `M ≈ U · diag(sigma) · Vt`, all row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    /// m × k
    pub u: Vec<f64>,
    pub sigma: Vec<f64>,
    /// k × n
    pub vt: Vec<f64>,
}

impl SvdFactors {
    pub fn reconstruct(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.m * self.n];
        for i in 0..self.m {
            let row = &mut out[i * self.n..(i + 1) * self.n];
            for l in 0..self.k {
                let a = self.u[i * self.k + l] * self.sigma[l];
                if a == 0.0 {
                    continue;
                }
                let vrow = &self.vt[l * self.n..(l + 1) * self.n];
                for (o, &v) in row.iter_mut().zip(vrow) {
                    *o += a * v;
                }
            }
        }
        out
    }
}

const SVD_EPS: f64 = 1e-15;
const SVD_MAX_ITER: usize = 10_000;

/// Top-k SVD with a fixed sign convention: the largest-magnitude entry of
/// each U column is positive (ties go to the lowest row index).
pub fn truncated_svd(matrix: &Matrix, k: usize) -> Result<SvdFactors> {
    let (m, n) = (matrix.rows, matrix.cols);
    if k == 0 || k > m.min(n) {
        return Err(Error::InvalidTensor(format!(
            "rank {k} outside [1, {}] for a {m}x{n} matrix",
            m.min(n)
        )));
    }
    if matrix.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }

    let dense = DMatrix::<f64>::from_row_iterator(m, n, matrix.data.iter().map(|&v| v as f64));
    let svd = nalgebra::SVD::try_new(dense, true, true, SVD_EPS, SVD_MAX_ITER)
        .ok_or(Error::ConvergenceFailure { rows: m, cols: n })?;
    let u_full = svd.u.expect("requested U");
    let vt_full = svd.v_t.expect("requested Vt");
    let sv = svd.singular_values;

    let mut u = vec![0.0; m * k];
    let mut vt = vec![0.0; k * n];
    let mut sigma = Vec::with_capacity(k);
    for l in 0..k {
        let mut pivot = 0;
        for i in 1..m {
            if u_full[(i, l)].abs() > u_full[(pivot, l)].abs() {
                pivot = i;
            }
        }
        let flip = if u_full[(pivot, l)] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..m {
            u[i * k + l] = flip * u_full[(i, l)];
        }
        for j in 0..n {
            vt[l * n + j] = flip * vt_full[(l, j)];
        }
        sigma.push(sv[l].max(0.0));
    }
    Ok(SvdFactors { m, n, k, u, sigma, vt })
}
