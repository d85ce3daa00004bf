//! Sign/magnitude grouping of a value array and per-group RMS scales.
//!
//! Every element lands in one of four groups, identified by two bits:
//!
//! | sign | mag | group                         | decoded value   |
//! |------|-----|-------------------------------|-----------------|
//! | 1    | 1   | `x > 0` and `x > λ1`          | `+s_pos_large`  |
//! | 1    | 0   | `0 < x <= λ1`                 | `+s_pos_small`  |
//! | 0    | 1   | `λ2 < x <= 0`                 | `-s_neg_small`  |
//! | 0    | 0   | `x <= λ2`                     | `-s_neg_large`  |
//!
//! `λ1` is the median of the strictly positive entries and `λ2` the median of
//! the strictly negative entries (`-∞` when there are none, so zeros always
//! fall into the negative-small group). Each scale is the RMS of its group's
//! magnitudes, or 0 for an empty group.

use serde::{Deserialize, Serialize};

use super::bitplane::BitPlane;
use crate::error::{Error, Result};
use crate::lowrank::CodecMode;

/// Two bitplanes that together select one of four groups per element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupCodes {
    pub sign_bits: BitPlane,
    pub mag_bits: BitPlane,
}

impl GroupCodes {
    pub fn new(sign_bits: BitPlane, mag_bits: BitPlane) -> Option<Self> {
        (sign_bits.len() == mag_bits.len()).then_some(Self { sign_bits, mag_bits })
    }

    pub fn len(&self) -> usize {
        self.sign_bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sign_bits.is_empty()
    }
}

/// Group magnitudes, in the order they are stored on disk.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScaleSet {
    pub s_pos_large: f32,
    pub s_pos_small: f32,
    pub s_neg_small: f32,
    pub s_neg_large: f32,
}

impl ScaleSet {
    pub fn to_array(self) -> [f32; 4] {
        [self.s_pos_large, self.s_pos_small, self.s_neg_small, self.s_neg_large]
    }

    pub fn from_array(a: [f32; 4]) -> Self {
        Self {
            s_pos_large: a[0],
            s_pos_small: a[1],
            s_neg_small: a[2],
            s_neg_large: a[3],
        }
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|s| s.is_finite() && *s >= 0.0)
    }
}

/// Median with the even-count rule `(a + b) / 2`, evaluated in f64.
fn median(values: &mut [f32]) -> Option<f64> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mid = n / 2;
    let (lower, upper, _) = values.select_nth_unstable_by(mid, f32::total_cmp);
    let upper = *upper as f64;
    if n % 2 == 1 {
        Some(upper)
    } else {
        let below = lower.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        Some((below + upper) / 2.0)
    }
}

#[derive(Default)]
struct Rms {
    sum_sq: f64,
    count: usize,
}

impl Rms {
    fn push(&mut self, v: f32) {
        let v = v as f64;
        self.sum_sq += v * v;
        self.count += 1;
    }

    fn value(&self) -> f32 {
        if self.count == 0 {
            0.0
        } else {
            (self.sum_sq / self.count as f64).sqrt() as f32
        }
    }
}

/// Assigns group codes and computes the scale set for `values`.
pub fn threshold_codes(values: &[f32], mode: CodecMode) -> Result<(GroupCodes, ScaleSet)> {
    if values.is_empty() {
        return Err(Error::EmptyInput("cannot threshold an empty array".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }

    let sign_bits = BitPlane::from_bools(values.iter().map(|&v| v > 0.0));

    if mode == CodecMode::TwoGroup {
        let (mut pos, mut nonpos) = (Rms::default(), Rms::default());
        for &v in values {
            if v > 0.0 {
                pos.push(v);
            } else {
                nonpos.push(v);
            }
        }
        let scales = ScaleSet {
            s_pos_large: pos.value(),
            s_pos_small: pos.value(),
            s_neg_small: nonpos.value(),
            s_neg_large: nonpos.value(),
        };
        let codes = GroupCodes::new(sign_bits, BitPlane::zeros(values.len())).unwrap();
        return Ok((codes, scales));
    }

    let mut positives: Vec<f32> = values.iter().copied().filter(|&v| v > 0.0).collect();
    let mut negatives: Vec<f32> = values.iter().copied().filter(|&v| v < 0.0).collect();
    let pos_median = median(&mut positives).unwrap_or(0.0);
    let neg_median = median(&mut negatives).unwrap_or(f64::NEG_INFINITY);

    let mut groups: [Rms; 4] = Default::default();
    let mag_bits = BitPlane::from_bools(values.iter().map(|&v| {
        let x = v as f64;
        let (group, bit) = if v > 0.0 {
            if x > pos_median {
                (0, true)
            } else {
                (1, false)
            }
        } else if x > neg_median {
            (2, true)
        } else {
            (3, false)
        };
        groups[group].push(v);
        bit
    }));

    let scales = if mode == CodecMode::NoScaling {
        ScaleSet::from_array([1.0; 4])
    } else {
        ScaleSet::from_array([
            groups[0].value(),
            groups[1].value(),
            groups[2].value(),
            groups[3].value(),
        ])
    };
    Ok((GroupCodes::new(sign_bits, mag_bits).unwrap(), scales))
}

/// Maps each element's code back to its group's signed scale.
pub fn apply_codes(codes: &GroupCodes, scales: &ScaleSet) -> Vec<f32> {
    codes
        .sign_bits
        .iter()
        .zip(codes.mag_bits.iter())
        .map(|(sign, mag)| match (sign, mag) {
            (true, true) => scales.s_pos_large,
            (true, false) => scales.s_pos_small,
            (false, true) => -scales.s_neg_small,
            (false, false) => -scales.s_neg_large,
        })
        .collect()
}
