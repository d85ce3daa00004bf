//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use dts_core::bench::BenchRng;
use dts_core::lowrank::CodecMode;

/// Group of one element: 0 = positive large, 1 = positive small,
/// 2 = non-positive small, 3 = non-positive large.
pub struct OracleGroups {
    pub groups: Vec<usize>,
    /// RMS per group in the order above.
    pub scales: [f64; 4],
}

fn sorted_median(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some((sorted[n / 2 - 1] + sorted[n / 2]) / 2.0),
    }
}

fn rms(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
    }
}

/// Brute-force grouping by full sort.
pub fn oracle_groups(values: &[f32], mode: CodecMode) -> OracleGroups {
    let xs: Vec<f64> = values.iter().map(|&v| v as f64).collect();
    let mut pos: Vec<f64> = xs.iter().copied().filter(|&x| x > 0.0).collect();
    let mut neg: Vec<f64> = xs.iter().copied().filter(|&x| x < 0.0).collect();
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let l1 = sorted_median(&pos).unwrap_or(0.0);
    let l2 = sorted_median(&neg).unwrap_or(f64::NEG_INFINITY);
    let groups: Vec<usize> = xs
        .iter()
        .map(|&x| match (x > 0.0, mode) {
            (true, CodecMode::TwoGroup) => 1,
            (false, CodecMode::TwoGroup) => 3,
            (true, _) => {
                if x > l1 {
                    0
                } else {
                    1
                }
            }
            (false, _) => {
                if x > l2 {
                    2
                } else {
                    3
                }
            }
        })
        .collect();
    let mut scales = [0.0; 4];
    for (g, s) in scales.iter_mut().enumerate() {
        let members: Vec<f64> = xs
            .iter()
            .zip(&groups)
            .filter(|(_, &h)| h == g)
            .map(|(x, _)| *x)
            .collect();
        *s = match mode {
            CodecMode::NoScaling => 1.0,
            _ => rms(&members),
        };
    }
    if mode == CodecMode::TwoGroup {
        // both slots of a sign carry that sign's RMS
        scales = [scales[1], scales[1], scales[3], scales[3]];
    }
    OracleGroups { groups, scales }
}

/// Singular values by one-sided Jacobi rotations, descending.
pub fn jacobi_singular_values(rows: usize, cols: usize, data: &[f64]) -> Vec<f64> {
    let (m, n, a) = if rows >= cols {
        (rows, cols, data.to_vec())
    } else {
        let mut t = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                t[j * rows + i] = data[i * cols + j];
            }
        }
        (cols, rows, t)
    };
    // column-major copy: col j occupies cols[j]
    let mut c: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a[i * n + j]).collect()).collect();
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha: f64 = c[p].iter().map(|v| v * v).sum();
                let beta: f64 = c[q].iter().map(|v| v * v).sum();
                let gamma: f64 = c[p].iter().zip(&c[q]).map(|(x, y)| x * y).sum();
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                let (left, right) = c.split_at_mut(q);
                for (x, y) in left[p].iter_mut().zip(right[0].iter_mut()) {
                    let (a, b) = (*x, *y);
                    *x = cs * a - sn * b;
                    *y = sn * a + cs * b;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = c
        .iter()
        .map(|col| col.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Mix of Gaussian and Student-t(3) draws.
pub fn heavy_tailed_vector(rng: &mut BenchRng, len: usize) -> Vec<f32> {
    let heavy = rng.uniform() < 0.5;
    (0..len)
        .map(|_| {
            let z = rng.normal();
            if heavy {
                let chi: f64 = (0..3).map(|_| rng.normal().powi(2)).sum();
                (z / (chi / 3.0).sqrt()) as f32
            } else {
                z as f32
            }
        })
        .collect()
}

pub fn frobenius(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| ((*x as f64) - (*y as f64)).powi(2))
        .sum::<f64>()
        .sqrt()
}
