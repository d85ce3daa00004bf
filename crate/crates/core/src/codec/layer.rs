use super::quantize::{apply_codes, threshold_codes, GroupCodes, ScaleSet};
use crate::error::{Error, Result};
use crate::lowrank::{rank_for_ratio, truncated_svd, CodecConfig, CodecMode};
use crate::tensor::{as_matrix, Tensor};

/// Compressed representation of one layer's delta.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    pub name: String,
    pub original_shape: Vec<usize>,
    pub mode: CodecMode,
    pub payload: LayerPayload,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerPayload {
    /// Rank-1 tensors are thresholded directly.
    Vec1D { codes: GroupCodes, scales: ScaleSet },
    /// Everything else: grouped U and Vt around exact singular values.
    Mat2D {
        m: usize,
        n: usize,
        k: usize,
        u_codes: GroupCodes,
        v_codes: GroupCodes,
        sigma: Vec<f32>,
        u_scales: ScaleSet,
        v_scales: ScaleSet,
    },
}

impl LayerRecord {
    pub fn num_elements(&self) -> usize {
        self.original_shape.iter().product()
    }

    /// Checks internal length and shape consistency.
    pub fn validate(&self) -> Result<()> {
        let corrupt = |reason: String| Error::CorruptRecord {
            name: self.name.clone(),
            reason,
        };
        if self.original_shape.is_empty() || self.original_shape.contains(&0) {
            return Err(corrupt(format!("bad shape {:?}", self.original_shape)));
        }
        let total = self.num_elements();
        match &self.payload {
            LayerPayload::Vec1D { codes, scales } => {
                if self.original_shape.len() != 1 {
                    return Err(corrupt("vector record with rank != 1 shape".into()));
                }
                if codes.len() != total || codes.mag_bits.len() != total {
                    return Err(corrupt(format!("codes hold {} of {total} elements", codes.len())));
                }
                if !scales.is_valid() {
                    return Err(corrupt("invalid scales".into()));
                }
            }
            LayerPayload::Mat2D {
                m,
                n,
                k,
                u_codes,
                v_codes,
                sigma,
                u_scales,
                v_scales,
            } => {
                if self.original_shape.len() < 2 || *m != self.original_shape[0] || m * n != total {
                    return Err(corrupt(format!(
                        "{m}x{n} does not fold shape {:?}",
                        self.original_shape
                    )));
                }
                if *k == 0 || *k > (*m).min(*n) {
                    return Err(corrupt(format!("rank {k} out of range")));
                }
                if u_codes.len() != m * k || u_codes.mag_bits.len() != m * k {
                    return Err(corrupt(format!("u_codes.len {} != m*k {}", u_codes.len(), m * k)));
                }
                if v_codes.len() != k * n || v_codes.mag_bits.len() != k * n {
                    return Err(corrupt(format!("v_codes.len {} != k*n {}", v_codes.len(), k * n)));
                }
                if sigma.len() != *k || sigma.iter().any(|s| !s.is_finite() || *s < 0.0) {
                    return Err(corrupt("invalid singular values".into()));
                }
                if !u_scales.is_valid() || !v_scales.is_valid() {
                    return Err(corrupt("invalid scales".into()));
                }
            }
        }
        Ok(())
    }
}

pub fn encode_layer(name: &str, delta: &Tensor, config: &CodecConfig) -> Result<LayerRecord> {
    crate::lowrank::validate_ratio(config.r)?;
    let payload = if delta.rank() == 1 {
        let (codes, scales) = threshold_codes(delta.data(), config.mode)?;
        LayerPayload::Vec1D { codes, scales }
    } else {
        let (matrix, _) = as_matrix(delta)?;
        let (m, n) = (matrix.rows, matrix.cols);
        let k = rank_for_ratio(m, n, config.r)?;
        let factors = truncated_svd(&matrix, k)?;
        let u: Vec<f32> = factors.u.iter().map(|&v| v as f32).collect();
        let vt: Vec<f32> = factors.vt.iter().map(|&v| v as f32).collect();
        let (u_codes, u_scales) = threshold_codes(&u, config.mode)?;
        let (v_codes, v_scales) = threshold_codes(&vt, config.mode)?;
        LayerPayload::Mat2D {
            m,
            n,
            k,
            u_codes,
            v_codes,
            sigma: factors.sigma.iter().map(|&s| s as f32).collect(),
            u_scales,
            v_scales,
        }
    };
    Ok(LayerRecord {
        name: name.to_string(),
        original_shape: delta.shape().to_vec(),
        mode: config.mode,
        payload,
    })
}

/// Reconstructs the approximate delta `Û · diag(σ) · V̂t` (or the decoded
/// vector), reshaped to the original shape.
pub fn decode_layer(record: &LayerRecord) -> Result<Tensor> {
    record.validate()?;
    let data = match &record.payload {
        LayerPayload::Vec1D { codes, scales } => apply_codes(codes, scales),
        LayerPayload::Mat2D {
            m,
            n,
            k,
            u_codes,
            v_codes,
            sigma,
            u_scales,
            v_scales,
        } => {
            let (m, n, k) = (*m, *n, *k);
            let u = apply_codes(u_codes, u_scales);
            let vt = apply_codes(v_codes, v_scales);
            let mut acc = vec![0.0f64; m * n];
            for i in 0..m {
                let row = &mut acc[i * n..(i + 1) * n];
                for l in 0..k {
                    let a = u[i * k + l] as f64 * sigma[l] as f64;
                    if a == 0.0 {
                        continue;
                    }
                    for (o, &v) in row.iter_mut().zip(&vt[l * n..(l + 1) * n]) {
                        *o += a * v as f64;
                    }
                }
            }
            acc.into_iter().map(|v| v as f32).collect()
        }
    };
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteResult(record.name.clone()));
    }
    Tensor::new(record.original_shape.clone(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::bitplane::BitPlane;

    fn cfg(r: f64, mode: CodecMode) -> CodecConfig {
        CodecConfig::new(r, mode).unwrap()
    }

    #[test]
    fn zero_matrix_decodes_to_zero() {
        let t = Tensor::zeros(vec![8, 8]).unwrap();
        let rec = encode_layer("w", &t, &cfg(0.3, CodecMode::FourGroup)).unwrap();
        match &rec.payload {
            LayerPayload::Mat2D { k, sigma, .. } => {
                assert_eq!(*k, 3);
                assert!(sigma.iter().all(|&s| s == 0.0));
            }
            _ => panic!("expected a matrix record"),
        }
        assert!(decode_layer(&rec).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bias_uses_vector_path() {
        let data: Vec<f32> = (0..16).map(|i| (i as f32 - 7.5) * 0.1).collect();
        let t = Tensor::new(vec![16], data.clone()).unwrap();
        let rec = encode_layer("b", &t, &cfg(0.3, CodecMode::FourGroup)).unwrap();
        assert!(matches!(rec.payload, LayerPayload::Vec1D { .. }));
        let (codes, scales) = threshold_codes(&data, CodecMode::FourGroup).unwrap();
        assert_eq!(
            decode_layer(&rec).unwrap().data(),
            apply_codes(&codes, &scales).as_slice()
        );
    }

    #[test]
    fn six_element_vector_round_trip() {
        let t = Tensor::new(vec![6], vec![4.0, 1.0, -3.0, -1.0, 2.0, -5.0]).unwrap();
        let rec = encode_layer("v", &t, &cfg(1.0, CodecMode::FourGroup)).unwrap();
        let out = decode_layer(&rec).unwrap();
        let expected = [4.0, 1.5811388, -4.1231055, -1.0, 1.5811388, -4.1231055];
        for (d, e) in out.data().iter().zip(expected) {
            assert!((d - e).abs() < 1e-6);
        }
    }

    #[test]
    fn rank3_tensor_keeps_shape() {
        let data: Vec<f32> = (0..60).map(|i| ((i * 37 % 17) as f32 - 8.0) * 0.05).collect();
        let t = Tensor::new(vec![3, 4, 5], data).unwrap();
        let rec = encode_layer("conv", &t, &cfg(0.5, CodecMode::FourGroup)).unwrap();
        match &rec.payload {
            LayerPayload::Mat2D { m, n, k, .. } => assert_eq!((*m, *n, *k), (3, 20, 2)),
            _ => panic!(),
        }
        assert_eq!(decode_layer(&rec).unwrap().shape(), &[3, 4, 5]);
    }

    #[test]
    fn corrupt_lengths_are_rejected() {
        let t = Tensor::new(vec![4, 4], (0..16).map(|i| i as f32).collect()).unwrap();
        let mut rec = encode_layer("w", &t, &cfg(0.5, CodecMode::FourGroup)).unwrap();
        if let LayerPayload::Mat2D { u_codes, .. } = &mut rec.payload {
            *u_codes = GroupCodes::new(BitPlane::zeros(3), BitPlane::zeros(3)).unwrap();
        }
        assert!(matches!(decode_layer(&rec), Err(Error::CorruptRecord { .. })));
    }

    #[test]
    fn invalid_ratio_is_reported() {
        let t = Tensor::zeros(vec![2, 2]).unwrap();
        let bad = CodecConfig {
            r: 0.0,
            mode: CodecMode::FourGroup,
        };
        assert!(matches!(encode_layer("w", &t, &bad), Err(Error::InvalidRatio(_))));
    }
}
