//! DTSA on-disk layout:
//!
//! ```text
//! "DTSA" | u16 version=1 | u16 flags=0 | u32 manifest_len | manifest JSON | payload | u32 CRC32(payload)
//! ```
//!
//! All integers are little-endian. The manifest lists every layer with the
//! byte ranges of its sections inside the payload. Bitplanes are packed
//! LSB-first in row-major element order; sigma and scales are f32 LE.
//! Matrix layers store `u_sign, u_mag, v_sign, v_mag, sigma, scales` (8 f32,
//! U's four then Vt's four); vector layers store `sign, mag, scales` (4 f32).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{BaseKind, BitPlane, DtsArchive, GroupCodes, LayerPayload, LayerRecord, ScaleSet};
use crate::error::{Error, Result};
use crate::lowrank::{CodecConfig, CodecMode};

pub const MAGIC: [u8; 4] = *b"DTSA";
pub const VERSION: u16 = 1;
const PREAMBLE: usize = 12;

type Span = [u64; 2];

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    task_name: String,
    base_kind: BaseKind,
    base_fingerprint: String,
    config: CodecConfig,
    payload_len: u64,
    layers: Vec<ManifestLayer>,
}

#[derive(Serialize, Deserialize, PartialEq, Eq, Clone, Copy)]
#[serde(rename_all = "snake_case")]
enum LayerKind {
    Vec1d,
    Mat2d,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestLayer {
    name: String,
    kind: LayerKind,
    original_shape: Vec<usize>,
    mode: CodecMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    sections: Vec<(String, Span)>,
}

struct PayloadWriter {
    bytes: Vec<u8>,
    sections: Vec<(String, Span)>,
}

impl PayloadWriter {
    fn push(&mut self, label: &str, data: &[u8]) {
        let begin = self.bytes.len() as u64;
        self.bytes.extend_from_slice(data);
        self.sections
            .push((label.to_string(), [begin, self.bytes.len() as u64]));
    }

    fn push_f32s(&mut self, label: &str, values: &[f32]) {
        let raw: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.push(label, &raw);
    }

    fn take_sections(&mut self) -> Vec<(String, Span)> {
        std::mem::take(&mut self.sections)
    }
}

pub fn encode_archive(archive: &DtsArchive) -> Vec<u8> {
    let mut payload = PayloadWriter {
        bytes: Vec::new(),
        sections: Vec::new(),
    };
    let mut layers = Vec::with_capacity(archive.records.len());
    for record in &archive.records {
        let (kind, dims) = match &record.payload {
            LayerPayload::Vec1D { codes, scales } => {
                payload.push("sign", codes.sign_bits.as_bytes());
                payload.push("mag", codes.mag_bits.as_bytes());
                payload.push_f32s("scales", &scales.to_array());
                (LayerKind::Vec1d, None)
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
                payload.push("u_sign", u_codes.sign_bits.as_bytes());
                payload.push("u_mag", u_codes.mag_bits.as_bytes());
                payload.push("v_sign", v_codes.sign_bits.as_bytes());
                payload.push("v_mag", v_codes.mag_bits.as_bytes());
                payload.push_f32s("sigma", sigma);
                let mut scales = u_scales.to_array().to_vec();
                scales.extend_from_slice(&v_scales.to_array());
                payload.push_f32s("scales", &scales);
                (LayerKind::Mat2d, Some((*m, *n, *k)))
            }
        };
        layers.push(ManifestLayer {
            name: record.name.clone(),
            kind,
            original_shape: record.original_shape.clone(),
            mode: record.mode,
            m: dims.map(|d| d.0),
            n: dims.map(|d| d.1),
            k: dims.map(|d| d.2),
            sections: payload.take_sections(),
        });
    }

    let manifest = Manifest {
        task_name: archive.task_name.clone(),
        base_kind: archive.base_kind,
        base_fingerprint: format!("{:016x}", archive.base_fingerprint),
        config: archive.config,
        payload_len: payload.bytes.len() as u64,
        layers,
    };
    let manifest = serde_json::to_vec(&manifest).expect("manifest serializes");

    let mut out = Vec::with_capacity(PREAMBLE + manifest.len() + payload.bytes.len() + 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest);
    out.extend_from_slice(&payload.bytes);
    out.extend_from_slice(&crc32fast::hash(&payload.bytes).to_le_bytes());
    out
}

pub fn write_archive(archive: &DtsArchive, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_archive(archive))?;
    Ok(())
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<DtsArchive> {
    decode_archive(&fs::read(path)?)
}

pub fn decode_archive(bytes: &[u8]) -> Result<DtsArchive> {
    if bytes.len() >= 4 && bytes[..4] != MAGIC {
        return Err(Error::BadMagic(bytes[..4].try_into().unwrap()));
    }
    if bytes.len() < PREAMBLE {
        return Err(Error::OffsetOutOfRange(format!(
            "file is {} bytes, preamble needs {PREAMBLE}",
            bytes.len()
        )));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let manifest_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let manifest_end = PREAMBLE
        .checked_add(manifest_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::OffsetOutOfRange(format!("manifest of {manifest_len} bytes")))?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes[PREAMBLE..manifest_end]).map_err(|e| Error::ManifestJsonError(e.to_string()))?;

    let payload_len =
        usize::try_from(manifest.payload_len).map_err(|_| Error::OffsetOutOfRange("payload length".into()))?;
    let expected_len = manifest_end
        .checked_add(payload_len)
        .and_then(|v| v.checked_add(4))
        .ok_or_else(|| Error::OffsetOutOfRange("payload length".into()))?;
    if expected_len != bytes.len() {
        return Err(Error::OffsetOutOfRange(format!(
            "manifest implies {expected_len} bytes, file has {}",
            bytes.len()
        )));
    }
    let payload = &bytes[manifest_end..manifest_end + payload_len];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }

    let base_fingerprint = u64::from_str_radix(&manifest.base_fingerprint, 16)
        .map_err(|e| Error::ManifestJsonError(format!("base_fingerprint: {e}")))?;
    crate::lowrank::validate_ratio(manifest.config.r)
        .map_err(|_| Error::ManifestJsonError(format!("config.r = {}", manifest.config.r)))?;

    let mut records = Vec::with_capacity(manifest.layers.len());
    for layer in &manifest.layers {
        let record = decode_layer_record(layer, payload)?;
        record.validate()?;
        records.push(record);
    }
    if records.windows(2).any(|w| w[0].name >= w[1].name) {
        return Err(Error::ManifestJsonError("layers are not sorted by unique name".into()));
    }
    Ok(DtsArchive {
        task_name: manifest.task_name,
        base_kind: manifest.base_kind,
        base_fingerprint,
        config: manifest.config,
        records,
    })
}

struct SectionReader<'a> {
    layer: &'a ManifestLayer,
    payload: &'a [u8],
    next: usize,
}

impl<'a> SectionReader<'a> {
    fn corrupt(&self, reason: String) -> Error {
        Error::CorruptRecord {
            name: self.layer.name.clone(),
            reason,
        }
    }

    fn take(&mut self, label: &str, expected_len: usize) -> Result<&'a [u8]> {
        let (got_label, [begin, end]) = self
            .layer
            .sections
            .get(self.next)
            .ok_or_else(|| self.corrupt(format!("missing section {label}")))?;
        if got_label != label {
            return Err(self.corrupt(format!("expected section {label}, found {got_label}")));
        }
        self.next += 1;
        if begin > end || *end > self.payload.len() as u64 {
            return Err(Error::OffsetOutOfRange(format!(
                "{}/{label}: [{begin}, {end}] outside payload of {} bytes",
                self.layer.name,
                self.payload.len()
            )));
        }
        let slice = &self.payload[*begin as usize..*end as usize];
        if slice.len() != expected_len {
            return Err(self.corrupt(format!(
                "section {label} holds {} bytes, expected {expected_len}",
                slice.len()
            )));
        }
        Ok(slice)
    }

    fn plane(&mut self, label: &str, bits: usize) -> Result<BitPlane> {
        let raw = self.take(label, bits.div_ceil(8))?.to_vec();
        BitPlane::from_bytes(bits, raw).ok_or_else(|| self.corrupt(format!("pad bits set in {label}")))
    }

    fn codes(&mut self, prefix: &str, bits: usize) -> Result<GroupCodes> {
        let sign = self.plane(&format!("{prefix}sign"), bits)?;
        let mag = self.plane(&format!("{prefix}mag"), bits)?;
        Ok(GroupCodes::new(sign, mag).expect("equal lengths by construction"))
    }

    fn f32s(&mut self, label: &str, count: usize) -> Result<Vec<f32>> {
        Ok(self
            .take(label, 4 * count)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn finish(self) -> Result<()> {
        if self.next != self.layer.sections.len() {
            return Err(self.corrupt("unexpected trailing sections".into()));
        }
        Ok(())
    }
}

fn decode_layer_record(layer: &ManifestLayer, payload: &[u8]) -> Result<LayerRecord> {
    let mut reader = SectionReader {
        layer,
        payload,
        next: 0,
    };
    let total = layer
        .original_shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| reader.corrupt("shape overflows".into()))?;
    let payload = match layer.kind {
        LayerKind::Vec1d => {
            let codes = reader.codes("", total)?;
            let scales = reader.f32s("scales", 4)?;
            LayerPayload::Vec1D {
                codes,
                scales: ScaleSet::from_array(scales.try_into().unwrap()),
            }
        }
        LayerKind::Mat2d => {
            let (Some(m), Some(n), Some(k)) = (layer.m, layer.n, layer.k) else {
                return Err(reader.corrupt("matrix layer without m/n/k".into()));
            };
            let mk = m.checked_mul(k).ok_or_else(|| reader.corrupt("m*k overflows".into()))?;
            let kn = k.checked_mul(n).ok_or_else(|| reader.corrupt("k*n overflows".into()))?;
            let u_codes = reader.codes("u_", mk)?;
            let v_codes = reader.codes("v_", kn)?;
            let sigma = reader.f32s("sigma", k)?;
            let scales = reader.f32s("scales", 8)?;
            LayerPayload::Mat2D {
                m,
                n,
                k,
                u_codes,
                v_codes,
                sigma,
                u_scales: ScaleSet::from_array(scales[..4].try_into().unwrap()),
                v_scales: ScaleSet::from_array(scales[4..].try_into().unwrap()),
            }
        }
    };
    reader.finish()?;
    Ok(LayerRecord {
        name: layer.name.clone(),
        original_shape: layer.original_shape.clone(),
        mode: layer.mode,
        payload,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::encode_task;
    use crate::tensor::{DeltaKind, DeltaMap, Tensor, TensorMap};

    fn fixture() -> DtsArchive {
        let delta = TensorMap::from_entries([
            (
                "w",
                Tensor::new(vec![5, 3], (0..15).map(|i| ((i * 7) % 5) as f32 - 2.0).collect()).unwrap(),
            ),
            (
                "b",
                Tensor::new(vec![9], (0..9).map(|i| i as f32 - 4.5).collect()).unwrap(),
            ),
        ])
        .unwrap();
        let cfg = CodecConfig::new(0.5, CodecMode::FourGroup).unwrap();
        encode_task(
            "fixture",
            &DeltaMap::from_map(delta, DeltaKind::TaskVector),
            0xdead_beef,
            &cfg,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_and_determinism() {
        let a = fixture();
        let bytes = encode_archive(&a);
        assert_eq!(bytes, encode_archive(&a));
        let back = decode_archive(&bytes).unwrap();
        assert_eq!(back, a);
        assert_eq!(encode_archive(&back), bytes);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_archive(&fixture());
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_archive(&bytes), Err(Error::BadMagic(m)) if &m == b"XXXX"));
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = encode_archive(&fixture());
        bytes.pop();
        assert_eq!(decode_archive(&bytes).unwrap_err().name(), "OffsetOutOfRange");
    }

    #[test]
    fn flipped_payload_bit_fails_checksum() {
        let mut bytes = encode_archive(&fixture());
        let idx = bytes.len() - 10;
        bytes[idx] ^= 0x01;
        assert_eq!(decode_archive(&bytes).unwrap_err().name(), "ChecksumMismatch");
    }

    #[test]
    fn unsupported_version() {
        let mut bytes = encode_archive(&fixture());
        bytes[4] = 9;
        assert!(matches!(decode_archive(&bytes), Err(Error::UnsupportedVersion(9))));
    }

    #[test]
    fn broken_manifest() {
        let mut bytes = encode_archive(&fixture());
        bytes[PREAMBLE] = b'[';
        assert_eq!(decode_archive(&bytes).unwrap_err().name(), "ManifestJsonError");
    }
}
