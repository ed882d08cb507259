//! Flat checkpoint container: a little-endian u64 header length, a JSON
//! header mapping tensor names to dtype/shape/offsets, then one contiguous
//! payload. The layout mirrors the widely used single-file checkpoint
//! format so real checkpoints convert losslessly.
//!
//! Only F32 and F16 dtypes are supported; F16 is upcast to F32 for
//! arithmetic elsewhere.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Element type of a stored tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    F32,
    F16,
}

impl Dtype {
    pub fn byte_size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F16 => 2,
        }
    }

    fn parse(name: &str) -> Result<Dtype> {
        match name {
            "F32" => Ok(Dtype::F32),
            "F16" => Ok(Dtype::F16),
            other => Err(Error::Parse(format!("unknown dtype {other:?}"))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "F32",
            Dtype::F16 => "F16",
        }
    }
}

/// One named tensor: raw little-endian bytes plus dtype and shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub data: Vec<u8>,
}

impl Tensor {
    pub fn new(dtype: Dtype, shape: Vec<usize>, data: Vec<u8>) -> Result<Tensor> {
        let elements = element_count(&shape)?;
        let expected = elements
            .checked_mul(dtype.byte_size())
            .ok_or_else(|| Error::Precondition("tensor byte size overflows".into()))?;
        if data.len() != expected {
            return Err(Error::Precondition(format!(
                "tensor data length {} inconsistent with dtype {} x shape {:?} (expected {})",
                data.len(),
                dtype.name(),
                shape,
                expected
            )));
        }
        Ok(Tensor { dtype, shape, data })
    }

    pub fn from_f32(shape: Vec<usize>, values: &[f32]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(values.len() * 4);
        for v in values {
            data.extend_from_slice(&v.to_le_bytes());
        }
        Tensor::new(Dtype::F32, shape, data)
    }

    pub fn element_count(&self) -> usize {
        self.data.len() / self.dtype.byte_size().max(1)
    }

    /// Decodes to f32, upcasting F16 elements.
    pub fn to_f32_vec(&self) -> Vec<f32> {
        match self.dtype {
            Dtype::F32 => self
                .data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
            Dtype::F16 => self
                .data
                .chunks_exact(2)
                .map(|c| f16_to_f32(u16::from_le_bytes([c[0], c[1]])))
                .collect(),
        }
    }
}

fn element_count(shape: &[usize]) -> Result<usize> {
    shape.iter().try_fold(1usize, |acc, &dim| {
        acc.checked_mul(dim)
            .ok_or_else(|| Error::Precondition(format!("shape {shape:?} overflows element count")))
    })
}

/// A named-tensor checkpoint with free-form string metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorArchive {
    pub tensors: BTreeMap<String, Tensor>,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct HeaderEntry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [usize; 2],
}

impl TensorArchive {
    pub fn new() -> Self {
        TensorArchive::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    /// Serializes with a canonical layout: tensors in name order, offsets
    /// contiguous from zero, header keys sorted. Re-serializing a parsed
    /// archive reproduces the original bytes.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut header: BTreeMap<String, Value> = BTreeMap::new();
        if !self.metadata.is_empty() {
            header.insert(
                "__metadata__".to_string(),
                serde_json::to_value(&self.metadata).expect("string map"),
            );
        }
        let mut offset = 0usize;
        for (name, tensor) in &self.tensors {
            if name == "__metadata__" {
                return Err(Error::Precondition(
                    "tensor name \"__metadata__\" is reserved".into(),
                ));
            }
            let end = offset
                .checked_add(tensor.data.len())
                .ok_or_else(|| Error::Precondition("payload size overflows".into()))?;
            header.insert(
                name.clone(),
                serde_json::to_value(HeaderEntry {
                    dtype: tensor.dtype.name().to_string(),
                    shape: tensor.shape.clone(),
                    data_offsets: [offset, end],
                })
                .expect("header entry"),
            );
            offset = end;
        }
        let header_json = serde_json::to_vec(&header)
            .map_err(|e| Error::Precondition(format!("header not serializable: {e}")))?;

        let mut out = Vec::with_capacity(8 + header_json.len() + offset);
        out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_json);
        for tensor in self.tensors.values() {
            out.extend_from_slice(&tensor.data);
        }
        Ok(out)
    }

    /// Parses the archive layout. `origin` is only used in error messages.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let fail = |message: String| Error::format(origin, message);
        if bytes.len() < 8 {
            return Err(fail("file too short for header length".into()));
        }
        let header_len = u64::from_le_bytes(bytes[0..8].try_into().unwrap());
        let header_len = usize::try_from(header_len)
            .map_err(|_| fail(format!("header length {header_len} too large")))?;
        let payload_start = 8usize
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| fail(format!("header length {header_len} exceeds file size")))?;
        let header: BTreeMap<String, Value> = serde_json::from_slice(&bytes[8..payload_start])
            .map_err(|e| fail(format!("header is not a JSON object: {e}")))?;
        let payload = &bytes[payload_start..];

        let mut metadata = BTreeMap::new();
        let mut spans: Vec<(usize, usize, String)> = Vec::new();
        let mut tensors = BTreeMap::new();
        for (name, value) in header {
            if name == "__metadata__" {
                metadata = serde_json::from_value(value)
                    .map_err(|e| fail(format!("__metadata__ must map strings to strings: {e}")))?;
                continue;
            }
            let entry: HeaderEntry = serde_json::from_value(value)
                .map_err(|e| fail(format!("tensor {name:?}: bad header entry: {e}")))?;
            let dtype =
                Dtype::parse(&entry.dtype).map_err(|e| fail(format!("tensor {name:?}: {e}")))?;
            let [start, end] = entry.data_offsets;
            if start > end || end > payload.len() {
                return Err(fail(format!(
                    "tensor {name:?}: offsets [{start}, {end}] out of bounds for payload of {} bytes",
                    payload.len()
                )));
            }
            let expected = element_count(&entry.shape)
                .map_err(|e| fail(format!("tensor {name:?}: {e}")))?
                .checked_mul(dtype.byte_size())
                .ok_or_else(|| fail(format!("tensor {name:?}: byte size overflows")))?;
            if end - start != expected {
                return Err(fail(format!(
                    "tensor {name:?}: offsets span {} bytes but dtype {} x shape {:?} needs {expected}",
                    end - start,
                    entry.dtype,
                    entry.shape
                )));
            }
            spans.push((start, end, name.clone()));
            tensors.insert(
                name,
                Tensor {
                    dtype,
                    shape: entry.shape,
                    data: payload[start..end].to_vec(),
                },
            );
        }

        spans.sort();
        for pair in spans.windows(2) {
            let (_, prev_end, prev_name) = &pair[0];
            let (next_start, _, next_name) = &pair[1];
            if next_start < prev_end {
                return Err(fail(format!(
                    "tensors {prev_name:?} and {next_name:?} have overlapping offsets"
                )));
            }
        }

        Ok(TensorArchive { tensors, metadata })
    }
}

/// Reads a tensor archive file.
pub fn read_tensor_archive(path: impl AsRef<Path>) -> Result<TensorArchive> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    TensorArchive::from_bytes(&bytes, path)
}

/// Writes a tensor archive file.
pub fn write_tensor_archive(archive: &TensorArchive, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, archive.to_bytes()?).map_err(|e| Error::io(path, e))
}

/// IEEE 754 binary16 to binary32.
pub fn f16_to_f32(bits: u16) -> f32 {
    let sign = u32::from(bits >> 15) << 31;
    let exp = u32::from((bits >> 10) & 0x1F);
    let frac = u32::from(bits & 0x3FF);
    let out = if exp == 0 {
        if frac == 0 {
            sign
        } else {
            // Subnormal: renormalize into the f32 exponent range.
            let mut exp_adj: i32 = -14;
            let mut frac = frac;
            while frac & 0x400 == 0 {
                frac <<= 1;
                exp_adj -= 1;
            }
            sign | (((exp_adj + 127) as u32) << 23) | ((frac & 0x3FF) << 13)
        }
    } else if exp == 0x1F {
        sign | 0x7F80_0000 | (frac << 13)
    } else {
        sign | ((exp + 127 - 15) << 23) | (frac << 13)
    };
    f32::from_bits(out)
}

/// IEEE 754 binary32 to binary16 with round-to-nearest-even.
pub fn f32_to_f16(value: f32) -> u16 {
    let bits = value.to_bits();
    let sign = ((bits >> 16) & 0x8000) as u16;
    let exp = ((bits >> 23) & 0xFF) as i32;
    let frac = bits & 0x7F_FFFF;

    if exp == 0xFF {
        // Inf / NaN; keep the top fraction bits so NaN stays NaN.
        let payload = (frac >> 13) as u16;
        let payload = if frac != 0 && payload == 0 { 1 } else { payload };
        return sign | 0x7C00 | payload;
    }
    let unbiased = exp - 127;
    if unbiased > 15 {
        return sign | 0x7C00; // overflow to infinity
    }
    if unbiased >= -14 {
        // Normal f16 range.
        let exp16 = (unbiased + 15) as u32;
        let mantissa = frac >> 13;
        let rest = frac & 0x1FFF;
        let mut out = (exp16 << 10) | mantissa;
        if rest > 0x1000 || (rest == 0x1000 && (mantissa & 1) == 1) {
            out += 1; // may carry into the exponent, which is still correct
        }
        return sign | out as u16;
    }
    if unbiased < -25 {
        return sign; // underflow to zero
    }
    // Subnormal f16.
    let full = frac | 0x80_0000;
    let shift = (-14 - unbiased + 13) as u32;
    let mantissa = full >> shift;
    let rest = full & ((1 << shift) - 1);
    let halfway = 1u32 << (shift - 1);
    let mut out = mantissa;
    if rest > halfway || (rest == halfway && (mantissa & 1) == 1) {
        out += 1;
    }
    sign | out as u16
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn origin() -> PathBuf {
        PathBuf::from("test.tensors")
    }

    #[test]
    fn single_f32_tensor_payload_size() {
        let mut archive = TensorArchive::new();
        archive.insert(
            "w",
            Tensor::from_f32(vec![2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap(),
        );
        let bytes = archive.to_bytes().unwrap();
        let header_len = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
        assert_eq!(bytes.len() - 8 - header_len, 16);
    }

    #[test]
    fn round_trip_preserves_bytes() {
        let mut archive = TensorArchive::new();
        archive.insert("b", Tensor::from_f32(vec![3], &[0.5, -1.5, 2.0]).unwrap());
        archive.insert(
            "a",
            Tensor::new(Dtype::F16, vec![2], vec![0x00, 0x3C, 0x00, 0x40]).unwrap(),
        );
        archive.metadata.insert("origin".into(), "unit test".into());

        let bytes = archive.to_bytes().unwrap();
        let back = TensorArchive::from_bytes(&bytes, &origin()).unwrap();
        assert_eq!(back, archive);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn overlapping_offsets_rejected() {
        let header = r#"{"a":{"dtype":"F32","shape":[4],"data_offsets":[0,16]},"b":{"dtype":"F32","shape":[4],"data_offsets":[8,24]}}"#;
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
        bytes.extend_from_slice(header.as_bytes());
        bytes.extend_from_slice(&[0u8; 24]);
        let err = TensorArchive::from_bytes(&bytes, &origin()).unwrap_err();
        assert!(err.to_string().contains("overlapping"), "{err}");
    }

    #[test]
    fn unknown_dtype_rejected() {
        let header = r#"{"a":{"dtype":"I64","shape":[1],"data_offsets":[0,8]}}"#;
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
        bytes.extend_from_slice(header.as_bytes());
        bytes.extend_from_slice(&[0u8; 8]);
        let err = TensorArchive::from_bytes(&bytes, &origin()).unwrap_err();
        assert!(err.to_string().contains("dtype"), "{err}");
    }

    #[test]
    fn shape_offset_mismatch_rejected() {
        let header = r#"{"a":{"dtype":"F32","shape":[3],"data_offsets":[0,16]}}"#;
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
        bytes.extend_from_slice(header.as_bytes());
        bytes.extend_from_slice(&[0u8; 16]);
        let err = TensorArchive::from_bytes(&bytes, &origin()).unwrap_err();
        assert!(err.to_string().contains("needs"), "{err}");
    }

    #[test]
    fn out_of_bounds_offsets_rejected() {
        let header = r#"{"a":{"dtype":"F32","shape":[4],"data_offsets":[0,16]}}"#;
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
        bytes.extend_from_slice(header.as_bytes());
        bytes.extend_from_slice(&[0u8; 8]);
        let err = TensorArchive::from_bytes(&bytes, &origin()).unwrap_err();
        assert!(err.to_string().contains("out of bounds"), "{err}");
    }

    #[test]
    fn every_prefix_truncation_is_rejected() {
        let mut archive = TensorArchive::new();
        archive.insert("w", Tensor::from_f32(vec![3], &[1.0, 2.0, 3.0]).unwrap());
        let bytes = archive.to_bytes().unwrap();
        for len in 0..bytes.len() {
            assert!(
                TensorArchive::from_bytes(&bytes[..len], &origin()).is_err(),
                "prefix of {len} bytes parsed"
            );
        }
    }

    #[test]
    fn f16_f32_round_trip_exhaustive() {
        for bits in 0..=u16::MAX {
            let value = f16_to_f32(bits);
            if value.is_nan() {
                assert!(f16_to_f32(f32_to_f16(value)).is_nan());
                continue;
            }
            assert_eq!(f32_to_f16(value), bits, "bits {bits:#06x} -> {value}");
        }
    }

    #[test]
    fn f16_known_values() {
        assert_eq!(f16_to_f32(0x3C00), 1.0);
        assert_eq!(f16_to_f32(0xC000), -2.0);
        assert_eq!(f16_to_f32(0x7C00), f32::INFINITY);
        assert_eq!(f16_to_f32(0x0001), 5.960_464_5e-8);
        assert_eq!(f32_to_f16(1.0), 0x3C00);
        assert_eq!(f32_to_f16(65504.0), 0x7BFF);
        assert_eq!(f32_to_f16(1e9), 0x7C00);
    }
}
