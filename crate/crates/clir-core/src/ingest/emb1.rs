//! The EMB1 binary layout for id-aligned embedding matrices.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! bytes 0..4   magic "EMB1"
//! byte  4      version (1)
//! byte  5      normalized flag (0 or 1)
//! bytes 6..8   reserved, must be 0
//! bytes 8..12  n (row count, u32)
//! bytes 12..16 d (column count, u32)
//! then         n * d  f32 values, row-major
//! then         UTF-8 JSON array of n id strings
//! trailer u32  byte length of that JSON array
//! ```
//!
//! The format is dimension-agnostic and bit-exact: writing and re-reading a
//! matrix reproduces the file byte for byte, which lets tests diff
//! embeddings without any tolerance.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EMB1";
const VERSION: u8 = 1;
const HEADER_LEN: usize = 16;

/// Tolerance on the row L2 norm when the normalized flag is set.
pub const NORM_TOLERANCE: f64 = 1e-4;

/// An id-aligned dense matrix of document or query vectors.
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    vectors: Vec<f32>,
    dim: usize,
    normalized: bool,
    index: HashMap<String, usize>,
}

impl PartialEq for EmbeddingMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.ids == other.ids
            && self.vectors == other.vectors
            && self.dim == other.dim
            && self.normalized == other.normalized
    }
}

impl EmbeddingMatrix {
    /// Builds a matrix, checking id uniqueness, size arithmetic and (when
    /// `normalized` is set) that every row is unit length within
    /// [`NORM_TOLERANCE`].
    pub fn new(ids: Vec<String>, vectors: Vec<f32>, dim: usize, normalized: bool) -> Result<Self> {
        if dim == 0 && (!vectors.is_empty() || !ids.is_empty()) {
            return Err(Error::Precondition(
                "embedding matrix with zero dimension cannot hold rows".into(),
            ));
        }
        if dim != 0 && vectors.len() != ids.len() * dim {
            return Err(Error::Precondition(format!(
                "embedding matrix size mismatch: {} ids x dim {} != {} values",
                ids.len(),
                dim,
                vectors.len()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (position, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), position).is_some() {
                return Err(Error::Precondition(format!(
                    "duplicate embedding id {id:?}"
                )));
            }
        }
        let matrix = EmbeddingMatrix {
            ids,
            vectors,
            dim,
            normalized,
            index,
        };
        if normalized {
            for (i, row) in matrix.rows().enumerate() {
                let norm = l2_norm(row);
                if (norm - 1.0).abs() > NORM_TOLERANCE {
                    return Err(Error::Precondition(format!(
                        "normalized flag set but row {} ({:?}) has L2 norm {norm}",
                        i, matrix.ids[i]
                    )));
                }
            }
        }
        Ok(matrix)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, index: usize) -> &[f32] {
        &self.vectors[index * self.dim..(index + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.vectors.chunks_exact(self.dim.max(1))
    }

    /// Row position of an id, if present.
    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn vector_for(&self, id: &str) -> Option<&[f32]> {
        self.index_of(id).map(|i| self.row(i))
    }

    /// Serializes to the EMB1 byte layout.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let n = u32::try_from(self.len())
            .map_err(|_| Error::Precondition("row count exceeds u32".into()))?;
        let d = u32::try_from(self.dim)
            .map_err(|_| Error::Precondition("dimension exceeds u32".into()))?;
        let ids_json = serde_json::to_vec(&self.ids)
            .map_err(|e| Error::Precondition(format!("ids not serializable: {e}")))?;
        let ids_len = u32::try_from(ids_json.len())
            .map_err(|_| Error::Precondition("id block exceeds u32".into()))?;

        let mut out = Vec::with_capacity(HEADER_LEN + self.vectors.len() * 4 + ids_json.len() + 4);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(u8::from(self.normalized));
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&n.to_le_bytes());
        out.extend_from_slice(&d.to_le_bytes());
        for value in &self.vectors {
            out.extend_from_slice(&value.to_le_bytes());
        }
        out.extend_from_slice(&ids_json);
        out.extend_from_slice(&ids_len.to_le_bytes());
        Ok(out)
    }

    /// Parses the EMB1 byte layout. `origin` is only used in error messages.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let fail = |message: String| Error::format(origin, message);
        if bytes.len() < HEADER_LEN + 4 {
            return Err(fail(format!(
                "file too short for EMB1 header: {} bytes",
                bytes.len()
            )));
        }
        if &bytes[0..4] != MAGIC {
            return Err(fail(format!(
                "magic mismatch: expected \"EMB1\", got {:?}",
                &bytes[0..4]
            )));
        }
        if bytes[4] != VERSION {
            return Err(fail(format!("unsupported EMB1 version {}", bytes[4])));
        }
        let normalized = match bytes[5] {
            0 => false,
            1 => true,
            other => return Err(fail(format!("normalized flag must be 0 or 1, got {other}"))),
        };
        let reserved = u16::from_le_bytes([bytes[6], bytes[7]]);
        if reserved != 0 {
            return Err(fail(format!("reserved field must be 0, got {reserved}")));
        }
        let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;

        let payload_len = n
            .checked_mul(d)
            .and_then(|cells| cells.checked_mul(4))
            .ok_or_else(|| fail(format!("n={n} x d={d} overflows payload size")))?;
        let ids_start = HEADER_LEN + payload_len;
        if bytes.len() < ids_start + 4 {
            return Err(fail(format!(
                "truncated payload: need {} payload bytes plus trailer, file has {} after header",
                payload_len,
                bytes.len() - HEADER_LEN
            )));
        }
        let trailer = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap()) as usize;
        let ids_end = bytes.len() - 4;
        if ids_end - ids_start != trailer {
            return Err(fail(format!(
                "id block length mismatch: trailer says {trailer}, layout leaves {}",
                ids_end - ids_start
            )));
        }
        let ids: Vec<String> = serde_json::from_slice(&bytes[ids_start..ids_end])
            .map_err(|e| fail(format!("id block is not a JSON string array: {e}")))?;
        if ids.len() != n {
            return Err(fail(format!(
                "id count mismatch: header says {n} rows, id block has {}",
                ids.len()
            )));
        }
        let vectors: Vec<f32> = bytes[HEADER_LEN..ids_start]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();

        EmbeddingMatrix::new(ids, vectors, d, normalized).map_err(|e| fail(e.to_string()))
    }
}

/// Reads an EMB1 file.
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingMatrix::from_bytes(&bytes, path)
}

/// Writes an EMB1 file.
pub fn write_embeddings(matrix: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, matrix.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn l2_norm(row: &[f32]) -> f64 {
    row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
}

/// Scales every row to unit L2 norm. Zero-norm rows are an error.
pub fn normalize_rows(matrix: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let mut vectors = Vec::with_capacity(matrix.vectors.len());
    for (i, row) in matrix.rows().enumerate() {
        let norm = l2_norm(row);
        if norm == 0.0 {
            return Err(Error::Precondition(format!(
                "cannot normalize zero-norm row {} ({:?})",
                i,
                matrix.ids()[i]
            )));
        }
        vectors.extend(row.iter().map(|&v| (f64::from(v) / norm) as f32));
    }
    EmbeddingMatrix::new(matrix.ids.clone(), vectors, matrix.dim, true)
}
