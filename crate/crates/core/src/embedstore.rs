//! Per-layer embedding files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//!      0     8  magic  b"LCEMBED\0"
//!      8     4  format_version (u32, currently 1)
//!     12     4  layer (u32)
//!     16     8  n rows (u64)
//!     24     8  d columns (u64)
//!     32     1  dtype tag (1 = f32)
//!     33     1  endianness tag (1 = little)
//!     34     6  reserved, zero
//!     40   n*d*4  row-major f32 payload
//! ```
//!
//! Values are stored and returned bit-for-bit; no conversion happens on the
//! way in or out.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const MAGIC: [u8; 8] = *b"LCEMBED\0";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 40;
pub const DTYPE_F32: u8 = 1;
pub const ENDIAN_LITTLE: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingFileHeader {
    pub format_version: u32,
    pub layer: u32,
    pub n: u64,
    pub d: u64,
    pub dtype: u8,
    pub endianness: u8,
}

impl EmbeddingFileHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..8].copy_from_slice(&MAGIC);
        out[8..12].copy_from_slice(&self.format_version.to_le_bytes());
        out[12..16].copy_from_slice(&self.layer.to_le_bytes());
        out[16..24].copy_from_slice(&self.n.to_le_bytes());
        out[24..32].copy_from_slice(&self.d.to_le_bytes());
        out[32] = self.dtype;
        out[33] = self.endianness;
        out
    }

    pub fn parse(bytes: &[u8; HEADER_LEN]) -> Result<Self> {
        if bytes[0..8] != MAGIC {
            return Err(Error::Format("bad magic, not an embedding file".into()));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let u64_at = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
        let header = EmbeddingFileHeader {
            format_version: u32_at(8),
            layer: u32_at(12),
            n: u64_at(16),
            d: u64_at(24),
            dtype: bytes[32],
            endianness: bytes[33],
        };
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        if header.dtype != DTYPE_F32 {
            return Err(Error::Format(format!("unsupported dtype tag {}", header.dtype)));
        }
        if header.endianness != ENDIAN_LITTLE {
            return Err(Error::Format(format!(
                "unsupported endianness tag {}",
                header.endianness
            )));
        }
        Ok(header)
    }

    fn payload_len(&self) -> Option<u64> {
        self.n.checked_mul(self.d)?.checked_mul(4)
    }
}

/// Row-major `n x d` matrix of one layer's vectors; row `i` belongs to
/// occurrence `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub layer: u32,
    n: usize,
    d: usize,
    values: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(layer: u32, n: usize, d: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != n * d {
            return Err(Error::Validation(format!(
                "{} values for a {n}x{d} matrix",
                values.len()
            )));
        }
        Ok(EmbeddingMatrix { layer, n, d, values })
    }

    pub fn from_rows(layer: u32, d: usize, rows: &[Vec<f32>]) -> Result<Self> {
        let mut values = Vec::with_capacity(rows.len() * d);
        for row in rows {
            if row.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: row.len() });
            }
            values.extend_from_slice(row);
        }
        Self::new(layer, rows.len(), d, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        // chunks_exact panics on 0; a zero-width matrix has no payload anyway.
        let d = self.d.max(1);
        self.values.chunks_exact(d).take(self.n)
    }

    pub fn validate_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(pos) => Err(Error::Validation(format!(
                "non-finite value at row {}, column {}",
                pos / self.d,
                pos % self.d
            ))),
        }
    }

    pub fn header(&self) -> EmbeddingFileHeader {
        EmbeddingFileHeader {
            format_version: FORMAT_VERSION,
            layer: self.layer,
            n: self.n as u64,
            d: self.d as u64,
            dtype: DTYPE_F32,
            endianness: ENDIAN_LITTLE,
        }
    }
}

pub fn write_embeddings(matrix: &EmbeddingMatrix, path: &Path) -> Result<()> {
    matrix.validate_finite()?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::with_capacity(1 << 20, file);
    let io = |e| Error::io(path, e);
    out.write_all(&matrix.header().to_bytes()).map_err(io)?;
    let mut buf = Vec::with_capacity(4 * 4096);
    for chunk in matrix.values.chunks(4096) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        out.write_all(&buf).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let file_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut head = [0u8; HEADER_LEN];
    file.read_exact(&mut head)
        .map_err(|_| Error::Format(format!("{}: truncated header", path.display())))?;
    let header = EmbeddingFileHeader::parse(&head)?;
    let payload = header
        .payload_len()
        .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
    if file_len - HEADER_LEN as u64 != payload {
        return Err(Error::Format(format!(
            "{}: payload is {} bytes, header declares {}x{} ({payload} bytes)",
            path.display(),
            file_len - HEADER_LEN as u64,
            header.n,
            header.d
        )));
    }
    let mut bytes = Vec::with_capacity(payload as usize);
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_bits(u32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    EmbeddingMatrix::new(header.layer, header.n as usize, header.d as usize, values)
}

/// Select rows by occurrence id, in the order given. Row bytes are copied
/// verbatim.
pub fn gather_rows(matrix: &EmbeddingMatrix, ids: &[usize]) -> Result<EmbeddingMatrix> {
    let mut values = Vec::with_capacity(ids.len() * matrix.d);
    for &id in ids {
        if id >= matrix.n {
            return Err(Error::OutOfRange(format!(
                "row {id} of a {}-row matrix",
                matrix.n
            )));
        }
        values.extend_from_slice(matrix.row(id));
    }
    EmbeddingMatrix::new(matrix.layer, ids.len(), matrix.d, values)
}

/// JSON sidecar written next to the layer files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSidecar {
    pub dataset_checksum: String,
    pub model_name: String,
    pub layers: Vec<u32>,
    pub n: usize,
    pub d: usize,
    /// How word vectors were built from subword pieces ("mean", "first", or
    /// "synthetic").
    pub aggregation: String,
}

pub const SIDECAR_FILE: &str = "embeddings.json";

pub fn layer_file(dir: &Path, layer: u32) -> PathBuf {
    dir.join(format!("layer_{layer:02}.bin"))
}

impl EmbeddingSidecar {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(SIDECAR_FILE);
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        fs::write(&path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(SIDECAR_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Refuse embeddings produced for a different occurrence table.
    pub fn check_dataset(&self, checksum: &str) -> Result<()> {
        if self.dataset_checksum != checksum {
            return Err(Error::Validation(format!(
                "embeddings were built for dataset {}, current dataset is {checksum}",
                self.dataset_checksum
            )));
        }
        Ok(())
    }
}
