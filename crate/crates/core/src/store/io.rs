//! Binary embedding file and its JSON sidecar.
//!
//! Layout (little-endian):
//!
//! ```text
//! offset  size  field
//!      0     4  magic "BIPE"
//!      4     4  version u32 (= 1)
//!      8     4  dim u32
//!     12     8  count u64
//!     20     1  dtype u8 (0 = float32)
//!     21     7  reserved, zero
//!     28     -  count * dim float32, row-major
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::EmbeddingMatrix;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"BIPE";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 28;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    /// Reject rows whose norm is not 1 within [`super::UNIT_NORM_TOL`].
    pub validate_unit: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { validate_unit: true }
    }
}

pub fn save_embeddings(matrix: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(matrix))?;
    Ok(())
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    load_embeddings_with(path, LoadOptions::default())
}

pub fn load_embeddings_with(path: impl AsRef<Path>, opts: LoadOptions) -> Result<EmbeddingMatrix> {
    let bytes = fs::read(path)?;
    let m = decode(&bytes)?;
    if opts.validate_unit {
        m.validate_unit_rows()?;
    }
    Ok(m)
}

pub(crate) fn encode(matrix: &EmbeddingMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + matrix.as_slice().len() * 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(matrix.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(matrix.count() as u64).to_le_bytes());
    out.push(DTYPE_F32);
    out.extend_from_slice(&[0u8; 7]);
    for x in matrix.as_slice() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub(crate) fn decode(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    if bytes.len() < HEADER_LEN {
        // too short to even hold a header; a wrong magic still wins if visible
        if bytes.len() >= 4 && bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        return Err(Error::TruncatedData { expected: HEADER_LEN as u64, found: bytes.len() as u64 });
    }
    if bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let dim = u32_at(8) as usize;
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let dtype = bytes[20];
    if dtype != DTYPE_F32 {
        return Err(Error::UnsupportedDtype(dtype));
    }
    if dim == 0 {
        return Err(Error::domain("file declares dim = 0"));
    }
    let payload = &bytes[HEADER_LEN..];
    let expected = (count as u128) * (dim as u128) * 4;
    if (payload.len() as u128) < expected {
        return Err(Error::TruncatedData {
            expected: (HEADER_LEN as u128 + expected).min(u64::MAX as u128) as u64,
            found: bytes.len() as u64,
        });
    }
    if payload.len() as u128 > expected {
        return Err(Error::TrailingData { extra: (payload.len() as u128 - expected) as u64 });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingMatrix::from_raw(dim, data)
}

/// JSON sidecar describing an embedding file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingManifest {
    pub source: String,
    pub encoder: String,
    pub dim: usize,
    pub count: usize,
    pub created_utc: String,
    pub sha256_of_payload: String,
}

impl EmbeddingManifest {
    pub fn describe(matrix: &EmbeddingMatrix, source: &str, encoder: &str, created_utc: &str) -> Self {
        Self {
            source: source.to_string(),
            encoder: encoder.to_string(),
            dim: matrix.dim(),
            count: matrix.count(),
            created_utc: created_utc.to_string(),
            sha256_of_payload: payload_sha256(matrix),
        }
    }

    pub fn verify(&self, matrix: &EmbeddingMatrix) -> Result<()> {
        if self.dim != matrix.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim, found: matrix.dim() });
        }
        if self.count != matrix.count() {
            return Err(Error::TruncatedData { expected: self.count as u64, found: matrix.count() as u64 });
        }
        if self.sha256_of_payload != payload_sha256(matrix) {
            return Err(Error::ChecksumMismatch);
        }
        Ok(())
    }
}

/// Hex SHA-256 of the little-endian float32 payload (header excluded).
pub fn payload_sha256(matrix: &EmbeddingMatrix) -> String {
    let mut h = Sha256::new();
    for x in matrix.as_slice() {
        h.update(x.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Hex SHA-256 of a whole file.
pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    let mut f = fs::File::open(path)?;
    let mut h = Sha256::new();
    std::io::copy(&mut f, &mut h)?;
    Ok(hex::encode(h.finalize()))
}

/// `<file>.meta.json` next to an embedding file.
pub fn sidecar_path(path: impl AsRef<Path>) -> PathBuf {
    let mut s = path.as_ref().as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &EmbeddingManifest) -> Result<()> {
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(manifest)?)?;
    Ok(())
}

/// Reads the sidecar of an embedding file, if one exists.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Option<EmbeddingManifest>> {
    let p = sidecar_path(path);
    if !p.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_slice(&fs::read(p)?)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EmbeddingMatrix {
        let mut data = Vec::new();
        for i in 0..3 {
            let mut row = [0.0f32; 8];
            row[i] = 0.6;
            row[i + 4] = -0.8;
            data.extend_from_slice(&row);
        }
        EmbeddingMatrix::new(8, data).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = sample();
        let back = decode(&encode(&m)).unwrap();
        assert_eq!(back.dim(), 8);
        assert_eq!(back.count(), 3);
        let a: Vec<u32> = m.as_slice().iter().map(|x| x.to_bits()).collect();
        let b: Vec<u32> = back.as_slice().iter().map(|x| x.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&sample());
        assert_eq!(&bytes[..4], b"BIPE");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 8);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 3);
        assert_eq!(bytes[20], 0);
        assert_eq!(&bytes[21..28], &[0u8; 7]);
        assert_eq!(bytes.len(), 28 + 3 * 8 * 4);
    }

    #[test]
    fn corrupted_inputs() {
        let good = encode(&sample());

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::BadMagic)));

        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(decode(&bad), Err(Error::VersionMismatch { found: 2, .. })));

        let mut bad = good.clone();
        bad[12] = 4; // count 4, payload holds 3
        assert!(matches!(decode(&bad), Err(Error::TruncatedData { .. })));

        let mut bad = good.clone();
        bad[20] = 1;
        assert!(matches!(decode(&bad), Err(Error::UnsupportedDtype(1))));

        let mut bad = good.clone();
        bad.extend_from_slice(&[0; 4]);
        assert!(matches!(decode(&bad), Err(Error::TrailingData { extra: 4 })));

        assert!(matches!(decode(&[]), Err(Error::TruncatedData { .. })));
    }

    #[test]
    fn manifest_checksum() {
        let m = sample();
        let man = EmbeddingManifest::describe(&m, "unit", "none", "2026-01-01T00:00:00Z");
        man.verify(&m).unwrap();
        let mut other = m.clone().into_raw().1;
        other[0] = 0.0;
        other[1] = 0.6;
        let m2 = EmbeddingMatrix::from_raw(8, other).unwrap();
        assert!(matches!(man.verify(&m2), Err(Error::ChecksumMismatch)));
    }
}
