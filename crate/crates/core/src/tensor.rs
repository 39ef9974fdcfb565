//! Dense row-major tensors and the binary file format used for every
//! cached array (embeddings, logits, labels, trained parameters).
//!
//! File layout, all fields little-endian:
//!
//! | offset | size     | field                          |
//! |--------|----------|--------------------------------|
//! | 0      | 4        | magic `"SEDG"`                 |
//! | 4      | 4        | format version, u32, currently 1 |
//! | 8      | 4        | dtype code: 1 = f64, 2 = u32   |
//! | 12     | 4        | rank, u32                      |
//! | 16     | 4 × rank | extents, u32 each              |
//! | ...    | rest     | payload, row-major             |
//!
//! Readers validate magic, version, dtype, extent product overflow,
//! payload length, and (for floats) finiteness, each with its own
//! error kind so corruption reports name the actual defect. Writers
//! produce byte-identical files for identical inputs.

use std::path::Path;

use crate::error::{Result, SedgeError};

const MAGIC: [u8; 4] = *b"SEDG";
const VERSION: u32 = 1;
const DTYPE_F64: u32 = 1;
const DTYPE_U32: u32 = 2;
const MAX_RANK: usize = 64;

/// Dense f64 tensor. Extents are all positive and their product always
/// equals the data length.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, rejecting empty shapes, zero extents, length
    /// mismatches, and non-finite values.
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if dims.is_empty() {
            return Err(SedgeError::InvalidTensor("empty shape".into()));
        }
        let mut product: usize = 1;
        for &d in &dims {
            if d == 0 {
                return Err(SedgeError::InvalidTensor(format!(
                    "zero extent in shape {dims:?}"
                )));
            }
            product = product.checked_mul(d).ok_or_else(|| {
                SedgeError::InvalidTensor(format!("extent product overflows: {dims:?}"))
            })?;
        }
        if product != data.len() {
            return Err(SedgeError::InvalidTensor(format!(
                "shape {dims:?} requires {product} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(SedgeError::InvalidTensor(format!(
                "non-finite value at flat index {i}"
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row count of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.dims.len(), 2);
        self.dims[0]
    }

    /// Column count of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.dims.len(), 2);
        self.dims[1]
    }

    /// One row of a rank-2 tensor as a slice.
    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn get2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.dims[1] + c]
    }

    pub fn set2(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.dims[1] + c] = v;
    }
}

/// Writes an f64 tensor. Refuses non-finite values so no reader can
/// ever observe them.
pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    if let Some(i) = t.data.iter().position(|v| !v.is_finite()) {
        return Err(SedgeError::NonFinite {
            path: path.to_path_buf(),
            index: i,
        });
    }
    let mut bytes = header(DTYPE_F64, &t.dims, t.data.len() * 8)?;
    for v in &t.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| SedgeError::io(path, e))
}

/// Writes a rank-1 u32 tensor (labels, domain ids).
pub fn write_indices(path: &Path, values: &[u32]) -> Result<()> {
    let mut bytes = header(DTYPE_U32, &[values.len()], values.len() * 4)?;
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| SedgeError::io(path, e))
}

fn header(dtype: u32, dims: &[usize], payload_len: usize) -> Result<Vec<u8>> {
    let mut bytes = Vec::with_capacity(16 + dims.len() * 4 + payload_len);
    bytes.extend_from_slice(&MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&dtype.to_le_bytes());
    bytes.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| {
            SedgeError::InvalidTensor(format!("extent {d} exceeds u32 range"))
        })?;
        bytes.extend_from_slice(&d.to_le_bytes());
    }
    Ok(bytes)
}

/// Reads an f64 tensor, validating the full format contract.
pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let (dims, payload) = read_validated(path, DTYPE_F64, 8)?;
    let mut data = Vec::with_capacity(payload.len() / 8);
    for chunk in payload.chunks_exact(8) {
        data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(SedgeError::NonFinite {
            path: path.to_path_buf(),
            index: i,
        });
    }
    Ok(Tensor { dims, data })
}

/// Reads a rank-1 u32 tensor.
pub fn read_indices(path: &Path) -> Result<Vec<u32>> {
    let (dims, payload) = read_validated(path, DTYPE_U32, 4)?;
    if dims.len() != 1 {
        return Err(SedgeError::validation(
            path.display().to_string(),
            format!("index file must be rank 1, found rank {}", dims.len()),
        ));
    }
    Ok(payload
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn read_validated(path: &Path, want_dtype: u32, elem_size: u64) -> Result<(Vec<usize>, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|e| SedgeError::io(path, e))?;
    let file = path.display().to_string();
    let need = |n: usize| -> Result<()> {
        if bytes.len() < n {
            Err(SedgeError::validation(
                &file,
                format!("truncated: need at least {n} bytes, file has {}", bytes.len()),
            ))
        } else {
            Ok(())
        }
    };

    need(16)?;
    if bytes[0..4] != MAGIC {
        return Err(SedgeError::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(SedgeError::BadVersion {
            path: path.to_path_buf(),
            found: version,
        });
    }
    let dtype = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if dtype != DTYPE_F64 && dtype != DTYPE_U32 {
        return Err(SedgeError::BadDtype {
            path: path.to_path_buf(),
            found: dtype,
        });
    }
    if dtype != want_dtype {
        return Err(SedgeError::BadDtype {
            path: path.to_path_buf(),
            found: dtype,
        });
    }
    let rank = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(SedgeError::validation(
            &file,
            format!("rank {rank} outside supported range 1..={MAX_RANK}"),
        ));
    }
    need(16 + rank * 4)?;
    let mut dims_u32 = Vec::with_capacity(rank);
    let mut product: u64 = 1;
    let mut overflow = false;
    for i in 0..rank {
        let off = 16 + i * 4;
        let d = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        dims_u32.push(d);
        if d == 0 {
            return Err(SedgeError::validation(
                &file,
                format!("zero extent at axis {i}"),
            ));
        }
        product = match product.checked_mul(u64::from(d)) {
            Some(p) => p,
            None => {
                overflow = true;
                break;
            }
        };
    }
    if overflow || product.checked_mul(elem_size).is_none() || product > usize::MAX as u64 {
        return Err(SedgeError::DimOverflow {
            path: path.to_path_buf(),
            dims: dims_u32,
        });
    }
    let payload = &bytes[16 + rank * 4..];
    let found = payload.len() as u64 / elem_size;
    if payload.len() as u64 != product * elem_size {
        return Err(SedgeError::PayloadLength {
            path: path.to_path_buf(),
            expected: product,
            found,
        });
    }
    let dims = dims_u32.iter().map(|&d| d as usize).collect();
    Ok((dims, payload.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::named_rng;
    use rand::Rng;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn constructor_enforces_invariants() {
        assert!(Tensor::new(vec![], vec![]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(vec![2], vec![1.0, f64::INFINITY]).is_err());
        let t = Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.rows(), 2);
        assert_eq!(t.cols(), 3);
    }

    #[test]
    fn known_file_layout() {
        let dir = tmp();
        let path = dir.path().join("t.bin");
        let t = Tensor::new(vec![2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        write_tensor(&path, &t).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        // 16-byte header, two u32 extents, four f64 values.
        assert_eq!(bytes.len(), 16 + 8 + 32);
        assert_eq!(&bytes[0..4], b"SEDG");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 2);
        let second = f64::from_le_bytes(bytes[32..40].try_into().unwrap());
        assert_eq!(second, 1.0);
    }

    #[test]
    fn round_trip_is_bit_exact_and_rewrites_identically() {
        let dir = tmp();
        let mut rng = named_rng(11, "test/roundtrip");
        for case in 0..300 {
            let rank = rng.random_range(1..=4usize);
            let dims: Vec<usize> = (0..rank).map(|_| rng.random_range(1..=8)).collect();
            let n: usize = dims.iter().product();
            let data: Vec<f64> = (0..n)
                .map(|_| (rng.random::<f64>() - 0.5) * 1e6)
                .collect();
            let t = Tensor::new(dims, data).unwrap();

            let path = dir.path().join(format!("case_{case}.bin"));
            write_tensor(&path, &t).unwrap();
            let back = read_tensor(&path).unwrap();
            assert_eq!(back.dims(), t.dims());
            for (a, b) in back.data().iter().zip(t.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }

            let first = std::fs::read(&path).unwrap();
            write_tensor(&path, &back).unwrap();
            assert_eq!(first, std::fs::read(&path).unwrap());
        }
    }

    #[test]
    fn index_round_trip() {
        let dir = tmp();
        let path = dir.path().join("idx.bin");
        let values: Vec<u32> = vec![0, 5, 2, u32::MAX, 9];
        write_indices(&path, &values).unwrap();
        assert_eq!(read_indices(&path).unwrap(), values);
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tmp();
        let path = dir.path().join("bad.bin");
        let t = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        write_tensor(&path, &t).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            read_tensor(&path),
            Err(SedgeError::BadMagic { .. })
        ));
    }

    #[test]
    fn rejects_bad_version() {
        let dir = tmp();
        let path = dir.path().join("v9.bin");
        let t = Tensor::new(vec![1], vec![0.5]).unwrap();
        write_tensor(&path, &t).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&9u32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            read_tensor(&path),
            Err(SedgeError::BadVersion { found: 9, .. })
        ));
    }

    #[test]
    fn rejects_bad_dtype_code_and_dtype_mismatch() {
        let dir = tmp();
        let path = dir.path().join("d.bin");
        let t = Tensor::new(vec![1], vec![0.5]).unwrap();
        write_tensor(&path, &t).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_tensor(&path),
            Err(SedgeError::BadDtype { found: 7, .. })
        ));

        // Valid u32 file read as f64 is also a dtype error.
        write_indices(&path, &[1, 2, 3]).unwrap();
        assert!(matches!(
            read_tensor(&path),
            Err(SedgeError::BadDtype { found: 2, .. })
        ));
    }

    #[test]
    fn rejects_extent_overflow() {
        let dir = tmp();
        let path = dir.path().join("o.bin");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"SEDG");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&3u32.to_le_bytes());
        for _ in 0..3 {
            bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            read_tensor(&path),
            Err(SedgeError::DimOverflow { .. })
        ));
    }

    #[test]
    fn rejects_payload_length_mismatch() {
        let dir = tmp();
        let path = dir.path().join("p.bin");
        let t = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        write_tensor(&path, &t).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        match read_tensor(&path) {
            Err(SedgeError::PayloadLength {
                expected, found, ..
            }) => {
                assert_eq!(expected, 3);
                assert_eq!(found, 2);
            }
            other => panic!("expected payload length error, got {other:?}"),
        }

        let mut long = bytes.clone();
        long.extend_from_slice(&4.0f64.to_le_bytes());
        std::fs::write(&path, long).unwrap();
        assert!(matches!(
            read_tensor(&path),
            Err(SedgeError::PayloadLength { .. })
        ));
    }

    #[test]
    fn rejects_non_finite_payload() {
        let dir = tmp();
        let path = dir.path().join("nan.bin");
        let t = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        write_tensor(&path, &t).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let start = bytes.len() - 8;
        bytes[start..].copy_from_slice(&f64::NAN.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            read_tensor(&path),
            Err(SedgeError::NonFinite { index: 1, .. })
        ));
    }

    #[test]
    fn refuses_to_write_non_finite() {
        let dir = tmp();
        let path = dir.path().join("w.bin");
        let mut t = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        t.data_mut()[0] = f64::NAN;
        assert!(matches!(
            write_tensor(&path, &t),
            Err(SedgeError::NonFinite { index: 0, .. })
        ));
        assert!(!path.exists());
    }

    #[test]
    fn rejects_truncated_header() {
        let dir = tmp();
        let path = dir.path().join("trunc.bin");
        std::fs::write(&path, b"SEDG\x01\x00").unwrap();
        assert!(matches!(
            read_tensor(&path),
            Err(SedgeError::Validation { .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error_with_path() {
        let err = read_tensor(Path::new("/nonexistent/sedge/t.bin")).unwrap_err();
        match err {
            SedgeError::Io { path, .. } => {
                assert!(path.to_string_lossy().contains("nonexistent"))
            }
            other => panic!("expected io error, got {other:?}"),
        }
    }
}
