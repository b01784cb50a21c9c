//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "ARLCKPT\0"
//! version  u32      1
//! shape    3 x u64  contexts, positions, vocab
//! data     n x f64  row-major logits
//! sha256   32 bytes digest of every preceding byte
//! ```

use std::io::Write;
use std::path::Path;

use asyncrl_core::ParamTable;
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

const MAGIC: &[u8; 8] = b"ARLCKPT\0";
const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 24;
const DIGEST_LEN: usize = 32;

pub fn encode(params: &ParamTable) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * params.len() + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for d in params.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for x in params.as_slice() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<ParamTable> {
    let fail = |reason: String| HarnessError::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < HEADER_LEN + DIGEST_LEN {
        return Err(fail(format!("truncated: {} bytes", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(fail("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(fail(format!("unsupported format version {version}")));
    }
    let mut shape = [0usize; 3];
    for (i, d) in shape.iter_mut().enumerate() {
        let at = 12 + 8 * i;
        let v = u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
        *d = usize::try_from(v).map_err(|_| fail(format!("dimension {v} too large")))?;
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| fail("shape overflows".into()))?;
    let expected = n
        .checked_mul(8)
        .and_then(|b| b.checked_add(HEADER_LEN + DIGEST_LEN))
        .ok_or_else(|| fail("shape overflows".into()))?;
    if bytes.len() != expected {
        return Err(fail(format!("expected {expected} bytes for shape {shape:?}, found {}", bytes.len())));
    }
    let body = &bytes[..bytes.len() - DIGEST_LEN];
    if Sha256::digest(body).as_slice() != &bytes[bytes.len() - DIGEST_LEN..] {
        return Err(fail("checksum mismatch".into()));
    }
    let data = body[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    ParamTable::from_vec(shape, data).map_err(|e| fail(e.to_string()))
}

pub fn load(path: &Path) -> Result<ParamTable> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    decode(&bytes, path)
}

/// Writes through a temporary file in the target directory, then renames,
/// so a reader never observes a partial checkpoint.
pub fn save(path: &Path, params: &ParamTable) -> Result<String> {
    let bytes = encode(params);
    write_atomic(path, &bytes)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| HarnessError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| HarnessError::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| HarnessError::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| HarnessError::io(path, e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> ParamTable {
        ParamTable::from_vec([2, 1, 3], vec![0.1, -2.5, f64::MIN_POSITIVE, 1e300, -0.0, 3.0]).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let t = table();
        let back = decode(&encode(&t), Path::new("mem")).unwrap();
        assert_eq!(back.shape(), t.shape());
        let bits = |p: &ParamTable| p.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&t));
    }

    #[test]
    fn corruption_is_detected() {
        let good = encode(&table());
        let p = Path::new("mem");
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(decode(&bad_magic, p).is_err());
        let mut flipped = good.clone();
        flipped[HEADER_LEN + 3] ^= 1;
        assert!(decode(&flipped, p).is_err());
        let mut bad_shape = good.clone();
        bad_shape[12] = 9;
        assert!(decode(&bad_shape, p).is_err());
        assert!(decode(&good[..good.len() - 1], p).is_err());
        assert!(decode(&good[..10], p).is_err());
    }

    #[test]
    fn save_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        let digest = save(&path, &table()).unwrap();
        assert_eq!(digest.len(), 64);
        assert_eq!(load(&path).unwrap(), table());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
