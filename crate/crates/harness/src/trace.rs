//! JSONL traces and their comparison.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::write_atomic;
use crate::error::{HarnessError, Result};

/// One JSON document per line, each terminated by `\n`.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `items` as JSONL and returns the file's SHA-256.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<String> {
    let bytes = to_jsonl(items)?;
    write_atomic(path, &bytes)?;
    Ok(sha256_hex(&bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineDifference {
    /// 1-based line number.
    pub line: usize,
    pub left: Option<String>,
    pub right: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceDiff {
    pub identical: bool,
    pub left_lines: usize,
    pub right_lines: usize,
    pub left_sha256: String,
    pub right_sha256: String,
    pub first_difference: Option<LineDifference>,
}

pub fn diff_bytes(left: &[u8], right: &[u8]) -> TraceDiff {
    let l: Vec<&str> = std::str::from_utf8(left).unwrap_or("").lines().collect();
    let r: Vec<&str> = std::str::from_utf8(right).unwrap_or("").lines().collect();
    let first_difference = (0..l.len().max(r.len()))
        .find(|&i| l.get(i) != r.get(i))
        .map(|i| LineDifference {
            line: i + 1,
            left: l.get(i).map(|s| s.to_string()),
            right: r.get(i).map(|s| s.to_string()),
        });
    TraceDiff {
        identical: left == right,
        left_lines: l.len(),
        right_lines: r.len(),
        left_sha256: sha256_hex(left),
        right_sha256: sha256_hex(right),
        first_difference,
    }
}

pub fn diff_files(left: &Path, right: &Path) -> Result<TraceDiff> {
    let a = std::fs::read(left).map_err(|e| HarnessError::io(left, e))?;
    let b = std::fs::read(right).map_err(|e| HarnessError::io(right, e))?;
    Ok(diff_bytes(&a, &b))
}
