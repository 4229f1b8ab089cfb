//! On-disk formats.
//!
//! - Embedding file: `"CBM1"`, `M: u32 LE`, `count: u32 LE`, then `count * M` `f32 LE`.
//! - Precomputed matrix: `"CBH1"`, `N: u32 LE`, `T: u32 LE`, then `N * T` row-major `f32 LE`.
//! - Manifests: JSON lines. Corpus entries are `{"doc_id", "path"}`; query
//!   entries are `{"query_id", "path"}` with an optional per-query `"corpus"`
//!   manifest. Relative paths resolve against the manifest's directory.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::oracle::{DocTokens, QueryTokens};
use crate::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"CBM1";
pub const MATRIX_MAGIC: &[u8; 4] = b"CBH1";
const HEADER_LEN: usize = 12;

fn encode(magic: &[u8; 4], a: usize, b: usize, values: &[f32]) -> Result<Vec<u8>> {
    let a = u32::try_from(a).map_err(|_| Error::usage("dimension exceeds u32"))?;
    let b = u32::try_from(b).map_err(|_| Error::usage("count exceeds u32"))?;
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * values.len());
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&a.to_le_bytes());
    buf.extend_from_slice(&b.to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

fn decode(path: &Path, bytes: &[u8], magic: &[u8; 4]) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(
            path,
            format!("short read: header needs {HEADER_LEN} bytes, file has {}", bytes.len()),
        ));
    }
    if &bytes[..4] != magic {
        return Err(Error::format(
            path,
            format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[..4]),
                String::from_utf8_lossy(magic)
            ),
        ));
    }
    let a = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let b = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = &bytes[HEADER_LEN..];
    let expected = a
        .checked_mul(b)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| Error::format(path, "header sizes overflow"))?;
    if payload.len() < expected {
        return Err(Error::format(
            path,
            format!("short read: expected {expected} payload bytes, found {}", payload.len()),
        ));
    }
    if payload.len() > expected {
        return Err(Error::format(
            path,
            format!(
                "{} trailing bytes after {expected} payload bytes",
                payload.len() - expected
            ),
        ));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((a, b, values))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Raw `CBM1` contents: `(M, count, values)`.
pub fn read_embeddings(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    decode(path, &read_bytes(path)?, EMBEDDING_MAGIC)
}

pub fn encode_embeddings(dim: usize, values: &[f32]) -> Result<Vec<u8>> {
    if dim == 0 || !values.len().is_multiple_of(dim) {
        return Err(Error::usage(format!(
            "{} components is not a multiple of dimension {dim}",
            values.len()
        )));
    }
    encode(EMBEDDING_MAGIC, dim, values.len() / dim, values)
}

pub fn write_embeddings(path: &Path, dim: usize, values: &[f32]) -> Result<()> {
    write_bytes(path, &encode_embeddings(dim, values)?)
}

/// Raw `CBH1` contents: `(N, T, values)`.
pub fn read_matrix(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    decode(path, &read_bytes(path)?, MATRIX_MAGIC)
}

pub fn encode_matrix(n_docs: usize, n_tokens: usize, values: &[f32]) -> Result<Vec<u8>> {
    if values.len() != n_docs * n_tokens {
        return Err(Error::usage(format!(
            "matrix has {} values, expected {n_docs} x {n_tokens}",
            values.len()
        )));
    }
    encode(MATRIX_MAGIC, n_docs, n_tokens, values)
}

pub fn write_matrix(path: &Path, n_docs: usize, n_tokens: usize, values: &[f32]) -> Result<()> {
    write_bytes(path, &encode_matrix(n_docs, n_tokens, values)?)
}

pub fn read_query(path: &Path) -> Result<QueryTokens> {
    let (dim, _, values) = read_embeddings(path)?;
    QueryTokens::from_flat(dim, values).map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_doc(doc_id: &str, path: &Path) -> Result<DocTokens> {
    let (dim, _, values) = read_embeddings(path)?;
    DocTokens::from_flat(doc_id, dim, values).map_err(|e| Error::format(path, e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub doc_id: String,
    pub path: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryEntry {
    pub query_id: String,
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<String>,
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", lineno + 1)))?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        buf.write_all(b"\n").expect("writing to a Vec cannot fail");
    }
    write_bytes(path, &buf)
}

/// Resolves `relative` against the directory holding `manifest`.
pub fn resolve(manifest: &Path, relative: &str) -> PathBuf {
    let p = Path::new(relative);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest.parent().unwrap_or_else(|| Path::new(".")).join(p)
    }
}

/// Loads every document listed in a corpus manifest, in manifest order.
pub fn read_corpus(manifest: &Path) -> Result<Vec<DocTokens>> {
    let entries: Vec<CorpusEntry> = read_jsonl(manifest)?;
    if entries.is_empty() {
        return Err(Error::format(manifest, "corpus manifest lists no documents"));
    }
    entries
        .iter()
        .map(|e| read_doc(&e.doc_id, &resolve(manifest, &e.path)))
        .collect()
}
