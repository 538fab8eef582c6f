//! Embedding files: a JSON document with fixed 9-significant-digit floats,
//! or a raw little-endian f32 dump.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::embed::{EmbeddingVector, Method, Pool};
use crate::error::{RebaError, Result};

/// Nine significant digits in scientific notation; enough to round-trip any f32.
pub fn format_f32(v: f32) -> String {
    format!("{v:.8e}")
}

#[derive(Serialize)]
struct EmbeddingDocOut<'a> {
    method: Method,
    pool: Pool,
    k: usize,
    token_index: Option<usize>,
    dim: usize,
    degenerate: bool,
    values: &'a RawValue,
}

#[derive(Deserialize)]
struct EmbeddingDocIn {
    method: Method,
    pool: Pool,
    k: usize,
    token_index: Option<usize>,
    dim: usize,
    #[serde(default)]
    degenerate: bool,
    values: Vec<f32>,
}

pub fn embedding_to_json(embedding: &EmbeddingVector) -> Result<String> {
    if let Some(bad) = embedding.values.iter().find(|v| !v.is_finite()) {
        return Err(RebaError::Numeric(format!("embedding holds non-finite value {bad}")));
    }
    let values: Vec<String> = embedding.values.iter().map(|&v| format_f32(v)).collect();
    let raw = RawValue::from_string(format!("[{}]", values.join(",")))?;
    let doc = EmbeddingDocOut {
        method: embedding.method,
        pool: embedding.pool,
        k: embedding.k,
        token_index: embedding.token_index,
        dim: embedding.values.len(),
        degenerate: embedding.degenerate,
        values: &raw,
    };
    Ok(serde_json::to_string(&doc)?)
}

pub fn embedding_from_json(text: &str) -> Result<EmbeddingVector> {
    let doc: EmbeddingDocIn = serde_json::from_str(text)?;
    if doc.dim != doc.values.len() {
        return Err(RebaError::format(format!(
            "embedding declares dim {} but holds {} values",
            doc.dim,
            doc.values.len()
        )));
    }
    Ok(EmbeddingVector {
        values: doc.values,
        method: doc.method,
        pool: doc.pool,
        k: doc.k,
        token_index: doc.token_index,
        degenerate: doc.degenerate,
    })
}

pub fn write_embedding_json(embedding: &EmbeddingVector, path: impl AsRef<Path>) -> Result<()> {
    let mut text = embedding_to_json(embedding)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_embedding_json(path: impl AsRef<Path>) -> Result<EmbeddingVector> {
    embedding_from_json(&fs::read_to_string(path)?)
}

pub fn write_embedding_raw<W: Write>(embedding: &EmbeddingVector, mut sink: W) -> Result<u64> {
    let bytes: Vec<u8> = embedding.values.iter().flat_map(|v| v.to_le_bytes()).collect();
    sink.write_all(&bytes)?;
    Ok(bytes.len() as u64)
}
