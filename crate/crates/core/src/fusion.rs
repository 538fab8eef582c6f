//! Symmetrization and max-fusion of per-layer, per-head attention matrices.
//!
//! Every causal matrix `A` is first symmetrized to `(A + Aᵀ) / 2`; the fused
//! matrix then holds, per entry, the maximum over all symmetrized matrices.
//! That is the fixed point of the iterative update
//! `F ← (F + Ã)/2 + |F − Ã|/2` started from `F = 0`, which is kept here as
//! [`max_update`] and checked against the direct max in tests.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{RebaError, Result};
use crate::tensor_io::AttentionStack;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionStrategy {
    /// Max over every layer and head.
    #[default]
    MaxAllLayers,
    /// Max over the heads of the final layer only.
    LastLayerOnly,
}

impl FusionStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionStrategy::MaxAllLayers => "max-all",
            FusionStrategy::LastLayerOnly => "last-layer",
        }
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionStrategy {
    type Err = RebaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max-all" => Ok(FusionStrategy::MaxAllLayers),
            "last-layer" => Ok(FusionStrategy::LastLayerOnly),
            other => Err(RebaError::validation(format!("unknown fusion strategy {other:?}"))),
        }
    }
}

/// A symmetric `m x m` matrix of fused attention weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedAttention {
    size: usize,
    data: Vec<f32>,
    strategy: FusionStrategy,
}

impl FusedAttention {
    /// Wraps a row-major square matrix, rejecting anything that is not
    /// bitwise symmetric.
    pub fn from_matrix(size: usize, data: Vec<f32>, strategy: FusionStrategy) -> Result<Self> {
        if data.len() != size * size {
            return Err(RebaError::validation(format!(
                "fused matrix holds {} values, expected {size}x{size}",
                data.len()
            )));
        }
        for i in 0..size {
            for j in 0..i {
                if data[i * size + j].to_bits() != data[j * size + i].to_bits() {
                    return Err(RebaError::validation(format!(
                        "fused matrix not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(FusedAttention { size, data, strategy })
    }

    pub fn identity(size: usize) -> Self {
        let mut data = vec![0.0; size * size];
        for i in 0..size {
            data[i * size + i] = 1.0;
        }
        FusedAttention {
            size,
            data,
            strategy: FusionStrategy::MaxAllLayers,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn strategy(&self) -> FusionStrategy {
        self.strategy
    }

    /// 0-based entry.
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.size + col]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.size..(row + 1) * self.size]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Raw dump: `m` and `m` as u32 LE, then the row-major f32 LE matrix.
    pub fn write_raw<W: Write>(&self, mut sink: W) -> Result<u64> {
        let m = u32::try_from(self.size).map_err(|_| RebaError::validation("matrix too large for raw dump"))?;
        let mut buf = Vec::with_capacity(8 + 4 * self.data.len());
        buf.extend_from_slice(&m.to_le_bytes());
        buf.extend_from_slice(&m.to_le_bytes());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        sink.write_all(&buf)?;
        Ok(buf.len() as u64)
    }

    /// Inverse of [`FusedAttention::write_raw`].
    pub fn read_raw(bytes: &[u8], strategy: FusionStrategy) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(RebaError::format("fused matrix dump shorter than its header"));
        }
        let rows = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        if rows != cols {
            return Err(RebaError::format(format!(
                "fused matrix dump is {rows}x{cols}, not square"
            )));
        }
        let payload = &bytes[8..];
        if payload.len() != rows * cols * 4 {
            return Err(RebaError::format("fused matrix payload size mismatch"));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        FusedAttention::from_matrix(rows, data, strategy)
    }
}

/// One step of the iterative maximum update rule.
#[inline]
pub fn max_update(current: f64, candidate: f64) -> f64 {
    (current + candidate) / 2.0 + (current - candidate).abs() / 2.0
}

fn symmetric_entry(a: &[f32], m: usize, i: usize, j: usize) -> f64 {
    (f64::from(a[i * m + j]) + f64::from(a[j * m + i])) / 2.0
}

/// `(a + aᵀ) / 2` for a row-major `m x m` matrix. Each pair of mirrored
/// entries is computed once, so the result is bitwise symmetric.
pub fn symmetrize(a: &[f32], m: usize) -> Result<Vec<f32>> {
    if a.len() != m * m {
        return Err(RebaError::validation(format!(
            "matrix holds {} values, expected {m}x{m}",
            a.len()
        )));
    }
    if let Some(pos) = a.iter().position(|v| v.is_nan()) {
        return Err(RebaError::Numeric(format!("NaN at ({}, {})", pos / m, pos % m)));
    }
    let mut out = vec![0.0f32; m * m];
    for i in 0..m {
        for j in 0..=i {
            let v = symmetric_entry(a, m, i, j) as f32;
            out[i * m + j] = v;
            out[j * m + i] = v;
        }
    }
    Ok(out)
}

/// The (layer, head) pairs a strategy draws from, in layer-major order.
pub fn strategy_heads(stack: &AttentionStack, strategy: FusionStrategy) -> Vec<(usize, usize)> {
    let layers = match strategy {
        FusionStrategy::MaxAllLayers => 0..stack.layers(),
        FusionStrategy::LastLayerOnly => stack.layers().saturating_sub(1)..stack.layers(),
    };
    layers.flat_map(|p| (0..stack.heads()).map(move |q| (p, q))).collect()
}

pub fn fuse(stack: &AttentionStack, strategy: FusionStrategy) -> Result<FusedAttention> {
    let order = strategy_heads(stack, strategy);
    fuse_heads(stack, &order, strategy)
}

/// Fuses exactly the listed (layer, head) matrices, visited in the given order.
pub fn fuse_heads(
    stack: &AttentionStack,
    heads: &[(usize, usize)],
    strategy: FusionStrategy,
) -> Result<FusedAttention> {
    if stack.is_empty() || heads.is_empty() {
        return Err(RebaError::validation("cannot fuse an empty attention stack"));
    }
    if let Some(&(p, q)) = heads.iter().find(|&&(p, q)| p >= stack.layers() || q >= stack.heads()) {
        return Err(RebaError::validation(format!("head ({p}, {q}) outside the stack")));
    }
    let m = stack.seq_len();
    if let Some(pos) = stack.as_slice().iter().position(|v| v.is_nan()) {
        return Err(RebaError::Numeric(format!(
            "NaN in attention stack at flat index {pos}"
        )));
    }

    // Only the lower triangle is accumulated; the upper is mirrored at the end.
    let mut acc = vec![0.0f64; m * m];
    for &(p, q) in heads {
        let a = stack.matrix(p, q);
        for i in 0..m {
            for j in 0..=i {
                let cell = &mut acc[i * m + j];
                *cell = cell.max(symmetric_entry(a, m, i, j));
            }
        }
    }

    let mut data = vec![0.0f32; m * m];
    for i in 0..m {
        for j in 0..=i {
            let v = acc[i * m + j] as f32;
            data[i * m + j] = v;
            data[j * m + i] = v;
        }
    }
    Ok(FusedAttention {
        size: m,
        data,
        strategy,
    })
}

/// Column sums of the first `base_len` rows: entry `k` (0-based) is
/// `Σ_{i ≤ min(base_len-1, k)} fused[i][k]`. Entries `i > k` are skipped
/// because backward attention only weights tokens at or after `i`.
pub fn column_weight_sums(fused: &FusedAttention, base_len: usize) -> Result<Vec<f64>> {
    let m = fused.size();
    if base_len > m {
        return Err(RebaError::validation(format!(
            "base length {base_len} exceeds matrix size {m}"
        )));
    }
    let mut sums = vec![0.0f64; m];
    for i in 0..base_len {
        let row = fused.row(i);
        for k in i..m {
            sums[k] += f64::from(row[k]);
        }
    }
    Ok(sums)
}
