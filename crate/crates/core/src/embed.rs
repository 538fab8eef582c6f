//! ReBA, Echo and Classical embeddings over a tensor bundle.
//!
//! Token positions in this module's public API are 1-based: `i = 1` is the
//! first token of the original (unrepeated) sequence. [`zero_based`] is the
//! only place they are converted.
//!
//! For a bundle holding `k` repetitions of an `n`-token sequence (so
//! `m = k·n` states `v_1..v_m`, fewer when truncated) and a fused attention
//! matrix `α'`:
//!
//! | method    | word `i`                     | mean pooling                   | last pooling |
//! |-----------|------------------------------|--------------------------------|--------------|
//! | ReBA-k    | `e_i = Σ_{j=i}^{m} α'_{i,j} v_j` | `(1/n) Σ_{i=1}^{n} e_i`        | `e_n`        |
//! | Echo-k    | `v_{(k-1)n+i}`               | see [`EchoMeanMode`]           | `v_{kn}`     |
//! | Classical | `v_i`                        | `(1/n) Σ_{j=1}^{n} v_j`        | `v_n`        |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{RebaError, Result};
use crate::fusion::{self, column_weight_sums, FusedAttention, FusionStrategy};
use crate::tensor_io::TensorBundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[serde(rename = "reba")]
    ReBA,
    Echo,
    Classical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pool {
    Last,
    Mean,
    Word,
}

/// How Echo-k mean pooling averages the repeated states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EchoMeanMode {
    /// `(1/n) Σ_{j=(k-1)n+1}^{kn} v_j`: the mean over the last copy.
    #[default]
    LastOccurrence,
    /// `(1/(2n)) Σ_{j=n}^{kn} v_j`: fixed 1/(2n) scale over positions n..kn.
    WindowSum,
}

macro_rules! str_enum {
    ($ty:ty, $what:literal, $($variant:path => $text:literal),+ $(,)?) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($variant => $text),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = RebaError;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($variant),)+
                    other => Err(RebaError::validation(format!(concat!("unknown ", $what, " {:?}"), other))),
                }
            }
        }
    };
}

str_enum!(Method, "method", Method::ReBA => "reba", Method::Echo => "echo", Method::Classical => "classical");
str_enum!(Pool, "pooling", Pool::Last => "last", Pool::Mean => "mean", Pool::Word => "word");
str_enum!(
    EchoMeanMode,
    "echo mean mode",
    EchoMeanMode::LastOccurrence => "last-occurrence",
    EchoMeanMode::WindowSum => "window-sum",
);

/// Whether backward weights are used raw or rescaled so each token's
/// backward slice `α'_{i,i..m}` sums to one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    #[default]
    Raw,
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub method: Method,
    pub k: usize,
    pub pool: Pool,
    /// 1-based position in the original sequence; present iff `pool` is `Word`.
    pub token_index: Option<usize>,
}

impl EmbedRequest {
    pub fn new(method: Method, k: usize, pool: Pool, token_index: Option<usize>) -> Result<Self> {
        let k = if method == Method::Classical { 1 } else { k };
        if k == 0 {
            return Err(RebaError::validation("repetition count k must be at least 1"));
        }
        match (pool, token_index) {
            (Pool::Word, None) => return Err(RebaError::validation("word pooling requires a token index")),
            (Pool::Word, Some(0)) => return Err(RebaError::validation("token index is 1-based")),
            (Pool::Last | Pool::Mean, Some(_)) => {
                return Err(RebaError::validation("token index is only valid with word pooling"))
            }
            _ => {}
        }
        Ok(EmbedRequest {
            method,
            k,
            pool,
            token_index,
        })
    }

    /// A request whose `k` is taken from the bundle header.
    pub fn for_bundle(bundle: &TensorBundle, method: Method, pool: Pool, token_index: Option<usize>) -> Result<Self> {
        EmbedRequest::new(method, bundle.repetitions(), pool, token_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EmbedOptions {
    pub strategy: FusionStrategy,
    pub echo_mean_mode: EchoMeanMode,
    pub weighting: Weighting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub method: Method,
    pub pool: Pool,
    pub k: usize,
    pub token_index: Option<usize>,
    /// All backward weights were zero, so the vector is identically zero.
    #[serde(default)]
    pub degenerate: bool,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Number of `d`-dimensional weighted accumulations a pooling path performed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PoolingCost {
    pub vector_accumulations: usize,
}

/// The single 1-based to 0-based conversion for token positions.
fn zero_based(index: usize, upper: usize) -> Result<usize> {
    if index == 0 || index > upper {
        return Err(RebaError::validation(format!(
            "token index {index} outside [1, {upper}]"
        )));
    }
    Ok(index - 1)
}

pub fn repeat_tokens(tokens: &[u32], k: usize) -> Result<Vec<u32>> {
    if tokens.is_empty() {
        return Err(RebaError::validation("cannot repeat an empty token list"));
    }
    if k == 0 {
        return Err(RebaError::validation("repetition count k must be at least 1"));
    }
    Ok(tokens.repeat(k))
}

fn check_fused(bundle: &TensorBundle, fused: &FusedAttention) -> Result<()> {
    if fused.size() != bundle.seq_len() || bundle.hidden.rows() != bundle.seq_len() {
        return Err(RebaError::validation(format!(
            "fused matrix is {m}x{m} but the bundle holds {} tokens",
            bundle.seq_len(),
            m = fused.size()
        )));
    }
    if bundle.base_len() == 0 || bundle.base_len() > bundle.seq_len() {
        return Err(RebaError::validation("bundle base length outside [1, seq_len]"));
    }
    Ok(())
}

fn axpy(acc: &mut [f64], weight: f64, row: &[f32]) {
    for (a, &v) in acc.iter_mut().zip(row) {
        *a += weight * f64::from(v);
    }
}

fn to_f32(acc: Vec<f64>) -> Vec<f32> {
    acc.into_iter().map(|x| x as f32).collect()
}

/// Scale applied to token `i`'s backward slice; `None` when that slice is all zero.
fn backward_scale(fused: &FusedAttention, i: usize, weighting: Weighting) -> Option<f64> {
    let row = &fused.row(i)[i..];
    if row.iter().all(|&w| w == 0.0) {
        return None;
    }
    match weighting {
        Weighting::Raw => Some(1.0),
        Weighting::Normalized => Some(1.0 / row.iter().map(|&w| f64::from(w)).sum::<f64>()),
    }
}

/// Backward-attention sum for 0-based token `i` plus the accumulation count.
fn backward_sum(
    bundle: &TensorBundle,
    fused: &FusedAttention,
    i: usize,
    weighting: Weighting,
) -> (Vec<f64>, bool, usize) {
    let m = bundle.seq_len();
    let mut acc = vec![0.0f64; bundle.dim()];
    let Some(scale) = backward_scale(fused, i, weighting) else {
        return (acc, true, 0);
    };
    let row = fused.row(i);
    for (j, &w) in row.iter().enumerate().skip(i) {
        axpy(&mut acc, scale * f64::from(w), bundle.hidden.row(j));
    }
    (acc, false, m - i)
}

/// ReBA word embedding of the 1-based token `i`: `e_i = Σ_{j=i}^{m} α'_{i,j} v_j`.
pub fn reba_word_embedding(
    bundle: &TensorBundle,
    fused: &FusedAttention,
    i: usize,
    weighting: Weighting,
) -> Result<EmbeddingVector> {
    check_fused(bundle, fused)?;
    let i0 = zero_based(i, bundle.base_len())?;
    let (acc, degenerate, _) = backward_sum(bundle, fused, i0, weighting);
    Ok(EmbeddingVector {
        values: to_f32(acc),
        method: Method::ReBA,
        pool: Pool::Word,
        k: bundle.repetitions(),
        token_index: Some(i),
        degenerate,
    })
}

/// Per-column weights of the mean-pooling fast path.
fn mean_weights(fused: &FusedAttention, base_len: usize, weighting: Weighting) -> Result<Vec<f64>> {
    match weighting {
        Weighting::Raw => column_weight_sums(fused, base_len),
        Weighting::Normalized => {
            let m = fused.size();
            let mut sums = vec![0.0f64; m];
            for i in 0..base_len {
                if let Some(scale) = backward_scale(fused, i, weighting) {
                    let row = fused.row(i);
                    for k in i..m {
                        sums[k] += scale * f64::from(row[k]);
                    }
                }
            }
            Ok(sums)
        }
    }
}

/// `(1/n) Σ_k α'_k v_k` with column sums `α'_k`: one accumulation per token.
pub fn reba_mean_fast(
    bundle: &TensorBundle,
    fused: &FusedAttention,
    weighting: Weighting,
) -> Result<(Vec<f32>, PoolingCost)> {
    check_fused(bundle, fused)?;
    let n = bundle.base_len();
    let weights = mean_weights(fused, n, weighting)?;
    let mut acc = vec![0.0f64; bundle.dim()];
    let mut cost = PoolingCost::default();
    for (k, &w) in weights.iter().enumerate() {
        axpy(&mut acc, w, bundle.hidden.row(k));
        cost.vector_accumulations += 1;
    }
    let inv = 1.0 / n as f64;
    Ok((acc.into_iter().map(|x| (x * inv) as f32).collect(), cost))
}

/// `(1/n) Σ_i e_i` computed word by word; quadratic in sequence length.
pub fn reba_mean_naive(
    bundle: &TensorBundle,
    fused: &FusedAttention,
    weighting: Weighting,
) -> Result<(Vec<f32>, PoolingCost)> {
    check_fused(bundle, fused)?;
    let n = bundle.base_len();
    let mut acc = vec![0.0f64; bundle.dim()];
    let mut cost = PoolingCost::default();
    for i in 0..n {
        let (e, _, ops) = backward_sum(bundle, fused, i, weighting);
        for (a, x) in acc.iter_mut().zip(e) {
            *a += x;
        }
        cost.vector_accumulations += ops;
    }
    let inv = 1.0 / n as f64;
    Ok((acc.into_iter().map(|x| (x * inv) as f32).collect(), cost))
}

pub fn reba_sentence_embedding(
    bundle: &TensorBundle,
    fused: &FusedAttention,
    pool: Pool,
    weighting: Weighting,
) -> Result<EmbeddingVector> {
    match pool {
        Pool::Last => {
            let mut e = reba_word_embedding(bundle, fused, bundle.base_len(), weighting)?;
            e.pool = Pool::Last;
            e.token_index = None;
            Ok(e)
        }
        Pool::Mean => {
            let (values, _) = reba_mean_fast(bundle, fused, weighting)?;
            let degenerate = values.iter().all(|&x| x == 0.0)
                && (0..bundle.base_len()).all(|i| backward_scale(fused, i, weighting).is_none());
            Ok(EmbeddingVector {
                values,
                method: Method::ReBA,
                pool: Pool::Mean,
                k: bundle.repetitions(),
                token_index: None,
                degenerate,
            })
        }
        Pool::Word => Err(RebaError::validation(
            "word pooling needs a token index; use reba_word_embedding",
        )),
    }
}

fn mean_rows(bundle: &TensorBundle, rows: std::ops::RangeInclusive<usize>, divisor: f64) -> Vec<f32> {
    let mut acc = vec![0.0f64; bundle.dim()];
    for j in rows {
        axpy(&mut acc, 1.0, bundle.hidden.row(j));
    }
    acc.into_iter().map(|x| (x / divisor) as f32).collect()
}

fn check_request_k(bundle: &TensorBundle, request: &EmbedRequest) -> Result<()> {
    if request.method != Method::Classical && request.k != bundle.repetitions() {
        return Err(RebaError::validation(format!(
            "request asks for k={} but the bundle holds {} repetitions",
            request.k,
            bundle.repetitions()
        )));
    }
    Ok(())
}

fn row_for(bundle: &TensorBundle, index0: usize) -> Result<Vec<f32>> {
    if index0 >= bundle.hidden.rows() {
        return Err(RebaError::validation(format!(
            "position {} lies beyond the {} stored tokens (truncated bundle?)",
            index0 + 1,
            bundle.hidden.rows()
        )));
    }
    Ok(bundle.hidden.row(index0).to_vec())
}

/// Echo-k: read states from the repeated copies without backward attention.
pub fn echo_embedding(bundle: &TensorBundle, request: &EmbedRequest, mode: EchoMeanMode) -> Result<EmbeddingVector> {
    check_request_k(bundle, request)?;
    let n = bundle.base_len();
    let k = bundle.repetitions();
    if k < 2 {
        return Err(RebaError::validation(
            "Echo needs at least 2 repetitions; Echo-1 is the Classical embedding, use method classical",
        ));
    }
    let values = match request.pool {
        Pool::Word => {
            let i = request
                .token_index
                .ok_or_else(|| RebaError::validation("word pooling requires a token index"))?;
            let i0 = zero_based(i, n)?;
            row_for(bundle, (k - 1) * n + i0)?
        }
        Pool::Last => row_for(bundle, k * n - 1)?,
        Pool::Mean => {
            row_for(bundle, k * n - 1)?;
            match mode {
                EchoMeanMode::LastOccurrence => mean_rows(bundle, (k - 1) * n..=k * n - 1, n as f64),
                EchoMeanMode::WindowSum => mean_rows(bundle, n - 1..=k * n - 1, 2.0 * n as f64),
            }
        }
    };
    Ok(EmbeddingVector {
        values,
        method: Method::Echo,
        pool: request.pool,
        k,
        token_index: request.token_index,
        degenerate: false,
    })
}

/// Classical embedding from the first `n` states only.
pub fn classical_embedding(bundle: &TensorBundle, request: &EmbedRequest) -> Result<EmbeddingVector> {
    let n = bundle.base_len();
    if n == 0 || n > bundle.hidden.rows() {
        return Err(RebaError::validation("bundle base length outside [1, stored tokens]"));
    }
    let values = match request.pool {
        Pool::Word => {
            let i = request
                .token_index
                .ok_or_else(|| RebaError::validation("word pooling requires a token index"))?;
            bundle.hidden.row(zero_based(i, n)?).to_vec()
        }
        Pool::Last => bundle.hidden.row(n - 1).to_vec(),
        Pool::Mean => mean_rows(bundle, 0..=n - 1, n as f64),
    };
    Ok(EmbeddingVector {
        values,
        method: Method::Classical,
        pool: request.pool,
        k: 1,
        token_index: request.token_index,
        degenerate: false,
    })
}

/// Dispatches a request, fusing the bundle's attentions when ReBA needs them.
pub fn embed(bundle: &TensorBundle, request: &EmbedRequest, options: &EmbedOptions) -> Result<EmbeddingVector> {
    match request.method {
        Method::ReBA => {
            let fused = fusion::fuse(&bundle.attentions, options.strategy)?;
            embed_with_fused(bundle, &fused, request, options)
        }
        Method::Echo => echo_embedding(bundle, request, options.echo_mean_mode),
        Method::Classical => classical_embedding(bundle, request),
    }
}

/// Like [`embed`] but reuses an already fused matrix for ReBA.
pub fn embed_with_fused(
    bundle: &TensorBundle,
    fused: &FusedAttention,
    request: &EmbedRequest,
    options: &EmbedOptions,
) -> Result<EmbeddingVector> {
    match request.method {
        Method::ReBA => {
            check_request_k(bundle, request)?;
            match request.pool {
                Pool::Word => {
                    let i = request
                        .token_index
                        .ok_or_else(|| RebaError::validation("word pooling requires a token index"))?;
                    reba_word_embedding(bundle, fused, i, options.weighting)
                }
                pool => reba_sentence_embedding(bundle, fused, pool, options.weighting),
            }
        }
        _ => embed(bundle, request, options),
    }
}
