//! A small deterministic causal transformer.
//!
//! It exists so that every part of the engine can be exercised on genuine
//! causal softmax attentions without loading a pretrained model. Weights are
//! drawn from a SplitMix64 stream, there are no normalization layers, and all
//! dot products and softmax denominators accumulate in ascending index order
//! in f64.

use serde::{Deserialize, Serialize};

use crate::embed::repeat_tokens;
use crate::error::{RebaError, Result};
use crate::tensor_io::{AttentionStack, BundleHeader, HiddenStates, TensorBundle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyModelSpec {
    pub vocab: usize,
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub max_pos: usize,
    pub seed: u64,
}

impl Default for ToyModelSpec {
    fn default() -> Self {
        ToyModelSpec {
            vocab: 32,
            dim: 16,
            heads: 2,
            layers: 2,
            max_pos: 256,
            seed: 42,
        }
    }
}

impl ToyModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab < 2 {
            return Err(RebaError::validation("vocab must be at least 2"));
        }
        if self.dim == 0 || self.heads == 0 || self.layers == 0 || self.max_pos == 0 {
            return Err(RebaError::validation("dim, heads, layers and max_pos must be positive"));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(RebaError::validation(format!(
                "dim {} is not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn tag(&self) -> String {
        format!(
            "toy-transformer V={} d={} h={} L={} P={} seed={}",
            self.vocab, self.dim, self.heads, self.layers, self.max_pos, self.seed
        )
    }
}

/// SplitMix64 mapped onto `[-0.1, 0.1)`.
#[derive(Debug, Clone)]
pub struct WeightStream {
    state: u64,
}

impl WeightStream {
    pub fn new(seed: u64) -> Self {
        WeightStream { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z ^= z >> 30;
        z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z ^= z >> 27;
        z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        z
    }

    pub fn next_weight(&mut self) -> f64 {
        (self.next_u64() as f64 / 18_446_744_073_709_551_616.0) * 0.2 - 0.1
    }

    fn fill(&mut self, len: usize) -> Vec<f64> {
        (0..len).map(|_| self.next_weight()).collect()
    }
}

/// Row-major weights of one block. Shapes are `d x d` except `w1` (`d x 4d`)
/// and `w2` (`4d x d`).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyWeights {
    pub embedding: Vec<f64>,
    pub layers: Vec<LayerWeights>,
    pub positions: Vec<f64>,
}

fn positional_table(max_pos: usize, dim: usize) -> Vec<f64> {
    let mut table = vec![0.0; max_pos * dim];
    for t in 0..max_pos {
        for col in 0..dim {
            let pair = (col / 2) as f64;
            let angle = t as f64 / 10000f64.powf(2.0 * pair / dim as f64);
            table[t * dim + col] = if col % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    table
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub spec: ToyModelSpec,
    pub weights: ToyWeights,
}

/// Draws all weights for `spec`: token embedding first, then per layer
/// `W_q, W_k, W_v, W_o, W_1, W_2`, each row-major.
pub fn init_model(spec: ToyModelSpec) -> Result<ToyModel> {
    spec.validate()?;
    let d = spec.dim;
    let mut stream = WeightStream::new(spec.seed);
    let embedding = stream.fill(spec.vocab * d);
    let layers = (0..spec.layers)
        .map(|_| LayerWeights {
            wq: stream.fill(d * d),
            wk: stream.fill(d * d),
            wv: stream.fill(d * d),
            wo: stream.fill(d * d),
            w1: stream.fill(d * 4 * d),
            w2: stream.fill(4 * d * d),
        })
        .collect();
    Ok(ToyModel {
        spec,
        weights: ToyWeights {
            embedding,
            layers,
            positions: positional_table(spec.max_pos, d),
        },
    })
}

/// `x (rows x inner) · w (inner x cols)`, accumulated in ascending `inner`.
fn matmul(x: &[f64], w: &[f64], rows: usize, inner: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let xr = &x[r * inner..(r + 1) * inner];
        for c in 0..cols {
            let mut acc = 0.0;
            for (t, &xv) in xr.iter().enumerate() {
                acc += xv * w[t * cols + c];
            }
            out[r * cols + c] = acc;
        }
    }
    out
}

/// Full-precision result of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub seq_len: usize,
    /// `layers x heads x m x m`, same layout as [`AttentionStack`].
    pub attention: Vec<f64>,
    /// `m x d` final-layer states.
    pub hidden: Vec<f64>,
}

impl ToyModel {
    pub fn forward_trace(&self, tokens: &[u32]) -> Result<ForwardTrace> {
        let spec = &self.spec;
        let (d, heads, hd) = (spec.dim, spec.heads, spec.head_dim());
        let m = tokens.len();
        if m == 0 {
            return Err(RebaError::validation("cannot run the model on an empty sequence"));
        }
        if m > spec.max_pos {
            return Err(RebaError::validation(format!(
                "sequence of {m} tokens exceeds max_pos {}",
                spec.max_pos
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= spec.vocab) {
            return Err(RebaError::validation(format!(
                "token id {bad} outside vocab of {}",
                spec.vocab
            )));
        }

        let w = &self.weights;
        let mut x = vec![0.0; m * d];
        for (i, &tok) in tokens.iter().enumerate() {
            let emb = &w.embedding[tok as usize * d..(tok as usize + 1) * d];
            let pos = &w.positions[i * d..(i + 1) * d];
            for c in 0..d {
                x[i * d + c] = emb[c] + pos[c];
            }
        }

        let scale = 1.0 / (hd as f64).sqrt();
        let mut attention = vec![0.0; spec.layers * heads * m * m];
        for (layer, lw) in w.layers.iter().enumerate() {
            let q = matmul(&x, &lw.wq, m, d, d);
            let k = matmul(&x, &lw.wk, m, d, d);
            let v = matmul(&x, &lw.wv, m, d, d);
            let mut ctx = vec![0.0; m * d];
            for h in 0..heads {
                let base = (layer * heads + h) * m * m;
                let cols = h * hd..(h + 1) * hd;
                let mut scores = vec![0.0; m];
                for i in 0..m {
                    let qi = &q[i * d + cols.start..i * d + cols.end];
                    for j in 0..=i {
                        let kj = &k[j * d + cols.start..j * d + cols.end];
                        let mut dot = 0.0;
                        for (a, b) in qi.iter().zip(kj) {
                            dot += a * b;
                        }
                        scores[j] = dot * scale;
                    }
                    let max = scores[..=i].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut denom = 0.0;
                    for s in &mut scores[..=i] {
                        *s = (*s - max).exp();
                        denom += *s;
                    }
                    let row = &mut attention[base + i * m..base + (i + 1) * m];
                    for j in 0..=i {
                        row[j] = scores[j] / denom;
                    }
                    for j in 0..=i {
                        let a = row[j];
                        for c in cols.clone() {
                            ctx[i * d + c] += a * v[j * d + c];
                        }
                    }
                }
            }
            let projected = matmul(&ctx, &lw.wo, m, d, d);
            for (xv, p) in x.iter_mut().zip(&projected) {
                *xv += p;
            }
            let mut inner = matmul(&x, &lw.w1, m, d, 4 * d);
            for v in &mut inner {
                *v = v.tanh();
            }
            let out = matmul(&inner, &lw.w2, m, 4 * d, d);
            for (xv, o) in x.iter_mut().zip(&out) {
                *xv += o;
            }
        }

        Ok(ForwardTrace {
            seq_len: m,
            attention,
            hidden: x,
        })
    }

    /// Runs the model and packages the result as a bundle with `base_len = m`
    /// and one repetition; callers that repeated the input adjust the header.
    pub fn forward(&self, tokens: &[u32]) -> Result<TensorBundle> {
        let trace = self.forward_trace(tokens)?;
        let m = trace.seq_len;
        let attentions = AttentionStack::new(
            self.spec.layers,
            self.spec.heads,
            m,
            trace.attention.iter().map(|&a| a as f32).collect(),
        )?;
        let hidden = HiddenStates::new(m, self.spec.dim, trace.hidden.iter().map(|&h| h as f32).collect())?;
        let mut header = BundleHeader::new(self.spec.layers, self.spec.heads, self.spec.dim, m, 1, tokens.to_vec());
        header.model_tag = self.spec.tag();
        Ok(TensorBundle {
            header,
            attentions,
            hidden,
        })
    }

    /// Repeats `tokens` `k` times and runs the model on the result.
    pub fn generate_bundle(&self, tokens: &[u32], k: usize) -> Result<TensorBundle> {
        let repeated = repeat_tokens(tokens, k)?;
        let mut bundle = self.forward(&repeated)?;
        bundle.header.base_len = tokens.len();
        bundle.header.repetitions = k;
        Ok(bundle)
    }
}

pub fn generate_bundle(spec: ToyModelSpec, tokens: &[u32], k: usize) -> Result<TensorBundle> {
    init_model(spec)?.generate_bundle(tokens, k)
}
