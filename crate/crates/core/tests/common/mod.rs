//! Random instance generators and f64 reference oracles shared by the
//! integration tests. The oracles follow the textbook formulas literally
//! (1-based loops where the formulas are 1-based) and never call into the
//! library's numeric paths.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use reba_core::{AttentionStack, BundleHeader, HiddenStates, TensorBundle};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random lower-triangular row-stochastic matrix.
pub fn random_causal_matrix(rng: &mut impl Rng, m: usize) -> Vec<f32> {
    let mut a = vec![0.0f32; m * m];
    for i in 0..m {
        let raw: Vec<f64> = (0..=i).map(|_| rng.gen_range(0.0..1.0f64).powi(3) + 1e-3).collect();
        let total: f64 = raw.iter().sum();
        for (j, r) in raw.iter().enumerate() {
            a[i * m + j] = (r / total) as f32;
        }
    }
    a
}

pub fn random_stack(rng: &mut impl Rng, layers: usize, heads: usize, m: usize) -> AttentionStack {
    let mut data = Vec::with_capacity(layers * heads * m * m);
    for _ in 0..layers * heads {
        data.extend(random_causal_matrix(rng, m));
    }
    AttentionStack::new(layers, heads, m, data).unwrap()
}

/// Random valid bundle: `k` repetitions of `n` random tokens, synthetic
/// attentions and Gaussian-ish hidden states.
pub fn random_bundle(rng: &mut impl Rng, layers: usize, heads: usize, n: usize, k: usize, d: usize) -> TensorBundle {
    let base: Vec<u32> = (0..n).map(|_| rng.gen_range(0..1000)).collect();
    let ids = base.repeat(k);
    let m = n * k;
    let hidden: Vec<f32> = (0..m * d).map(|_| rng.gen_range(-2.0..2.0f32)).collect();
    TensorBundle {
        header: BundleHeader::new(layers, heads, d, n, k, ids),
        attentions: random_stack(rng, layers, heads, m),
        hidden: HiddenStates::new(m, d, hidden).unwrap(),
    }
}

/// Max over all heads of `(A + Aᵀ)/2`, starting from zero, in f64, then
/// rounded to f32.
pub fn fused_oracle(stack: &AttentionStack, layers: std::ops::Range<usize>) -> Vec<f32> {
    let m = stack.seq_len();
    let mut out = vec![0.0f64; m * m];
    for p in layers {
        for q in 0..stack.heads() {
            for i in 0..m {
                for j in 0..m {
                    let s = (stack.get(p, q, i, j) as f64 + stack.get(p, q, j, i) as f64) / 2.0;
                    if s > out[i * m + j] {
                        out[i * m + j] = s;
                    }
                }
            }
        }
    }
    out.into_iter().map(|x| x as f32).collect()
}

/// Literal iterative fusion: `F ← (F + Ã)/2 + |F − Ã|/2` from `F = 0`.
pub fn iterative_fusion_oracle(stack: &AttentionStack) -> Vec<f64> {
    let m = stack.seq_len();
    let mut f = vec![0.0f64; m * m];
    for p in 0..stack.layers() {
        for q in 0..stack.heads() {
            for i in 0..m {
                for j in 0..m {
                    let s = (stack.get(p, q, i, j) as f64 + stack.get(p, q, j, i) as f64) / 2.0;
                    let cur = f[i * m + j];
                    f[i * m + j] = (cur + s) / 2.0 + (cur - s).abs() / 2.0;
                }
            }
        }
    }
    f
}

/// 1-based `A[i][j]` of a row-major f32 matrix, widened.
fn at(a: &[f32], m: usize, i: usize, j: usize) -> f64 {
    a[(i - 1) * m + (j - 1)] as f64
}

/// `α'_k = Σ_{i=1}^{min(n,k)} A[i][k]` for `k = 1..m`.
pub fn column_sums_oracle(fused: &[f32], m: usize, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(m);
    for k in 1..=m {
        let mut s = 0.0;
        for i in 1..=n.min(k) {
            s += at(fused, m, i, k);
        }
        out.push(s);
    }
    out
}

/// `e_i = Σ_{j=i}^{m} A[i][j] v_j`, 1-based `i`.
pub fn word_oracle(fused: &[f32], hidden: &[f32], m: usize, d: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0f64; d];
    for j in i..=m {
        let w = at(fused, m, i, j);
        for c in 0..d {
            e[c] += w * hidden[(j - 1) * d + c] as f64;
        }
    }
    e
}

/// `(1/n) Σ_{i=1}^{n} Σ_{j=i}^{m} A[i][j] v_j`.
pub fn naive_mean_oracle(fused: &[f32], hidden: &[f32], m: usize, n: usize, d: usize) -> Vec<f64> {
    let mut acc = vec![0.0f64; d];
    for i in 1..=n {
        for (a, e) in acc.iter_mut().zip(word_oracle(fused, hidden, m, d, i)) {
            *a += e;
        }
    }
    acc.into_iter().map(|x| x / n as f64).collect()
}

/// Largest absolute difference relative to the larger magnitude of the
/// reference vector (floored at 1 so near-zero vectors compare absolutely).
pub fn max_rel_err(actual: &[f32], expected: &[f64]) -> f64 {
    assert_eq!(actual.len(), expected.len());
    let scale = expected.iter().fold(1.0f64, |s, x| s.max(x.abs()));
    actual
        .iter()
        .zip(expected)
        .map(|(&a, &e)| (a as f64 - e).abs() / scale)
        .fold(0.0, f64::max)
}

pub fn oracle_euclidean(u: &[f32], v: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for c in 0..u.len() {
        s += (u[c] as f64 - v[c] as f64).powi(2);
    }
    s.sqrt()
}

pub fn oracle_cosine_distance(u: &[f32], v: &[f32]) -> f64 {
    let (mut dot, mut uu, mut vv) = (0.0f64, 0.0f64, 0.0f64);
    for c in 0..u.len() {
        dot += u[c] as f64 * v[c] as f64;
        uu += u[c] as f64 * u[c] as f64;
        vv += v[c] as f64 * v[c] as f64;
    }
    1.0 - dot / (uu.sqrt() * vv.sqrt())
}

/// Enumerates all ordered pairs and returns (1-based argmax, row sums).
pub fn four_choice_oracle(vs: &[Vec<f32>; 4], cosine: bool) -> (usize, [f64; 4]) {
    let mut sums = [0.0f64; 4];
    for a in 0..4 {
        for b in 0..4 {
            if a != b {
                sums[a] += if cosine {
                    oracle_cosine_distance(&vs[a], &vs[b])
                } else {
                    oracle_euclidean(&vs[a], &vs[b])
                };
            }
        }
    }
    let mut best = 0;
    for i in 1..4 {
        if sums[i] > sums[best] {
            best = i;
        }
    }
    (best + 1, sums)
}

/// Single-pass computational formula for Pearson's r.
pub fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}
