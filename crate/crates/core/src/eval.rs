//! Evaluation: distances, the four-choice polysemy protocol, and the
//! sentence-level metrics (accuracy, Pearson correlation, Recall@k).

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::hash::Hash;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{self, EchoMeanMode, EmbedOptions, EmbedRequest, Method, Pool, Weighting};
use crate::error::{RebaError, Result};
use crate::fusion::FusionStrategy;
use crate::tensor_io::read_bundle_file;
use crate::vector_file::read_embedding_json;

fn check_lengths(u: &[f32], v: &[f32]) -> Result<()> {
    if u.len() != v.len() {
        return Err(RebaError::validation(format!(
            "vector lengths differ: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    Ok(())
}

pub fn euclidean(u: &[f32], v: &[f32]) -> Result<f64> {
    check_lengths(u, v)?;
    let sq: f64 = u
        .iter()
        .zip(v)
        .map(|(&a, &b)| {
            let d = f64::from(a) - f64::from(b);
            d * d
        })
        .sum();
    Ok(sq.sqrt())
}

fn norm(u: &[f32]) -> f64 {
    u.iter().map(|&a| f64::from(a) * f64::from(a)).sum::<f64>().sqrt()
}

pub fn cosine_similarity(u: &[f32], v: &[f32]) -> Result<f64> {
    check_lengths(u, v)?;
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(RebaError::DegenerateVector(
            "cosine similarity of a zero-norm vector".into(),
        ));
    }
    let dot: f64 = u.iter().zip(v).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    Euclidean,
    /// `1 - cosine similarity`.
    Cosine,
}

impl Distance {
    pub fn as_str(self) -> &'static str {
        match self {
            Distance::Euclidean => "euclidean",
            Distance::Cosine => "cosine",
        }
    }
}

impl fmt::Display for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Distance {
    type Err = RebaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Distance::Euclidean),
            "cosine" => Ok(Distance::Cosine),
            other => Err(RebaError::validation(format!("unknown distance {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourChoiceOutcome {
    /// 1-based option with the largest distance sum.
    pub chosen: usize,
    pub distances: [[f64; 4]; 4],
    /// Sum of each option's distances to the other three.
    pub scores: [f64; 4],
    /// Options that were zero vectors under cosine distance.
    pub degenerate: [bool; 4],
}

/// Picks the option farthest in total from the other three. Ties go to the
/// smallest index. Under cosine distance a zero vector is placed at distance
/// 1 from every other option and flagged.
pub fn four_choice_answer<V: AsRef<[f32]>>(embeddings: &[V; 4], distance: Distance) -> Result<FourChoiceOutcome> {
    let vecs: Vec<&[f32]> = embeddings.iter().map(AsRef::as_ref).collect();
    for v in &vecs[1..] {
        check_lengths(vecs[0], v)?;
    }
    let mut degenerate = [false; 4];
    if distance == Distance::Cosine {
        for (flag, v) in degenerate.iter_mut().zip(&vecs) {
            *flag = norm(v) == 0.0;
        }
    }

    let mut distances = [[0.0f64; 4]; 4];
    for a in 0..4 {
        for b in a + 1..4 {
            let d = match distance {
                Distance::Euclidean => euclidean(vecs[a], vecs[b])?,
                Distance::Cosine if degenerate[a] || degenerate[b] => 1.0,
                Distance::Cosine => 1.0 - cosine_similarity(vecs[a], vecs[b])?,
            };
            distances[a][b] = d;
            distances[b][a] = d;
        }
    }

    let mut scores = [0.0f64; 4];
    for (score, row) in scores.iter_mut().zip(&distances) {
        *score = row.iter().sum();
    }
    let mut best = 0;
    for i in 1..4 {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    Ok(FourChoiceOutcome {
        chosen: best + 1,
        distances,
        scores,
        degenerate,
    })
}

pub fn accuracy(chosen: &[usize], gold: &[usize]) -> Result<f64> {
    if chosen.is_empty() {
        return Err(RebaError::validation("accuracy of an empty prediction list"));
    }
    if chosen.len() != gold.len() {
        return Err(RebaError::validation(format!(
            "{} predictions for {} gold labels",
            chosen.len(),
            gold.len()
        )));
    }
    let correct = chosen.iter().zip(gold).filter(|(c, g)| c == g).count();
    Ok(correct as f64 / chosen.len() as f64)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(RebaError::validation(format!(
            "sample lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(RebaError::validation("pearson correlation needs at least two samples"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(RebaError::Numeric("non-finite sample".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(RebaError::DegenerateStatistics(
            "zero variance in a pearson sample".into(),
        ));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Fraction of `relevant` found among the first `k` entries of `ranked`.
pub fn recall_at_k<T: Eq + Hash>(ranked: &[T], relevant: &HashSet<T>, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(RebaError::validation("recall@k needs k >= 1"));
    }
    if relevant.is_empty() {
        return Err(RebaError::validation("recall@k needs a nonempty relevant set"));
    }
    let mut seen = HashSet::new();
    let hits = ranked
        .iter()
        .take(k)
        .filter(|id| relevant.contains(*id) && seen.insert(*id))
        .count();
    Ok(hits as f64 / relevant.len() as f64)
}

/// One line of a four-choice manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalQuestion {
    pub question_id: String,
    /// Bundle paths; relative paths resolve against the manifest's directory.
    pub options: [PathBuf; 4],
    /// 1-based position of the target word in each option's base sequence.
    pub target_token_index: [usize; 4],
    /// 1-based correct option.
    pub gold: usize,
}

pub fn parse_manifest(text: &str) -> Result<Vec<EvalQuestion>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let q: EvalQuestion =
            serde_json::from_str(line).map_err(|e| RebaError::format(format!("manifest line {}: {e}", lineno + 1)))?;
        if !(1..=4).contains(&q.gold) {
            return Err(RebaError::validation(format!(
                "question {}: gold {} outside 1..=4",
                q.question_id, q.gold
            )));
        }
        if q.target_token_index.contains(&0) {
            return Err(RebaError::validation(format!(
                "question {}: target token indices are 1-based",
                q.question_id
            )));
        }
        out.push(q);
    }
    Ok(out)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<EvalQuestion>> {
    parse_manifest(&fs::read_to_string(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub method: Method,
    pub pool: Pool,
    pub distance: Distance,
    pub strategy: FusionStrategy,
    pub echo_mean_mode: EchoMeanMode,
    pub normalize: bool,
}

impl EvalConfig {
    pub fn new(method: Method, pool: Pool, distance: Distance) -> Self {
        EvalConfig {
            method,
            pool,
            distance,
            strategy: FusionStrategy::default(),
            echo_mean_mode: EchoMeanMode::default(),
            normalize: false,
        }
    }

    fn embed_options(&self) -> EmbedOptions {
        EmbedOptions {
            strategy: self.strategy,
            echo_mean_mode: self.echo_mean_mode,
            weighting: if self.normalize {
                Weighting::Normalized
            } else {
                Weighting::Raw
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionResult {
    pub question_id: String,
    pub chosen: usize,
    pub gold: usize,
    pub correct: bool,
    pub scores: [f64; 4],
    pub distances: [[f64; 4]; 4],
    /// Options whose embedding was a zero vector (all backward weights zero,
    /// or zero norm under cosine distance).
    pub degenerate: [bool; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub questions: Vec<QuestionResult>,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

fn tag_error(question: &str, path: &Path, err: RebaError) -> RebaError {
    let where_ = format!("question {question}: {}", path.display());
    match err {
        RebaError::Io(e) => RebaError::Io(io::Error::new(e.kind(), format!("{where_}: {e}"))),
        RebaError::Format(m) => RebaError::Format(format!("{where_}: {m}")),
        RebaError::Validation(m) => RebaError::Validation(format!("{where_}: {m}")),
        RebaError::Numeric(m) => RebaError::Numeric(format!("{where_}: {m}")),
        other => other,
    }
}

fn answer_question(q: &EvalQuestion, base_dir: &Path, config: &EvalConfig) -> Result<QuestionResult> {
    let options = config.embed_options();
    let mut embeddings: [Vec<f32>; 4] = Default::default();
    let mut zero_weight = [false; 4];
    for slot in 0..4 {
        let path = base_dir.join(&q.options[slot]);
        let tag = |e| tag_error(&q.question_id, &path, e);
        let bundle = read_bundle_file(&path).map_err(tag)?;
        let index = (config.pool == Pool::Word).then_some(q.target_token_index[slot]);
        let request = EmbedRequest::for_bundle(&bundle, config.method, config.pool, index).map_err(tag)?;
        let e = embed::embed(&bundle, &request, &options).map_err(tag)?;
        zero_weight[slot] = e.degenerate;
        embeddings[slot] = e.values;
    }
    let outcome =
        four_choice_answer(&embeddings, config.distance).map_err(|e| tag_error(&q.question_id, base_dir, e))?;
    let mut degenerate = outcome.degenerate;
    for (d, z) in degenerate.iter_mut().zip(zero_weight) {
        *d |= z;
    }
    Ok(QuestionResult {
        question_id: q.question_id.clone(),
        chosen: outcome.chosen,
        gold: q.gold,
        correct: outcome.chosen == q.gold,
        scores: outcome.scores,
        distances: outcome.distances,
        degenerate,
    })
}

/// Answers every question (in parallel) and aggregates accuracy. Rows keep
/// manifest order.
pub fn run_four_choice_eval(manifest: &[EvalQuestion], base_dir: &Path, config: &EvalConfig) -> Result<EvalReport> {
    if manifest.is_empty() {
        return Err(RebaError::validation("empty manifest"));
    }
    let questions = manifest
        .par_iter()
        .map(|q| answer_question(q, base_dir, config))
        .collect::<Result<Vec<_>>>()?;
    let chosen: Vec<usize> = questions.iter().map(|r| r.chosen).collect();
    let gold: Vec<usize> = questions.iter().map(|r| r.gold).collect();
    let accuracy = accuracy(&chosen, &gold)?;
    let correct = questions.iter().filter(|r| r.correct).count();
    Ok(EvalReport {
        config: *config,
        total: questions.len(),
        correct,
        questions,
        accuracy,
    })
}

/// One line of a similarity-pairs file: two embedding files and a gold score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub a: PathBuf,
    pub b: PathBuf,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub a: PathBuf,
    pub b: PathBuf,
    pub gold: f64,
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PearsonReport {
    pub pairs: Vec<PairResult>,
    pub count: usize,
    pub pearson: f64,
}

pub fn parse_pairs(text: &str) -> Result<Vec<ScoredPair>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| RebaError::format(format!("pairs line {}: {e}", i + 1))))
        .collect()
}

/// Correlates the cosine similarity of each embedding pair with its gold score.
pub fn run_pearson_eval(pairs: &[ScoredPair], base_dir: &Path) -> Result<PearsonReport> {
    let mut rows = Vec::with_capacity(pairs.len());
    for p in pairs {
        let a = read_embedding_json(base_dir.join(&p.a))?;
        let b = read_embedding_json(base_dir.join(&p.b))?;
        let cosine = cosine_similarity(&a.values, &b.values)?;
        rows.push(PairResult {
            a: p.a.clone(),
            b: p.b.clone(),
            gold: p.score,
            cosine,
        });
    }
    let predicted: Vec<f64> = rows.iter().map(|r| r.cosine).collect();
    let gold: Vec<f64> = rows.iter().map(|r| r.gold).collect();
    let r = pearson(&predicted, &gold)?;
    Ok(PearsonReport {
        count: rows.len(),
        pairs: rows,
        pearson: r,
    })
}
