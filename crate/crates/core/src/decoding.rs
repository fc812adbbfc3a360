//! Continuation generation: greedy search, beam search with optional n-gram
//! blocking, and top-k / nucleus sampling.
//!
//! All decoders are fixed-length (no end-of-sequence handling) and score a
//! hypothesis as the sum of model log-probabilities of its chosen tokens,
//! accumulated in f64. Ties break toward the lowest token id everywhere so
//! runs are reproducible.
//!
//! Completions file format: one record per line,
//! `prefix ids<TAB>continuation ids<TAB>strategy tag<TAB>score`, ids
//! space-separated, score in shortest round-trip decimal form.

use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{LanguageModel, ModelError};
use crate::real::Real;

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("empty prefix")]
    EmptyPrefix,
    #[error("max_new_tokens must be >= 1")]
    ZeroLength,
    #[error("beam size must be >= 1")]
    ZeroBeam,
    #[error("invalid truncation parameter: {0}")]
    InvalidTruncation(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid completion record: {0}")]
    BadRecord(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Decoding strategy with exactly the fields that strategy needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "lowercase", deny_unknown_fields)]
pub enum DecodeStrategy {
    Greedy,
    Beam {
        beam_size: usize,
        #[serde(default)]
        block_ngram: Option<usize>,
    },
    Topk {
        k: usize,
    },
    Nucleus {
        p: f64,
    },
}

impl fmt::Display for DecodeStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecodeStrategy::Greedy => write!(f, "greedy"),
            DecodeStrategy::Beam { beam_size, block_ngram: None } => write!(f, "beam{beam_size}"),
            DecodeStrategy::Beam { beam_size, block_ngram: Some(n) } => {
                write!(f, "beam{beam_size}-block{n}")
            }
            DecodeStrategy::Topk { k } => write!(f, "topk{k}"),
            DecodeStrategy::Nucleus { p } => write!(f, "nucleus{p}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingConfig {
    #[serde(flatten)]
    pub strategy: DecodeStrategy,
    pub max_new_tokens: usize,
    #[serde(default)]
    pub seed: u64,
}

/// A finished decode: the continuation, its summed log-probability under the
/// model, and how many beam steps had to fall back because every expansion
/// was blocked.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub continuation: Vec<u32>,
    pub score: f64,
    pub blocked_fallbacks: u64,
}

/// Partially decoded sequence tracked by beam search.
#[derive(Debug, Clone)]
pub struct Hypothesis {
    pub ids: Vec<u32>,
    pub score: f64,
}

/// Log-probabilities of the next token given `context`, in f64.
fn next_log_probs<T: Real, M: LanguageModel<T>>(
    model: &M,
    context: &[u32],
) -> Result<Vec<f64>, DecodeError> {
    let logits = model.logits(context)?;
    let row = logits.row(logits.rows() - 1);
    let mut max = f64::NEG_INFINITY;
    for &x in row {
        let v = x.as_f64();
        if v > max {
            max = v;
        }
    }
    let mut exps: Vec<f64> = row.iter().map(|&x| (x.as_f64() - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let log_z = z.ln();
    for (e, &x) in exps.iter_mut().zip(row) {
        *e = x.as_f64() - max - log_z;
    }
    Ok(exps)
}

/// Lowest-id argmax.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Greedy search: the highest-probability token at each step, ties broken by
/// lowest id; exactly `n` tokens.
pub fn greedy_decode<T: Real, M: LanguageModel<T>>(
    model: &M,
    prefix: &[u32],
    n: usize,
) -> Result<Decoded, DecodeError> {
    if prefix.is_empty() {
        return Err(DecodeError::EmptyPrefix);
    }
    if n == 0 {
        return Err(DecodeError::ZeroLength);
    }
    let mut context = prefix.to_vec();
    let mut continuation = Vec::with_capacity(n);
    let mut score = 0.0f64;
    for _ in 0..n {
        let lp = next_log_probs(model, &context)?;
        let chosen = argmax(&lp);
        score += lp[chosen];
        context.push(chosen as u32);
        continuation.push(chosen as u32);
    }
    Ok(Decoded { continuation, score, blocked_fallbacks: 0 })
}

/// True when appending `next` to `seq` would complete an n-gram already
/// present in `seq`.
fn creates_repeat_ngram(seq: &[u32], next: u32, n: usize) -> bool {
    if n == 0 || seq.len() + 1 < n {
        return false;
    }
    let tail_start = seq.len() + 1 - n;
    let tail = &seq[tail_start..];
    for s in 0..=seq.len() - n {
        if seq[s..s + n - 1] == *tail && seq[s + n - 1] == next {
            return true;
        }
    }
    false
}

/// Fixed-length beam search over sum-of-log-prob scores, without length
/// normalization. With `block_ngram = Some(n)`, an expansion that would
/// create an n-gram already present in that hypothesis's full sequence
/// (prefix included) is excluded; if that excludes every expansion of every
/// hypothesis, the step falls back to each hypothesis's unblocked argmax and
/// the fallback counter increments.
pub fn beam_search_decode<T: Real, M: LanguageModel<T>>(
    model: &M,
    prefix: &[u32],
    n: usize,
    beam_size: usize,
    block_ngram: Option<usize>,
) -> Result<Decoded, DecodeError> {
    if prefix.is_empty() {
        return Err(DecodeError::EmptyPrefix);
    }
    if n == 0 {
        return Err(DecodeError::ZeroLength);
    }
    if beam_size == 0 {
        return Err(DecodeError::ZeroBeam);
    }
    let mut beam: Vec<Hypothesis> = vec![Hypothesis { ids: Vec::new(), score: 0.0 }];
    let mut blocked_fallbacks = 0u64;
    let mut full = prefix.to_vec();
    for _ in 0..n {
        let mut log_probs = Vec::with_capacity(beam.len());
        for hyp in &beam {
            full.truncate(prefix.len());
            full.extend_from_slice(&hyp.ids);
            log_probs.push(next_log_probs(model, &full)?);
        }
        // (score, hypothesis index, token)
        let mut candidates: Vec<(f64, usize, u32)> = Vec::new();
        for (h, (hyp, lp)) in beam.iter().zip(&log_probs).enumerate() {
            full.truncate(prefix.len());
            full.extend_from_slice(&hyp.ids);
            for (x, &l) in lp.iter().enumerate() {
                if let Some(ngram) = block_ngram {
                    if creates_repeat_ngram(&full, x as u32, ngram) {
                        continue;
                    }
                }
                candidates.push((hyp.score + l, h, x as u32));
            }
        }
        if candidates.is_empty() {
            blocked_fallbacks += 1;
            beam = beam
                .iter()
                .zip(&log_probs)
                .map(|(hyp, lp)| {
                    let chosen = argmax(lp);
                    let mut ids = hyp.ids.clone();
                    ids.push(chosen as u32);
                    Hypothesis { ids, score: hyp.score + lp[chosen] }
                })
                .collect();
            continue;
        }
        candidates.sort_by(|a, b| {
            b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
        });
        candidates.truncate(beam_size);
        beam = candidates
            .into_iter()
            .map(|(score, h, x)| {
                let mut ids = beam[h].ids.clone();
                ids.push(x);
                Hypothesis { ids, score }
            })
            .collect();
    }
    // Highest score wins; the beam order already encodes the tie rule.
    let mut best = 0usize;
    for (i, hyp) in beam.iter().enumerate().skip(1) {
        if hyp.score > beam[best].score {
            best = i;
        }
    }
    let winner = beam.swap_remove(best);
    Ok(Decoded { continuation: winner.ids, score: winner.score, blocked_fallbacks })
}

/// Truncation rule for stochastic decoding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TruncateMode {
    TopK(usize),
    Nucleus(f64),
}

/// Restricts a probability row to the strategy's token subset U and
/// renormalizes: top-k keeps the k most probable tokens, nucleus the
/// smallest probability-sorted set with cumulative mass >= p (ties toward
/// lower ids in both). If U covers every nonzero-mass token (k >= V or
/// p = 1.0), the row is returned unchanged.
pub fn truncated_distribution(p_row: &[f64], mode: TruncateMode) -> Result<Vec<f64>, DecodeError> {
    match mode {
        TruncateMode::TopK(k) if k == 0 => {
            return Err(DecodeError::InvalidTruncation("k must be >= 1".into()))
        }
        TruncateMode::Nucleus(p) if !(p > 0.0 && p <= 1.0) => {
            return Err(DecodeError::InvalidTruncation(format!("p must be in (0, 1], got {p}")))
        }
        _ => {}
    }
    let v = p_row.len();
    let mut order: Vec<usize> = (0..v).collect();
    order.sort_by(|&a, &b| p_row[b].partial_cmp(&p_row[a]).unwrap().then(a.cmp(&b)));
    let support = match mode {
        TruncateMode::TopK(k) => k.min(v),
        TruncateMode::Nucleus(p) => {
            let mut mass = 0.0;
            let mut taken = v;
            for (count, &idx) in order.iter().enumerate() {
                mass += p_row[idx];
                if mass >= p {
                    taken = count + 1;
                    break;
                }
            }
            taken
        }
    };
    let nonzero = p_row.iter().filter(|&&p| p > 0.0).count();
    if support >= v || order[..support].iter().filter(|&&i| p_row[i] > 0.0).count() >= nonzero {
        return Ok(p_row.to_vec());
    }
    let z: f64 = order[..support].iter().map(|&i| p_row[i]).sum();
    let mut q = vec![0.0; v];
    for &i in &order[..support] {
        q[i] = p_row[i] / z;
    }
    Ok(q)
}

/// Samples one index from a probability row by inverse CDF in id order.
fn sample_index<R: Rng>(q: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_nonzero = 0usize;
    for (i, &p) in q.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_nonzero = i;
            if u < acc {
                return i;
            }
        }
    }
    last_nonzero
}

/// Stochastic decoding: each step samples from the truncated, renormalized
/// next-token distribution. Deterministic given the generator state. The
/// returned score sums the model's own log-probabilities of the sampled
/// tokens, not the truncated ones.
pub fn stochastic_decode<T: Real, M: LanguageModel<T>, R: Rng>(
    model: &M,
    prefix: &[u32],
    n: usize,
    mode: TruncateMode,
    rng: &mut R,
) -> Result<Decoded, DecodeError> {
    if prefix.is_empty() {
        return Err(DecodeError::EmptyPrefix);
    }
    if n == 0 {
        return Err(DecodeError::ZeroLength);
    }
    let mut context = prefix.to_vec();
    let mut continuation = Vec::with_capacity(n);
    let mut score = 0.0f64;
    for _ in 0..n {
        let lp = next_log_probs(model, &context)?;
        let p_row: Vec<f64> = lp.iter().map(|&l| l.exp()).collect();
        let q = truncated_distribution(&p_row, mode)?;
        let chosen = sample_index(&q, rng);
        score += lp[chosen];
        context.push(chosen as u32);
        continuation.push(chosen as u32);
    }
    Ok(Decoded { continuation, score, blocked_fallbacks: 0 })
}

/// Runs the configured strategy; stochastic strategies derive their
/// generator from `config.seed`.
pub fn decode<T: Real, M: LanguageModel<T>>(
    model: &M,
    prefix: &[u32],
    config: &DecodingConfig,
) -> Result<Decoded, DecodeError> {
    let n = config.max_new_tokens;
    match config.strategy {
        DecodeStrategy::Greedy => greedy_decode(model, prefix, n),
        DecodeStrategy::Beam { beam_size, block_ngram } => {
            beam_search_decode(model, prefix, n, beam_size, block_ngram)
        }
        DecodeStrategy::Topk { k } => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            stochastic_decode(model, prefix, n, TruncateMode::TopK(k), &mut rng)
        }
        DecodeStrategy::Nucleus { p } => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            stochastic_decode(model, prefix, n, TruncateMode::Nucleus(p), &mut rng)
        }
    }
}

/// One line of the completions file.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRecord {
    pub prefix: Vec<u32>,
    pub continuation: Vec<u32>,
    pub strategy: String,
    pub score: f64,
}

impl CompletionRecord {
    pub fn to_line(&self) -> String {
        let ids = |v: &[u32]| v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ");
        format!("{}\t{}\t{}\t{}", ids(&self.prefix), ids(&self.continuation), self.strategy, self.score)
    }

    pub fn from_line(line: &str) -> Result<Self, DecodeError> {
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 4 {
            return Err(DecodeError::BadRecord(format!("expected 4 fields, got {}", parts.len())));
        }
        let parse_ids = |s: &str| -> Result<Vec<u32>, DecodeError> {
            s.split_whitespace()
                .map(|t| t.parse::<u32>().map_err(|e| DecodeError::BadRecord(e.to_string())))
                .collect()
        };
        Ok(Self {
            prefix: parse_ids(parts[0])?,
            continuation: parse_ids(parts[1])?,
            strategy: parts[2].to_string(),
            score: parts[3].parse().map_err(|e: std::num::ParseFloatError| {
                DecodeError::BadRecord(e.to_string())
            })?,
        })
    }
}

pub fn write_completions(path: &std::path::Path, records: &[CompletionRecord]) -> Result<(), DecodeError> {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_completions(path: &std::path::Path) -> Result<Vec<CompletionRecord>, DecodeError> {
    let raw = std::fs::read_to_string(path)?;
    raw.lines().map(CompletionRecord::from_line).collect()
}
