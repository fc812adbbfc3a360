//! Training objectives: maximum likelihood, token-level unlikelihood with
//! negative candidates, sequence-level unlikelihood over decoded
//! continuations, and the closed-form softmax-input gradient used to verify
//! the implementation.
//!
//! All losses are evaluated in f64 regardless of the working scalar type;
//! logit gradients are returned in the working type so they can feed the
//! model backward pass directly.

use rand::Rng;

use crate::mat::Mat;
use crate::real::Real;

/// Complement probabilities below this floor are clamped before the log so a
/// saturated candidate yields a large finite loss instead of infinity.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum ObjectiveError {
    #[error("alpha must be >= 0, got {0}")]
    AlphaNegative(f64),
    #[error("target id {id} out of range for vocab size {vocab}")]
    TargetOutOfRange { id: u32, vocab: usize },
    #[error("candidate id {id} out of range for vocab size {vocab}")]
    CandidateOutOfRange { id: u32, vocab: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("degenerate candidate probability: p_neg = 1")]
    DegenerateCandidate,
    #[error("context boundary {k} invalid for sequence of {len} positions")]
    BoundaryOutOfRange { k: usize, len: usize },
}

/// Scalar loss with its per-step decomposition. `total` is the exact sum of
/// `per_step` (fixed left-to-right accumulation).
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub per_step: Vec<f64>,
    pub n_tokens: usize,
}

impl LossValue {
    fn from_steps(per_step: Vec<f64>) -> Self {
        let total = per_step.iter().sum();
        let n_tokens = per_step.len();
        Self { total, per_step, n_tokens }
    }
}

/// Per-step sets of negative-candidate token ids. Each inner vec is sorted
/// and duplicate-free so float reductions visit candidates in a fixed order.
/// Alignment is contextual: token-level sets align with target rows,
/// sequence-level sets with continuation positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pub per_step: Vec<Vec<u32>>,
}

impl CandidateSet {
    pub fn empty(len: usize) -> Self {
        Self { per_step: vec![Vec::new(); len] }
    }

    pub fn len(&self) -> usize {
        self.per_step.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_step.is_empty()
    }

    /// Total number of (step, candidate) pairs.
    pub fn total_candidates(&self) -> usize {
        self.per_step.iter().map(|s| s.len()).sum()
    }
}

/// Row softmax in f64 with max subtraction. Returns (probs, log Z, max).
fn softmax_f64<T: Real>(row: &[T]) -> (Vec<f64>, f64, f64) {
    let mut max = f64::NEG_INFINITY;
    for &x in row {
        let v = x.as_f64();
        if v > max {
            max = v;
        }
    }
    let mut exps: Vec<f64> = row.iter().map(|&x| (x.as_f64() - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    for e in &mut exps {
        *e /= z;
    }
    (exps, z.ln(), max)
}

/// Complement 1 - p(c) computed as a sum over the other tokens, which stays
/// accurate when p(c) is close to one. Clamped at [`PROB_CLAMP`].
fn complement_prob(probs: &[f64], c: usize) -> f64 {
    let mut rest = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        if i != c {
            rest += p;
        }
    }
    rest.max(PROB_CLAMP)
}

/// Negative log-likelihood per step plus its logit gradient p - x*.
pub fn mle_loss<T: Real>(
    logits: &Mat<T>,
    targets: &[u32],
) -> Result<(LossValue, Mat<T>), ObjectiveError> {
    if targets.len() != logits.rows() {
        return Err(ObjectiveError::LengthMismatch(format!(
            "{} targets for {} logit rows",
            targets.len(),
            logits.rows()
        )));
    }
    let vocab = logits.cols();
    let mut per_step = Vec::with_capacity(targets.len());
    let mut dlogits = Mat::zeros(logits.rows(), vocab);
    for (t, &target) in targets.iter().enumerate() {
        if target as usize >= vocab {
            return Err(ObjectiveError::TargetOutOfRange { id: target, vocab });
        }
        let (probs, log_z, max) = softmax_f64(logits.row(t));
        let log_p = logits.row(t)[target as usize].as_f64() - max - log_z;
        per_step.push(-log_p);
        let drow = dlogits.row_mut(t);
        for (i, &p) in probs.iter().enumerate() {
            drow[i] = T::from_f64(p);
        }
        drow[target as usize] -= T::one();
    }
    Ok((LossValue::from_steps(per_step), dlogits))
}

/// Unlikelihood loss for one step: -sum_c log(1 - p(c)), with the complement
/// clamped at [`PROB_CLAMP`]. Also returns the logit gradient of the row.
/// The gradient uses the clamped complement in its denominator so saturated
/// candidates still receive a bounded push.
pub fn unlikelihood_loss_row<T: Real>(
    logits_row: &[T],
    candidates: &[u32],
) -> Result<(f64, Vec<T>), ObjectiveError> {
    let vocab = logits_row.len();
    let mut dlogits = vec![T::zero(); vocab];
    if candidates.is_empty() {
        return Ok((0.0, dlogits));
    }
    for &c in candidates {
        if c as usize >= vocab {
            return Err(ObjectiveError::CandidateOutOfRange { id: c, vocab });
        }
    }
    let (probs, _, _) = softmax_f64(logits_row);
    let mut loss = 0.0;
    let mut drow = vec![0.0f64; vocab];
    for &c in candidates {
        let c = c as usize;
        let one_minus = complement_prob(&probs, c);
        loss -= one_minus.ln();
        // d/da_i of -log(1 - p_c) is (p_c / (1 - p_c)) * (delta_ic - p_i).
        let ratio = probs[c] / one_minus;
        for (i, &p) in probs.iter().enumerate() {
            drow[i] -= ratio * p;
        }
        drow[c] += ratio;
    }
    for (o, g) in dlogits.iter_mut().zip(&drow) {
        *o = T::from_f64(*g);
    }
    Ok((loss, dlogits))
}

/// Token-level objective: per step, -log p(x_t) - alpha * sum_c log(1 - p(c)).
/// With alpha = 0 (or empty candidate sets) this reduces bit-exactly to
/// [`mle_loss`]. `candidates` aligns with `targets` row for row.
pub fn token_unlikelihood_objective<T: Real>(
    logits: &Mat<T>,
    targets: &[u32],
    candidates: &CandidateSet,
    alpha: f64,
) -> Result<(LossValue, Mat<T>), ObjectiveError> {
    if alpha < 0.0 {
        return Err(ObjectiveError::AlphaNegative(alpha));
    }
    if candidates.len() != targets.len() {
        return Err(ObjectiveError::LengthMismatch(format!(
            "{} candidate steps for {} targets",
            candidates.len(),
            targets.len()
        )));
    }
    let (mut loss, mut dlogits) = mle_loss(logits, targets)?;
    if alpha == 0.0 {
        return Ok((loss, dlogits));
    }
    for (t, cands) in candidates.per_step.iter().enumerate() {
        if cands.is_empty() {
            continue;
        }
        let (ul_loss, ul_grad) = unlikelihood_loss_row(logits.row(t), cands)?;
        loss.per_step[t] += alpha * ul_loss;
        let alpha_t = T::from_f64(alpha);
        for (d, &g) in dlogits.row_mut(t).iter_mut().zip(&ul_grad) {
            *d += alpha_t * g;
        }
    }
    Ok((LossValue::from_steps(loss.per_step), dlogits))
}

/// Inputs for the closed-form gradient of one step.
#[derive(Debug, Clone)]
pub struct GradRowSpec {
    pub alpha: f64,
    pub true_index: u32,
    /// Sorted negative-candidate ids. May legitimately contain `true_index`
    /// for repeat-n candidates; prev-context construction excludes it.
    pub neg_indices: Vec<u32>,
    pub vocab_size: usize,
}

/// Closed-form gradient of the per-step gain
/// `log p(x_t) + alpha * sum_c log(1 - p(c))` with respect to the logits:
/// the single-candidate form is `x* - m (.) p` with
/// `m_i = 1 - alpha * p_neg / (1 - p_neg)` away from the candidate and
/// `m_neg = 1 + alpha`. Multiple candidates average the single-candidate
/// form with per-candidate weight alpha_c = alpha * |C| (see
/// [`regroup_multi_candidate`]).
///
/// Note the sign: this is the ascent direction on the gain. The descent
/// gradient used as `dlogits` by the objectives above is its negation.
pub fn closed_form_gradient(
    spec: &GradRowSpec,
    p: &[f64],
) -> Result<Vec<f64>, ObjectiveError> {
    if spec.alpha < 0.0 {
        return Err(ObjectiveError::AlphaNegative(spec.alpha));
    }
    if p.len() != spec.vocab_size {
        return Err(ObjectiveError::LengthMismatch(format!(
            "{} probabilities for vocab size {}",
            p.len(),
            spec.vocab_size
        )));
    }
    if spec.true_index as usize >= spec.vocab_size {
        return Err(ObjectiveError::TargetOutOfRange { id: spec.true_index, vocab: spec.vocab_size });
    }
    for &c in &spec.neg_indices {
        if c as usize >= spec.vocab_size {
            return Err(ObjectiveError::CandidateOutOfRange { id: c, vocab: spec.vocab_size });
        }
    }
    let n_cands = spec.neg_indices.len();
    let mut grad = vec![0.0f64; spec.vocab_size];
    if n_cands == 0 {
        // Pure likelihood case: x* - p.
        for (g, &pi) in grad.iter_mut().zip(p) {
            *g = -pi;
        }
        grad[spec.true_index as usize] += 1.0;
        return Ok(grad);
    }
    let weights = regroup_multi_candidate(&spec.neg_indices, spec.alpha);
    let inv_count = 1.0 / n_cands as f64;
    for (neg, alpha_c) in weights {
        let neg = neg as usize;
        let p_neg = p[neg];
        if p_neg >= 1.0 {
            return Err(ObjectiveError::DegenerateCandidate);
        }
        let m_other = 1.0 - alpha_c * p_neg / (1.0 - p_neg);
        let m_neg = 1.0 + alpha_c;
        for (i, (g, &pi)) in grad.iter_mut().zip(p).enumerate() {
            let m = if i == neg { m_neg } else { m_other };
            *g -= inv_count * m * pi;
        }
        grad[spec.true_index as usize] += inv_count;
    }
    Ok(grad)
}

/// Regroups the token-level objective into per-candidate objectives with
/// weight 1/|C| and alpha_c = alpha * |C| each; averaging them reproduces
/// the token-level objective exactly.
pub fn regroup_multi_candidate(candidates: &[u32], alpha: f64) -> Vec<(u32, f64)> {
    let alpha_c = alpha * candidates.len() as f64;
    candidates.iter().map(|&c| (c, alpha_c)).collect()
}

/// Previous-context candidates for the token at 0-based position `pos`:
/// the set {ids[0], .., ids[pos-1]} minus {ids[pos]}, sorted.
pub fn prev_context_candidates(ids: &[u32], pos: usize) -> Vec<u32> {
    assert!(pos < ids.len(), "position {pos} out of range");
    let current = ids[pos];
    let mut set: Vec<u32> = ids[..pos].iter().copied().filter(|&x| x != current).collect();
    set.sort_unstable();
    set.dedup();
    set
}

/// Previous-context candidate sets for a whole block, aligned with the
/// target rows of a teacher-forced forward pass: entry j holds candidates
/// for predicting `block[j + 1]`.
pub fn prev_context_candidate_set(block: &[u32]) -> CandidateSet {
    let per_step = (1..block.len()).map(|pos| prev_context_candidates(block, pos)).collect();
    CandidateSet { per_step }
}

/// Repeat-n candidates over the continuation of a completion. Position t
/// (0-based, t >= `context_boundary`) receives the single candidate {ids[t]}
/// iff some length-n window containing t matches an identical n-gram that
/// ends at or before the window start; otherwise the step's set is empty.
/// Entry j of the result corresponds to position `context_boundary + j`.
pub fn repeat_ngram_candidates(
    ids: &[u32],
    n: usize,
    context_boundary: usize,
) -> Result<CandidateSet, ObjectiveError> {
    let len = ids.len();
    if context_boundary >= len {
        return Err(ObjectiveError::BoundaryOutOfRange { k: context_boundary, len });
    }
    assert!(n >= 1, "n-gram size must be >= 1");
    let mut flagged = vec![false; len];
    if n <= len {
        use std::collections::HashMap;
        // Earliest end position of each n-gram seen so far.
        let mut earliest_end: HashMap<&[u32], usize> = HashMap::new();
        for s in 0..=len - n {
            let window = &ids[s..s + n];
            if let Some(&end) = earliest_end.get(window) {
                if end <= s {
                    for slot in flagged.iter_mut().skip(s).take(n) {
                        *slot = true;
                    }
                }
            }
            earliest_end.entry(window).or_insert(s + n);
        }
    }
    let per_step = (context_boundary..len)
        .map(|pos| if flagged[pos] { vec![ids[pos]] } else { Vec::new() })
        .collect();
    Ok(CandidateSet { per_step })
}

/// Random-subset candidates: each continuation position independently
/// receives {ids[t]} with probability `p_penalize`. Deterministic given the
/// caller-provided generator state.
pub fn random_seq_candidates<R: Rng>(
    ids: &[u32],
    context_boundary: usize,
    p_penalize: f64,
    rng: &mut R,
) -> Result<CandidateSet, ObjectiveError> {
    if context_boundary >= ids.len() {
        return Err(ObjectiveError::BoundaryOutOfRange { k: context_boundary, len: ids.len() });
    }
    assert!((0.0..=1.0).contains(&p_penalize), "p_penalize must be in [0, 1]");
    let per_step = (context_boundary..ids.len())
        .map(|pos| {
            if rng.random::<f64>() < p_penalize {
                vec![ids[pos]]
            } else {
                Vec::new()
            }
        })
        .collect();
    Ok(CandidateSet { per_step })
}

/// Sequence-level loss over a decoded completion: for every continuation
/// position t in [k, len), -sum_c log(1 - p(c | x_<t)), evaluated on logits
/// from a forward pass over the full completion (row t-1 scores position t).
/// The decoded tokens are fixed inputs; no gradient flows through the
/// decoding choices. `candidates` entry j aligns with position k + j.
pub fn sequence_level_loss<T: Real>(
    logits: &Mat<T>,
    context_boundary: usize,
    candidates: &CandidateSet,
) -> Result<(LossValue, Mat<T>), ObjectiveError> {
    let len = logits.rows();
    let k = context_boundary;
    if k == 0 || k >= len {
        return Err(ObjectiveError::BoundaryOutOfRange { k, len });
    }
    if candidates.len() != len - k {
        return Err(ObjectiveError::LengthMismatch(format!(
            "{} candidate steps for continuation of {} positions",
            candidates.len(),
            len - k
        )));
    }
    let mut per_step = Vec::with_capacity(len - k);
    let mut dlogits = Mat::zeros(len, logits.cols());
    for (j, cands) in candidates.per_step.iter().enumerate() {
        let row = k + j - 1; // logits row scoring position k + j
        if cands.is_empty() {
            per_step.push(0.0);
            continue;
        }
        let (loss, grad) = unlikelihood_loss_row(logits.row(row), cands)?;
        per_step.push(loss);
        dlogits.row_mut(row).copy_from_slice(&grad);
    }
    Ok((LossValue::from_steps(per_step), dlogits))
}
