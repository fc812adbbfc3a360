//! Finite-difference verification of the analytic gradients.
//!
//! Two checks: the closed-form softmax-input gradient against central
//! differences of the per-candidate gain (and against the objective's
//! backprop dlogits), and full-model parameter gradients against central
//! differences of the scalar loss.
//!
//! Relative errors use a guarded denominator: per-trial vector errors are
//! normalized by the infinity norm of the analytic gradient, per-parameter
//! errors by `max(|fd|, |analytic|, floor)`. The floor turns the bound into
//! an absolute tolerance for near-zero gradients, which central differences
//! cannot resolve relatively.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::mat::Mat;
use crate::model::{backward, forward, init_parameters, ModelConfig, ModelError, Parameters};
use crate::objectives::{
    closed_form_gradient, mle_loss, prev_context_candidate_set, token_unlikelihood_objective,
    CandidateSet, GradRowSpec,
};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub label: String,
    pub trials: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err <= self.tolerance
    }

    pub fn summary(&self) -> String {
        format!(
            "{}: {} trials, max_rel_err {:.3e} (tol {:.1e}) -> {}",
            self.label,
            self.trials,
            self.max_rel_err,
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

fn softmax_plain(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / z).collect()
}

/// Central finite differences of a scalar function of a logit row.
fn fd_row_gradient(f: impl Fn(&[f64]) -> f64, row: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = row.to_vec();
    let mut grad = vec![0.0; row.len()];
    for (i, g) in grad.iter_mut().enumerate() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let up = f(&probe);
        probe[i] = orig - eps;
        let down = f(&probe);
        probe[i] = orig;
        *g = (up - down) / (2.0 * eps);
    }
    grad
}

/// Verifies the closed-form gradient against central finite differences of
/// the per-step gain `log p(x_t) + alpha * sum_c log(1 - p(c))` and against
/// the token-level objective's backprop dlogits, over random
/// (alpha, logits, true index, candidates) trials.
///
/// `max_candidates = 1` exercises the single-candidate form; larger values
/// exercise the multi-candidate regrouping.
pub fn check_closed_form_gradient(
    vocab: usize,
    trials: usize,
    max_candidates: usize,
    seed: u64,
) -> GradCheckReport {
    assert!(vocab >= 3 && max_candidates >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel = 0.0f64;
    for _ in 0..trials {
        let row: Vec<f64> = (0..vocab).map(|_| rng.random_range(-2.0..2.0)).collect();
        let true_index = rng.random_range(0..vocab as u32);
        let n_cands = rng.random_range(1..=max_candidates.min(vocab - 1));
        let mut cands: Vec<u32> = Vec::with_capacity(n_cands);
        while cands.len() < n_cands {
            let c = rng.random_range(0..vocab as u32);
            if c != true_index && !cands.contains(&c) {
                cands.push(c);
            }
        }
        cands.sort_unstable();
        let alpha = rng.random_range(0.0..2.0);

        let p = softmax_plain(&row);
        let spec =
            GradRowSpec { alpha, true_index, neg_indices: cands.clone(), vocab_size: vocab };
        let closed = closed_form_gradient(&spec, &p).expect("valid spec");

        let fd = fd_row_gradient(
            |r| {
                let p = softmax_plain(r);
                let ul: f64 = cands.iter().map(|&c| (1.0 - p[c as usize]).ln()).sum();
                p[true_index as usize].ln() + alpha * ul
            },
            &row,
            1e-6,
        );

        let logits = Mat::from_vec(1, vocab, row.clone());
        let cand_set = CandidateSet { per_step: vec![cands.clone()] };
        let (_, dlogits) =
            token_unlikelihood_objective(&logits, &[true_index], &cand_set, alpha).expect("valid");

        let scale = closed.iter().cloned().fold(0.0f64, |a, b| a.max(b.abs())).max(1e-12);
        for i in 0..vocab {
            let fd_err = (fd[i] - closed[i]).abs() / scale;
            let bp_err = (dlogits.get(0, i) + closed[i]).abs() / scale;
            max_rel = max_rel.max(fd_err).max(bp_err);
        }
    }
    GradCheckReport {
        label: format!("closed-form gradient V={vocab} max_candidates={max_candidates}"),
        trials,
        max_rel_err: max_rel,
        tolerance: 1e-6,
    }
}

/// Which scalar loss the full-model check differentiates.
#[derive(Debug, Clone, Copy)]
pub enum CheckObjective {
    Mle,
    UlToken { alpha: f64 },
}

impl CheckObjective {
    fn label(&self) -> String {
        match self {
            CheckObjective::Mle => "mle".to_string(),
            CheckObjective::UlToken { alpha } => format!("ul-token(alpha={alpha})"),
        }
    }
}

fn model_loss(
    params: &Parameters<f64>,
    block: &[u32],
    objective: CheckObjective,
) -> Result<(f64, Mat<f64>), ModelError> {
    let inputs = &block[..block.len() - 1];
    let targets = &block[1..];
    let out = forward(params, inputs)?;
    let (loss, dlogits) = match objective {
        CheckObjective::Mle => mle_loss(&out.logits, targets).expect("aligned"),
        CheckObjective::UlToken { alpha } => {
            let cands = prev_context_candidate_set(block);
            token_unlikelihood_objective(&out.logits, targets, &cands, alpha).expect("aligned")
        }
    };
    Ok((loss.total, dlogits))
}

/// Full-model gradient check: central finite differences of the loss with
/// respect to `n_params` sampled parameters, against the backward pass, in
/// f64. Probe step is 1e-5 * (1 + |theta_i|).
pub fn check_model_gradients(
    config: &ModelConfig,
    objective: CheckObjective,
    n_params: usize,
    seq_len: usize,
    seed: u64,
) -> Result<GradCheckReport, ModelError> {
    assert!(seq_len + 1 <= config.max_len, "block must fit max_len");
    let params = init_parameters::<f64>(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block: Vec<u32> =
        (0..seq_len + 1).map(|_| rng.random_range(0..config.vocab_size as u32)).collect();

    let inputs = &block[..block.len() - 1];
    let out = forward(&params, inputs)?;
    let (_, dlogits) = model_loss(&params, &block, objective)?;
    let grads = backward(&params, &out.cache, &dlogits)?;

    let total = params.len();
    let mut max_rel = 0.0f64;
    let mut probe = params.clone();
    for _ in 0..n_params {
        let idx = rng.random_range(0..total);
        let orig = probe.as_flat()[idx];
        let eps = 1e-5 * (1.0 + orig.abs());
        probe.as_flat_mut()[idx] = orig + eps;
        let (up, _) = model_loss(&probe, &block, objective)?;
        probe.as_flat_mut()[idx] = orig - eps;
        let (down, _) = model_loss(&probe, &block, objective)?;
        probe.as_flat_mut()[idx] = orig;
        let fd = (up - down) / (2.0 * eps);
        let an = grads.as_flat()[idx];
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
        max_rel = max_rel.max(rel);
    }
    Ok(GradCheckReport {
        label: format!(
            "model gradients {} ({} layers, d={}, V={})",
            objective.label(),
            config.n_layers,
            config.d_model,
            config.vocab_size
        ),
        trials: n_params,
        max_rel_err: max_rel,
        tolerance: 1e-4,
    })
}
