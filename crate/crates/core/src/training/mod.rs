//! Optimization loops: token-level training (maximum likelihood or token
//! unlikelihood), sequence-level fine-tuning with stochastic update mixing,
//! checkpoint selection, and the completion-evaluation pipeline.
//!
//! Determinism: three independent ChaCha8 streams drive batching, update-kind
//! mixing, and candidate sampling, so a mix probability of zero consumes the
//! batch stream exactly like plain token-level training and reproduces it
//! bit for bit. Training log lines are `update<TAB>kind<TAB>loss<TAB>wall`
//! (wall-clock seconds are informational and excluded from byte-determinism
//! guarantees; checkpoints and reports are byte-stable).

mod optimizer;

pub use optimizer::{clip_global_norm, Optimizer, OptimizerKind};

use std::cell::Cell;
use std::fmt;
use std::time::Instant;

use rand::Rng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{CorpusError, CorpusSplit, TokenSequence};
use crate::decoding::{decode, greedy_decode, CompletionRecord, DecodeError, DecodingConfig};
use crate::metrics::{
    self, mean_seq_rep_n, token_histogram, uniq_count, MetricsError, MetricsReport,
};
use crate::model::{
    backward, forward, init_parameters, GradientBundle, LanguageModel, ModelConfig, ModelError,
    Parameters,
};
use crate::objectives::{
    mle_loss, prev_context_candidate_set, random_seq_candidates, repeat_ngram_candidates,
    sequence_level_loss, token_unlikelihood_objective, ObjectiveError,
};
use crate::real::Real;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("loss became NaN at update {update}")]
    NanLoss { update: usize, batch: Vec<Vec<u32>> },
    #[error("empty checkpoint series")]
    EmptySeries,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// Token-level loss selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    Mle,
    UlToken,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Objective::Mle => write!(f, "mle"),
            Objective::UlToken => write!(f, "ul-token"),
        }
    }
}

fn default_alpha() -> f64 {
    1.0
}

fn default_grad_clip() -> f64 {
    1.0
}

fn default_mix_prob() -> f64 {
    0.5
}

fn default_ft_updates() -> usize {
    1500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub objective: Objective,
    /// Unlikelihood weight for the ul-token objective.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub max_updates: usize,
    pub eval_every: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Global gradient-norm clip.
    #[serde(default = "default_grad_clip")]
    pub grad_clip: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0) {
            return Err(TrainError::InvalidConfig("lr must be positive".into()));
        }
        if self.alpha < 0.0 {
            return Err(TrainError::InvalidConfig("alpha must be >= 0".into()));
        }
        if self.max_updates == 0 || self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("max_updates and batch_size must be >= 1".into()));
        }
        if self.eval_every == 0 || self.eval_every > self.max_updates {
            return Err(TrainError::InvalidConfig(
                "eval_every must be in [1, max_updates]".into(),
            ));
        }
        Ok(())
    }
}

/// How sequence-level negative candidates are constructed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CandidateMode {
    RepeatN { n: usize },
    RandomSeq { p_penalize: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    /// Probability that an update uses the sequence-level loss.
    #[serde(default = "default_mix_prob")]
    pub mix_prob: f64,
    pub candidate_mode: CandidateMode,
    /// Prefix length k for decoded continuations.
    pub prefix_len: usize,
    /// Continuation length N.
    pub continuation_len: usize,
    /// Token-level objective used for the non-sequence updates (the
    /// objective the base model was trained with).
    pub base_objective: Objective,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    #[serde(default = "default_ft_updates")]
    pub max_updates: usize,
    pub eval_every: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default = "default_grad_clip")]
    pub grad_clip: f64,
}

impl FinetuneConfig {
    pub fn validate(&self, model: &ModelConfig) -> Result<(), TrainError> {
        if !(0.0..=1.0).contains(&self.mix_prob) {
            return Err(TrainError::InvalidConfig("mix_prob must be in [0, 1]".into()));
        }
        if self.prefix_len == 0 || self.continuation_len == 0 {
            return Err(TrainError::InvalidConfig("prefix and continuation must be >= 1".into()));
        }
        if self.prefix_len + self.continuation_len > model.max_len {
            return Err(TrainError::InvalidConfig(format!(
                "prefix {} + continuation {} exceeds max_len {}",
                self.prefix_len, self.continuation_len, model.max_len
            )));
        }
        if let CandidateMode::RandomSeq { p_penalize } = self.candidate_mode {
            if !(0.0..=1.0).contains(&p_penalize) {
                return Err(TrainError::InvalidConfig("p_penalize must be in [0, 1]".into()));
            }
        }
        if !(self.lr > 0.0) {
            return Err(TrainError::InvalidConfig("lr must be positive".into()));
        }
        if self.max_updates == 0 || self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("max_updates and batch_size must be >= 1".into()));
        }
        if self.eval_every == 0 || self.eval_every > self.max_updates {
            return Err(TrainError::InvalidConfig(
                "eval_every must be in [1, max_updates]".into(),
            ));
        }
        Ok(())
    }
}

/// Sidecar metadata saved next to each checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub update_count: usize,
    pub valid_ppl: f64,
    pub objective: String,
    pub config_hash: String,
}

#[derive(Debug, Clone)]
pub struct CheckpointEntry<T> {
    pub meta: CheckpointMeta,
    pub params: Parameters<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateKind {
    Token,
    Sequence,
}

impl fmt::Display for UpdateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UpdateKind::Token => write!(f, "token"),
            UpdateKind::Sequence => write!(f, "seq"),
        }
    }
}

/// One training-log line: update, kind, loss, wall-clock seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRecord {
    pub update: usize,
    pub kind: UpdateKind,
    pub loss: f64,
    pub wall_secs: f64,
}

impl TrainLogRecord {
    pub fn to_line(&self) -> String {
        format!("{}\t{}\t{}\t{:.6}", self.update, self.kind, self.loss, self.wall_secs)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput<T> {
    pub checkpoints: Vec<CheckpointEntry<T>>,
    pub final_params: Parameters<T>,
    pub log: Vec<TrainLogRecord>,
    /// Reads of ground-truth continuation tokens during sequence-level
    /// updates; must stay zero (those updates may only see the prefix).
    pub ground_truth_continuation_reads: u64,
}

/// Short stable hash of any serializable config bundle.
pub fn config_hash<S: Serialize>(value: &S) -> String {
    let encoded = serde_json::to_string(value).expect("config serializes");
    let digest = Sha256::digest(encoded.as_bytes());
    let mut hex = String::with_capacity(16);
    for byte in digest.iter().take(8) {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

/// Epoch-shuffled batch index source; ragged tails reshuffle into the next
/// epoch.
struct Batcher {
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl Batcher {
    fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Self { order, cursor: 0, batch_size, rng }
    }

    fn next(&mut self) -> Vec<usize> {
        if self.cursor + self.batch_size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let batch = self.order[self.cursor..self.cursor + self.batch_size].to_vec();
        self.cursor += self.batch_size;
        batch
    }
}

/// Shared token-level stepper used by training and fine-tuning.
struct Trainer<'a, T: Real> {
    params: Parameters<T>,
    opt: Optimizer<T>,
    grad_clip: f64,
    train: &'a [TokenSequence],
    batcher: Batcher,
    objective: Objective,
    alpha: f64,
}

impl<'a, T: Real> Trainer<'a, T> {
    fn token_update(&mut self, update: usize) -> Result<f64, TrainError> {
        let batch = self.batcher.next();
        let config = self.params.config().clone();
        let mut grads = GradientBundle::zeros(&config);
        let mut loss_sum = 0.0f64;
        let mut tokens = 0usize;
        for &idx in &batch {
            let block = &self.train[idx].ids;
            let inputs = &block[..block.len() - 1];
            let targets = &block[1..];
            let out = forward(&self.params, inputs)?;
            let (loss, dlogits) = match self.objective {
                Objective::Mle => mle_loss(&out.logits, targets)?,
                Objective::UlToken => {
                    let cands = prev_context_candidate_set(block);
                    token_unlikelihood_objective(&out.logits, targets, &cands, self.alpha)?
                }
            };
            let seq_grads = backward(&self.params, &out.cache, &dlogits)?;
            grads.accumulate(&seq_grads);
            loss_sum += loss.total;
            tokens += loss.n_tokens;
        }
        let mean_loss = loss_sum / tokens as f64;
        if !mean_loss.is_finite() {
            let dump = batch.iter().map(|&i| self.train[i].ids.clone()).collect();
            return Err(TrainError::NanLoss { update, batch: dump });
        }
        grads.scale(T::from_f64(1.0 / tokens as f64));
        clip_global_norm(&mut grads, self.grad_clip);
        self.opt.step(&mut self.params, &grads);
        Ok(mean_loss)
    }
}

fn eval_checkpoint<T: Real>(
    params: &Parameters<T>,
    valid: &[TokenSequence],
    update: usize,
    objective_tag: &str,
    hash: &str,
) -> Result<CheckpointEntry<T>, TrainError> {
    let valid_ppl = metrics::perplexity(params, valid)?;
    Ok(CheckpointEntry {
        meta: CheckpointMeta {
            update_count: update,
            valid_ppl,
            objective: objective_tag.to_string(),
            config_hash: hash.to_string(),
        },
        params: params.clone(),
    })
}

/// Token-level training from fresh initialization. Deterministic given the
/// seeds in the configs; aborts with the offending batch when the loss goes
/// NaN.
pub fn train_token_level<T: Real>(
    model_config: &ModelConfig,
    config: &TrainConfig,
    corpus: &CorpusSplit,
) -> Result<TrainOutput<T>, TrainError> {
    let params = init_parameters::<T>(model_config)?;
    continue_token_level(config, params, corpus)
}

/// Token-level training continued from existing parameters (the z = 0 path
/// of fine-tuning is exactly this loop).
pub fn continue_token_level<T: Real>(
    config: &TrainConfig,
    params: Parameters<T>,
    corpus: &CorpusSplit,
) -> Result<TrainOutput<T>, TrainError> {
    config.validate()?;
    if corpus.train.len() < config.batch_size {
        return Err(TrainError::InvalidConfig(format!(
            "batch_size {} exceeds {} training sequences",
            config.batch_size,
            corpus.train.len()
        )));
    }
    if corpus.valid.is_empty() {
        return Err(TrainError::InvalidConfig("validation split is empty".into()));
    }
    let n_params = params.len();
    let hash = config_hash(&(params.config(), config));
    let objective_tag = config.objective.to_string();
    let mut trainer = Trainer {
        params,
        opt: Optimizer::new(config.optimizer, config.lr, n_params),
        grad_clip: config.grad_clip,
        train: &corpus.train,
        batcher: Batcher::new(corpus.train.len(), config.batch_size, config.seed),
        objective: config.objective,
        alpha: config.alpha,
    };
    let mut log = Vec::with_capacity(config.max_updates);
    let mut checkpoints = Vec::new();
    let started = Instant::now();
    for update in 1..=config.max_updates {
        let loss = trainer.token_update(update)?;
        log.push(TrainLogRecord {
            update,
            kind: UpdateKind::Token,
            loss,
            wall_secs: started.elapsed().as_secs_f64(),
        });
        if update % config.eval_every == 0 || update == config.max_updates {
            checkpoints.push(eval_checkpoint(
                &trainer.params,
                &corpus.valid,
                update,
                &objective_tag,
                &hash,
            )?);
        }
    }
    Ok(TrainOutput {
        checkpoints,
        final_params: trainer.params,
        log,
        ground_truth_continuation_reads: 0,
    })
}

/// Best validation perplexity wins; ties go to the earliest checkpoint.
pub fn select_best_checkpoint<T>(series: &[CheckpointEntry<T>]) -> Result<&CheckpointEntry<T>, TrainError> {
    let mut best: Option<&CheckpointEntry<T>> = None;
    for entry in series {
        if best.is_none_or(|b| entry.meta.valid_ppl < b.meta.valid_ppl) {
            best = Some(entry);
        }
    }
    best.ok_or(TrainError::EmptySeries)
}

/// Read guard over one training sequence during a sequence-level update:
/// only the prefix may be read, and any access beyond the boundary counts.
struct GuardedSequence<'a> {
    ids: &'a [u32],
    boundary: usize,
    beyond_reads: &'a Cell<u64>,
}

impl<'a> GuardedSequence<'a> {
    fn token(&self, i: usize) -> u32 {
        if i >= self.boundary {
            self.beyond_reads.set(self.beyond_reads.get() + 1);
        }
        self.ids[i]
    }

    fn prefix(&self, start: usize, len: usize) -> Vec<u32> {
        (start..start + len).map(|i| self.token(i)).collect()
    }
}

/// Sequence-level fine-tuning: each update draws z ~ Bernoulli(mix_prob)
/// from a dedicated stream; z = 1 greedily decodes continuations from
/// training prefixes and applies the sequence-level loss, z = 0 runs one
/// token-level update with the base objective. With mix_prob = 0 the run is
/// bit-identical to continued token-level training under the same seed.
pub fn finetune_sequence_level<T: Real>(
    model_config: &ModelConfig,
    config: &FinetuneConfig,
    base_params: Parameters<T>,
    corpus: &CorpusSplit,
) -> Result<TrainOutput<T>, TrainError> {
    config.validate(model_config)?;
    if corpus.train.len() < config.batch_size {
        return Err(TrainError::InvalidConfig(format!(
            "batch_size {} exceeds {} training sequences",
            config.batch_size,
            corpus.train.len()
        )));
    }
    if corpus.valid.is_empty() {
        return Err(TrainError::InvalidConfig("validation split is empty".into()));
    }
    let block_len = corpus.train[0].len();
    if config.prefix_len > block_len {
        return Err(TrainError::InvalidConfig(format!(
            "prefix_len {} exceeds block length {}",
            config.prefix_len, block_len
        )));
    }
    let prefixes_per_seq = block_len / config.prefix_len;
    let hash = config_hash(&(model_config, config));
    let objective_tag = format!("{}+seq", config.base_objective);
    let n_params = base_params.len();

    let mut trainer = Trainer {
        params: base_params,
        opt: Optimizer::new(config.optimizer, config.lr, n_params),
        grad_clip: config.grad_clip,
        train: &corpus.train,
        batcher: Batcher::new(corpus.train.len(), config.batch_size, config.seed),
        objective: config.base_objective,
        alpha: config.alpha,
    };
    let mut mix_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x4d49_5850);
    let mut prefix_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5052_4546);
    let mut cand_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x4341_4e44);
    let beyond_reads = Cell::new(0u64);

    let k = config.prefix_len;
    let n_cont = config.continuation_len;
    let mut log = Vec::with_capacity(config.max_updates);
    let mut checkpoints = Vec::new();
    let started = Instant::now();
    for update in 1..=config.max_updates {
        let use_sequence = mix_rng.random::<f64>() < config.mix_prob;
        let (kind, loss) = if use_sequence {
            let model_cfg = trainer.params.config().clone();
            let mut grads = GradientBundle::zeros(&model_cfg);
            let mut loss_sum = 0.0f64;
            let mut batch_dump: Vec<Vec<u32>> = Vec::new();
            for _ in 0..config.batch_size {
                let seq_idx = prefix_rng.random_range(0..corpus.train.len());
                let slot = prefix_rng.random_range(0..prefixes_per_seq);
                let guard = GuardedSequence {
                    ids: &corpus.train[seq_idx].ids,
                    boundary: slot * k + k,
                    beyond_reads: &beyond_reads,
                };
                let prefix = guard.prefix(slot * k, k);
                let decoded = greedy_decode(&trainer.params, &prefix, n_cont)?;
                let mut completion = prefix;
                completion.extend_from_slice(&decoded.continuation);
                let cands = match config.candidate_mode {
                    CandidateMode::RepeatN { n } => repeat_ngram_candidates(&completion, n, k)?,
                    CandidateMode::RandomSeq { p_penalize } => {
                        random_seq_candidates(&completion, k, p_penalize, &mut cand_rng)?
                    }
                };
                let out = forward(&trainer.params, &completion)?;
                let (loss, dlogits) = sequence_level_loss(&out.logits, k, &cands)?;
                let seq_grads = backward(&trainer.params, &out.cache, &dlogits)?;
                grads.accumulate(&seq_grads);
                loss_sum += loss.total;
                batch_dump.push(completion);
            }
            let tokens = config.batch_size * n_cont;
            let mean_loss = loss_sum / tokens as f64;
            if !mean_loss.is_finite() {
                return Err(TrainError::NanLoss { update, batch: batch_dump });
            }
            grads.scale(T::from_f64(1.0 / tokens as f64));
            clip_global_norm(&mut grads, config.grad_clip);
            trainer.opt.step(&mut trainer.params, &grads);
            (UpdateKind::Sequence, mean_loss)
        } else {
            (UpdateKind::Token, trainer.token_update(update)?)
        };
        log.push(TrainLogRecord {
            update,
            kind,
            loss,
            wall_secs: started.elapsed().as_secs_f64(),
        });
        if update % config.eval_every == 0 || update == config.max_updates {
            checkpoints.push(eval_checkpoint(
                &trainer.params,
                &corpus.valid,
                update,
                &objective_tag,
                &hash,
            )?);
        }
    }
    Ok(TrainOutput {
        checkpoints,
        final_params: trainer.params,
        log,
        ground_truth_continuation_reads: beyond_reads.get(),
    })
}

/// Settings for the completion-evaluation pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub model_tag: String,
    pub prefix_len: usize,
    pub continuation_len: usize,
    /// Context window for rep/wrep.
    pub rep_window: usize,
    /// Which n to report seq-rep for.
    pub seq_rep_ns: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct SuiteOutput {
    /// One report per decoding config, in input order.
    pub reports: Vec<MetricsReport>,
    /// Ground-truth reference row computed from the corpus itself.
    pub human: MetricsReport,
    /// Decoded completions per config, tagged with the strategy string.
    pub completions: Vec<(String, Vec<CompletionRecord>)>,
}

/// Decodes continuations for every prefix of the split under each decoding
/// config and assembles per-config metric reports plus the human-reference
/// row. Stochastic configs derive a per-prefix generator seed from
/// `config.seed + prefix index`.
pub fn evaluate_completion_suite<T: Real, M: LanguageModel<T>>(
    model: &M,
    sequences: &[TokenSequence],
    suite: &SuiteConfig,
    decoding: &[DecodingConfig],
) -> Result<SuiteOutput, TrainError> {
    if sequences.is_empty() {
        return Err(TrainError::InvalidConfig("no evaluation sequences".into()));
    }
    let k = suite.prefix_len;
    let n_cont = suite.continuation_len;
    if k == 0 || n_cont == 0 {
        return Err(TrainError::InvalidConfig("prefix and continuation must be >= 1".into()));
    }
    let prefixes = crate::corpus::make_prefix_batches(sequences, k)?;
    let split_eval = metrics::evaluate_split(model, sequences, suite.rep_window)?;

    let mut reports = Vec::with_capacity(decoding.len());
    let mut completions = Vec::with_capacity(decoding.len());
    for config in decoding {
        let tag = config.strategy.to_string();
        let mut records = Vec::with_capacity(prefixes.len());
        for (i, prefix) in prefixes.iter().enumerate() {
            let mut per_prefix = config.clone();
            per_prefix.max_new_tokens = n_cont;
            per_prefix.seed = config.seed.wrapping_add(i as u64);
            let out = decode(model, &prefix.ids, &per_prefix)?;
            records.push(CompletionRecord {
                prefix: prefix.ids.clone(),
                continuation: out.continuation,
                strategy: tag.clone(),
                score: out.score,
            });
        }
        let conts: Vec<&[u32]> = records.iter().map(|r| r.continuation.as_slice()).collect();
        let seq_rep_n = suite
            .seq_rep_ns
            .iter()
            .filter_map(|&n| {
                mean_seq_rep_n(conts.iter().copied(), n as usize).map(|v| (n, v))
            })
            .collect();
        let all_tokens: Vec<u32> =
            records.iter().flat_map(|r| r.continuation.iter().copied()).collect();
        reports.push(MetricsReport {
            model: suite.model_tag.clone(),
            search: tag.clone(),
            seq_rep_n,
            rep_l: [(suite.rep_window as u32, split_eval.rep_l)].into_iter().collect(),
            wrep_l: [(suite.rep_window as u32, split_eval.wrep_l)].into_iter().collect(),
            uniq: Some(split_eval.uniq),
            uniq_seq: uniq_count(&all_tokens),
            ppl: Some(split_eval.ppl),
            acc: Some(split_eval.acc),
            token_histogram: token_histogram(&all_tokens),
        });
        completions.push((tag, records));
    }

    let human = human_reference_report(sequences, suite)?;
    Ok(SuiteOutput { reports, human, completions })
}

/// Reference row computed from ground-truth continuations: for each prefix
/// slot whose following N tokens fit inside the sequence, the true
/// continuation stands in for a decoded one; "predictions" are the true next
/// tokens themselves, so rep measures the corpus's own repetition rate.
fn human_reference_report(
    sequences: &[TokenSequence],
    suite: &SuiteConfig,
) -> Result<MetricsReport, TrainError> {
    let k = suite.prefix_len;
    let n_cont = suite.continuation_len;
    let mut gt_continuations: Vec<&[u32]> = Vec::new();
    for seq in sequences {
        let slots = seq.len() / k;
        for slot in 0..slots {
            let start = (slot + 1) * k;
            if start + n_cont <= seq.len() {
                gt_continuations.push(&seq.ids[start..start + n_cont]);
            }
        }
    }
    let mut rep_sum = 0.0f64;
    let mut steps = 0usize;
    let mut next_tokens: Vec<u32> = Vec::new();
    for seq in sequences {
        let preds: Vec<u32> = seq.ids[1..].to_vec();
        rep_sum +=
            metrics::rep_l_from_predictions(&seq.ids, &preds, suite.rep_window) * preds.len() as f64;
        steps += preds.len();
        next_tokens.extend_from_slice(&preds);
    }
    let seq_rep_n = suite
        .seq_rep_ns
        .iter()
        .filter_map(|&n| mean_seq_rep_n(gt_continuations.iter().copied(), n as usize).map(|v| (n, v)))
        .collect();
    let all_tokens: Vec<u32> =
        gt_continuations.iter().flat_map(|c| c.iter().copied()).collect();
    Ok(MetricsReport {
        model: "human".into(),
        search: "-".into(),
        seq_rep_n,
        rep_l: [(suite.rep_window as u32, rep_sum / steps as f64)].into_iter().collect(),
        wrep_l: Default::default(),
        uniq: Some(uniq_count(&next_tokens)),
        uniq_seq: uniq_count(&all_tokens),
        ppl: None,
        acc: None,
        token_histogram: token_histogram(&all_tokens),
    })
}
