//! Training-loop behavior: descent on a toy corpus, reduction identities,
//! determinism, checkpoint selection, fine-tuning efficacy, and the
//! completion-evaluation pipeline.

use ullm_core::corpus::{
    build_vocabulary, make_training_sequences, split_text_fractions, CorpusSplit, TokenizeMode,
};
use ullm_core::decoding::{greedy_decode, DecodeStrategy, DecodingConfig};
use ullm_core::metrics::{mean_seq_rep_n, perplexity};
use ullm_core::model::{load_checkpoint, save_checkpoint, ModelConfig, Parameters};
use ullm_core::training::{
    config_hash, continue_token_level, evaluate_completion_suite, finetune_sequence_level,
    select_best_checkpoint, train_token_level, CandidateMode, CheckpointEntry, CheckpointMeta,
    FinetuneConfig, Objective, OptimizerKind, SuiteConfig, TrainConfig, TrainError, UpdateKind,
};

/// Small looping corpus: a cycling phrase with a little variation, split into
/// train/valid/test spans.
fn toy_corpus(block_len: usize) -> (ullm_core::corpus::Vocabulary, CorpusSplit) {
    let mut text = String::new();
    let phrases = [
        "the red fox jumps over the lazy dog .",
        "the red fox runs past the lazy dog .",
        "a small bird sings near the old tree .",
    ];
    for i in 0..260 {
        text.push_str(phrases[i % 3]);
        text.push(' ');
    }
    let vocab = build_vocabulary(&text, TokenizeMode::Word, 1).unwrap();
    let (train_text, valid_text, test_text) =
        split_text_fractions(&text, TokenizeMode::Word, 0.8, 0.1).unwrap();
    let split = CorpusSplit {
        train: make_training_sequences(&train_text, &vocab, block_len).unwrap(),
        valid: make_training_sequences(&valid_text, &vocab, block_len).unwrap(),
        test: make_training_sequences(&test_text, &vocab, block_len).unwrap(),
    };
    (vocab, split)
}

fn toy_model_config(vocab_size: usize, max_len: usize) -> ModelConfig {
    ModelConfig {
        n_layers: 1,
        n_heads: 2,
        d_model: 16,
        d_ffn: 32,
        vocab_size,
        max_len,
        seed: 1234,
    }
}

fn toy_train_config(objective: Objective, alpha: f64, updates: usize, eval_every: usize) -> TrainConfig {
    TrainConfig {
        objective,
        alpha,
        lr: 2e-3,
        optimizer: OptimizerKind::Adam,
        max_updates: updates,
        eval_every,
        batch_size: 4,
        seed: 7,
        grad_clip: 1.0,
    }
}

#[test]
fn mle_validation_ppl_decreases_on_repetitive_toy() {
    let (vocab, split) = toy_corpus(32);
    let config = toy_model_config(vocab.size(), 48);
    let train = toy_train_config(Objective::Mle, 0.0, 100, 5);
    let out = train_token_level::<f32>(&config, &train, &split).unwrap();
    let ppls: Vec<f64> = out.checkpoints.iter().map(|c| c.meta.valid_ppl).collect();
    assert!(ppls.len() >= 20);
    for w in ppls.windows(2) {
        assert!(w[1] < w[0], "validation ppl not decreasing: {ppls:?}");
    }
}

#[test]
fn alpha_zero_ul_training_is_bit_identical_to_mle() {
    let (vocab, split) = toy_corpus(32);
    let config = toy_model_config(vocab.size(), 48);
    let mle = train_token_level::<f32>(&config, &toy_train_config(Objective::Mle, 0.0, 30, 10), &split)
        .unwrap();
    let ul = train_token_level::<f32>(
        &config,
        &toy_train_config(Objective::UlToken, 0.0, 30, 10),
        &split,
    )
    .unwrap();
    assert_eq!(mle.final_params.as_flat(), ul.final_params.as_flat());
    for (a, b) in mle.checkpoints.iter().zip(&ul.checkpoints) {
        assert_eq!(a.params.as_flat(), b.params.as_flat());
        assert_eq!(a.meta.valid_ppl.to_bits(), b.meta.valid_ppl.to_bits());
    }
}

#[test]
fn same_seed_training_is_bit_identical() {
    let (vocab, split) = toy_corpus(32);
    let config = toy_model_config(vocab.size(), 48);
    let train = toy_train_config(Objective::UlToken, 1.0, 25, 25);
    let a = train_token_level::<f32>(&config, &train, &split).unwrap();
    let b = train_token_level::<f32>(&config, &train, &split).unwrap();
    assert_eq!(a.final_params.as_flat(), b.final_params.as_flat());
}

#[test]
fn checkpoint_meta_ppl_matches_recomputation_from_saved_file() {
    let (vocab, split) = toy_corpus(32);
    let config = toy_model_config(vocab.size(), 48);
    let train = toy_train_config(Objective::Mle, 0.0, 20, 10);
    let out = train_token_level::<f32>(&config, &train, &split).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for entry in &out.checkpoints {
        let path = dir.path().join(format!("ckpt_{}.ullm", entry.meta.update_count));
        save_checkpoint(&entry.params, &path).unwrap();
        let loaded: Parameters<f32> = load_checkpoint(&path).unwrap();
        let recomputed = perplexity(&loaded, &split.valid).unwrap();
        let rel = (recomputed - entry.meta.valid_ppl).abs() / entry.meta.valid_ppl;
        assert!(rel <= 1e-6, "meta {} vs recomputed {recomputed}", entry.meta.valid_ppl);
    }
}

fn meta(update: usize, ppl: f64) -> CheckpointEntry<f32> {
    CheckpointEntry {
        meta: CheckpointMeta {
            update_count: update,
            valid_ppl: ppl,
            objective: "mle".into(),
            config_hash: "0".into(),
        },
        params: ullm_core::model::init_parameters(&toy_model_config(8, 8)).unwrap(),
    }
}

#[test]
fn best_checkpoint_selection_rules() {
    let single = vec![meta(1, 30.0)];
    assert_eq!(select_best_checkpoint(&single).unwrap().meta.update_count, 1);

    let series = vec![meta(1, 30.0), meta(2, 25.0), meta(3, 27.0)];
    assert_eq!(select_best_checkpoint(&series).unwrap().meta.update_count, 2);

    let tied = vec![meta(1, 25.0), meta(2, 25.0)];
    assert_eq!(select_best_checkpoint(&tied).unwrap().meta.update_count, 1);

    let empty: Vec<CheckpointEntry<f32>> = Vec::new();
    assert!(matches!(select_best_checkpoint(&empty), Err(TrainError::EmptySeries)));
}

fn toy_finetune_config(mix_prob: f64, updates: usize) -> FinetuneConfig {
    FinetuneConfig {
        mix_prob,
        candidate_mode: CandidateMode::RepeatN { n: 4 },
        prefix_len: 8,
        continuation_len: 16,
        base_objective: Objective::Mle,
        alpha: 1.0,
        lr: 2e-3,
        optimizer: OptimizerKind::Adam,
        max_updates: updates,
        eval_every: updates,
        batch_size: 4,
        seed: 7,
        grad_clip: 1.0,
    }
}

#[test]
fn mix_prob_zero_finetune_is_bit_identical_to_continued_training() {
    let (vocab, split) = toy_corpus(32);
    let config = toy_model_config(vocab.size(), 48);
    let base =
        train_token_level::<f32>(&config, &toy_train_config(Objective::Mle, 0.0, 10, 10), &split)
            .unwrap();

    let ft = toy_finetune_config(0.0, 20);
    let finetuned =
        finetune_sequence_level(&config, &ft, base.final_params.clone(), &split).unwrap();

    let continued_config = TrainConfig {
        objective: Objective::Mle,
        alpha: 1.0,
        lr: ft.lr,
        optimizer: ft.optimizer,
        max_updates: ft.max_updates,
        eval_every: ft.eval_every,
        batch_size: ft.batch_size,
        seed: ft.seed,
        grad_clip: ft.grad_clip,
    };
    let continued =
        continue_token_level(&continued_config, base.final_params.clone(), &split).unwrap();

    assert_eq!(finetuned.final_params.as_flat(), continued.final_params.as_flat());
    assert!(finetuned.log.iter().all(|r| r.kind == UpdateKind::Token));
}

#[test]
fn finetune_z_sequence_is_reproducible() {
    let (vocab, split) = toy_corpus(32);
    let config = toy_model_config(vocab.size(), 48);
    let base =
        train_token_level::<f32>(&config, &toy_train_config(Objective::Mle, 0.0, 10, 10), &split)
            .unwrap();
    let ft = toy_finetune_config(0.5, 30);
    let a = finetune_sequence_level(&config, &ft, base.final_params.clone(), &split).unwrap();
    let b = finetune_sequence_level(&config, &ft, base.final_params.clone(), &split).unwrap();
    let kinds_a: Vec<UpdateKind> = a.log.iter().map(|r| r.kind).collect();
    let kinds_b: Vec<UpdateKind> = b.log.iter().map(|r| r.kind).collect();
    assert_eq!(kinds_a, kinds_b);
    assert!(kinds_a.contains(&UpdateKind::Sequence));
    assert!(kinds_a.contains(&UpdateKind::Token));
    assert_eq!(a.final_params.as_flat(), b.final_params.as_flat());
}

#[test]
fn sequence_updates_never_read_ground_truth_continuations() {
    let (vocab, split) = toy_corpus(32);
    let config = toy_model_config(vocab.size(), 48);
    let base =
        train_token_level::<f32>(&config, &toy_train_config(Objective::Mle, 0.0, 10, 10), &split)
            .unwrap();
    let out =
        finetune_sequence_level(&config, &toy_finetune_config(1.0, 15), base.final_params, &split)
            .unwrap();
    assert_eq!(out.ground_truth_continuation_reads, 0);
}

fn greedy_seq_rep_4(params: &Parameters<f32>, split: &CorpusSplit, k: usize, n: usize) -> f64 {
    let prefixes = ullm_core::corpus::make_prefix_batches(&split.valid, k).unwrap();
    let conts: Vec<Vec<u32>> = prefixes
        .iter()
        .map(|p| greedy_decode(params, &p.ids, n).unwrap().continuation)
        .collect();
    mean_seq_rep_n(conts.iter().map(|c| c.as_slice()), 4).unwrap()
}

#[test]
fn finetuning_halves_greedy_repetition_on_looping_toy() {
    let (vocab, split) = toy_corpus(32);
    let config = toy_model_config(vocab.size(), 48);
    // Enough MLE training to make greedy decoding loop.
    let base = train_token_level::<f32>(
        &config,
        &toy_train_config(Objective::Mle, 0.0, 150, 150),
        &split,
    )
    .unwrap();
    let before = greedy_seq_rep_4(&base.final_params, &split, 8, 16);
    assert!(before > 0.05, "toy model did not loop (seq-rep-4 {before})");

    let ft = toy_finetune_config(0.5, 200);
    let tuned = finetune_sequence_level(&config, &ft, base.final_params, &split).unwrap();
    let after = greedy_seq_rep_4(&tuned.final_params, &split, 8, 16);
    assert!(
        after <= 0.5 * before,
        "seq-rep-4 dropped only from {before} to {after}"
    );
}

#[test]
fn completion_suite_is_deterministic_and_has_human_row() {
    let (vocab, split) = toy_corpus(32);
    let config = toy_model_config(vocab.size(), 64);
    let params = ullm_core::model::init_parameters::<f32>(&config).unwrap();
    let suite = SuiteConfig {
        model_tag: "mle".into(),
        prefix_len: 8,
        continuation_len: 12,
        rep_window: 16,
        seq_rep_ns: vec![2, 4],
    };
    let decoding = vec![
        DecodingConfig { strategy: DecodeStrategy::Greedy, max_new_tokens: 12, seed: 0 },
        DecodingConfig { strategy: DecodeStrategy::Topk { k: 3 }, max_new_tokens: 12, seed: 5 },
    ];
    let a = evaluate_completion_suite(&params, &split.valid, &suite, &decoding).unwrap();
    let b = evaluate_completion_suite(&params, &split.valid, &suite, &decoding).unwrap();
    assert_eq!(a.reports, b.reports);
    assert_eq!(a.human, b.human);
    assert_eq!(a.reports.len(), 2);
    assert_eq!(a.reports[0].search, "greedy");
    assert_eq!(a.reports[1].search, "topk3");
    assert_eq!(a.human.model, "human");
    assert!(a.human.ppl.is_none());
    assert!(a.human.seq_rep_n.contains_key(&4));
    // Teacher-forced metrics are decoding-independent.
    assert_eq!(a.reports[0].ppl, a.reports[1].ppl);
    assert_eq!(a.reports[0].uniq, a.reports[1].uniq);
    // Serialized reports validate against the shipped schema.
    for r in a.reports.iter().chain([&a.human]) {
        let value: serde_json::Value = serde_json::from_str(&r.to_json_string()).unwrap();
        ullm_core::metrics::validate_report_json(&value).unwrap();
    }
}

#[test]
fn config_hash_is_stable_and_sensitive() {
    let a = toy_train_config(Objective::Mle, 0.0, 10, 5);
    let mut b = a.clone();
    assert_eq!(config_hash(&a), config_hash(&b));
    b.lr *= 2.0;
    assert_ne!(config_hash(&a), config_hash(&b));
}

#[test]
fn nan_abort_carries_offending_batch() {
    let (vocab, split) = toy_corpus(32);
    let config = toy_model_config(vocab.size(), 48);
    // An absurd learning rate reliably blows the loss up to NaN.
    let train = TrainConfig {
        objective: Objective::Mle,
        alpha: 0.0,
        lr: 1e8,
        optimizer: OptimizerKind::Sgd,
        max_updates: 50,
        eval_every: 50,
        batch_size: 4,
        seed: 7,
        grad_clip: 1e12,
    };
    match train_token_level::<f32>(&config, &train, &split) {
        Err(TrainError::NanLoss { update, batch }) => {
            assert!(update >= 1);
            assert!(!batch.is_empty());
        }
        other => panic!("expected NaN abort, got {other:?}"),
    }
}
