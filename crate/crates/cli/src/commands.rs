//! Subcommand implementations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ullm_core::corpus::{
    build_vocabulary, make_training_sequences, CorpusSplit, TokenizeMode, Vocabulary,
};
use ullm_core::decoding::{decode, CompletionRecord, DecodingConfig};
use ullm_core::gradcheck::{check_closed_form_gradient, check_model_gradients, CheckObjective};
use ullm_core::metrics::{export_histogram_csv, validate_report_json, MetricsReport};
use ullm_core::model::{load_checkpoint, save_checkpoint, ModelConfig, Parameters};
use ullm_core::training::{
    evaluate_completion_suite, finetune_sequence_level, select_best_checkpoint, train_token_level,
    CheckpointMeta, SuiteConfig, TrainError, TrainOutput,
};

use crate::config::{run_dir, EvalSection, ExperimentConfig};
use crate::CliError;

pub fn load_split_texts(config: &ExperimentConfig) -> Result<(String, String, String), CliError> {
    let read = |path: &Path| -> Result<String, CliError> {
        std::fs::read_to_string(path)
            .map_err(|e| CliError::Missing(format!("{}: {e}", path.display())))
    };
    Ok((
        read(&config.corpus.train)?,
        read(&config.corpus.valid)?,
        read(&config.corpus.test)?,
    ))
}

pub fn load_corpus(config: &ExperimentConfig) -> Result<(Vocabulary, CorpusSplit), CliError> {
    let (train_text, valid_text, test_text) = load_split_texts(config)?;
    let vocab = match &config.corpus.vocab {
        Some(path) => Vocabulary::load(path, config.corpus.mode)
            .map_err(|e| CliError::Config(format!("vocab file: {e}")))?,
        None => build_vocabulary(&train_text, config.corpus.mode, config.corpus.min_count)
            .map_err(|e| CliError::Config(e.to_string()))?,
    };
    let block_len = config.corpus.block_len;
    let split = CorpusSplit {
        train: make_training_sequences(&train_text, &vocab, block_len)?,
        valid: make_training_sequences(&valid_text, &vocab, block_len)?,
        test: make_training_sequences(&test_text, &vocab, block_len)?,
    };
    Ok((vocab, split))
}

fn check_block_fits(model: &ModelConfig, block_len: usize) -> Result<(), CliError> {
    if block_len.saturating_sub(1) > model.max_len {
        return Err(CliError::Config(format!(
            "block_len {} needs max_len >= {}, model has {}",
            block_len,
            block_len - 1,
            model.max_len
        )));
    }
    Ok(())
}

fn prepare_run_dir(
    config: &ExperimentConfig,
    out_dir: &Path,
    run_tag: Option<&str>,
) -> Result<PathBuf, CliError> {
    let dir = run_dir(out_dir, &config.result_hash(), run_tag);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("effective_config.toml"), config.echo_toml())?;
    Ok(dir)
}

fn meta_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("meta.json")
}

fn write_checkpoints(
    dir: &Path,
    output: &TrainOutput<f32>,
) -> Result<(PathBuf, CheckpointMeta), CliError> {
    for entry in &output.checkpoints {
        let path = dir.join(format!("ckpt_{:06}.ullm", entry.meta.update_count));
        save_checkpoint(&entry.params, &path)?;
        std::fs::write(
            meta_path(&path),
            serde_json::to_string_pretty(&entry.meta).expect("meta serializes"),
        )?;
    }
    let best = select_best_checkpoint(&output.checkpoints)?;
    let best_path = dir.join("best.ullm");
    save_checkpoint(&best.params, &best_path)?;
    std::fs::write(
        meta_path(&best_path),
        serde_json::to_string_pretty(&best.meta).expect("meta serializes"),
    )?;

    let mut log = String::new();
    for record in &output.log {
        log.push_str(&record.to_line());
        log.push('\n');
    }
    std::fs::write(dir.join("train.log"), log)?;
    Ok((best_path, best.meta.clone()))
}

fn handle_nan(dir: &Path, err: TrainError) -> CliError {
    if let TrainError::NanLoss { update, batch } = &err {
        let mut dump = format!("loss became NaN at update {update}\n");
        for (i, seq) in batch.iter().enumerate() {
            let ids: Vec<String> = seq.iter().map(|t| t.to_string()).collect();
            let _ = writeln!(dump, "batch[{i}]: {}", ids.join(" "));
        }
        let _ = std::fs::write(dir.join("nan_dump.txt"), dump);
        return CliError::NanAbort(format!(
            "loss became NaN at update {update}; batch dumped to {}",
            dir.join("nan_dump.txt").display()
        ));
    }
    err.into()
}

pub fn cmd_train(
    config: ExperimentConfig,
    out_dir: &Path,
    run_tag: Option<&str>,
) -> Result<(), CliError> {
    let train_config = config.train_section()?.clone();
    let (vocab, split) = load_corpus(&config)?;
    let model_config = config.model.resolve(vocab.size())?;
    check_block_fits(&model_config, config.corpus.block_len)?;

    let dir = prepare_run_dir(&config, out_dir, run_tag)?;
    vocab.save(&dir.join("vocab.txt"))?;

    let output = train_token_level::<f32>(&model_config, &train_config, &split)
        .map_err(|e| handle_nan(&dir, e))?;
    let (best_path, best_meta) = write_checkpoints(&dir, &output)?;
    println!(
        "trained {} updates ({}); best valid ppl {:.4} at update {}; outputs in {}",
        train_config.max_updates,
        best_meta.objective,
        best_meta.valid_ppl,
        best_meta.update_count,
        dir.display()
    );
    let _ = best_path;
    Ok(())
}

pub fn cmd_finetune(
    config: ExperimentConfig,
    base_checkpoint: &Path,
    out_dir: &Path,
    run_tag: Option<&str>,
) -> Result<(), CliError> {
    let ft_config = config.finetune_section()?.clone();
    let (vocab, split) = load_corpus(&config)?;
    let model_config = config.model.resolve(vocab.size())?;
    check_block_fits(&model_config, config.corpus.block_len)?;

    let base: Parameters<f32> = load_checkpoint(base_checkpoint)?;
    if base.config() != &model_config {
        return Err(CliError::Config(format!(
            "checkpoint config {:?} does not match experiment model config {:?}",
            base.config(),
            model_config
        )));
    }

    let dir = prepare_run_dir(&config, out_dir, run_tag)?;
    vocab.save(&dir.join("vocab.txt"))?;

    let output = finetune_sequence_level(&model_config, &ft_config, base, &split)
        .map_err(|e| handle_nan(&dir, e))?;
    let (_, best_meta) = write_checkpoints(&dir, &output)?;
    println!(
        "fine-tuned {} updates ({}); best valid ppl {:.4} at update {}; outputs in {}",
        ft_config.max_updates,
        best_meta.objective,
        best_meta.valid_ppl,
        best_meta.update_count,
        dir.display()
    );
    Ok(())
}

pub struct GenerateArgs {
    pub checkpoint: PathBuf,
    pub vocab: PathBuf,
    pub mode: TokenizeMode,
    pub prefix_text: Option<String>,
    pub split_file: Option<PathBuf>,
    pub block_len: usize,
    pub prefix_len: usize,
    pub decoding: DecodingConfig,
    pub out: Option<PathBuf>,
}

pub fn cmd_generate(args: GenerateArgs) -> Result<(), CliError> {
    let vocab = Vocabulary::load(&args.vocab, args.mode)
        .map_err(|e| CliError::Config(format!("vocab file: {e}")))?;
    let params: Parameters<f32> = load_checkpoint(&args.checkpoint)?;
    if params.config().vocab_size != vocab.size() {
        return Err(CliError::Config(format!(
            "checkpoint vocab_size {} does not match vocabulary size {}",
            params.config().vocab_size,
            vocab.size()
        )));
    }

    let prefixes: Vec<Vec<u32>> = match (&args.prefix_text, &args.split_file) {
        (Some(text), None) => {
            let ids = vocab.encode(text);
            if ids.is_empty() {
                return Err(CliError::Config("prefix text tokenizes to nothing".into()));
            }
            vec![ids]
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Missing(format!("{}: {e}", path.display())))?;
            let seqs = make_training_sequences(&text, &vocab, args.block_len)?;
            ullm_core::corpus::make_prefix_batches(&seqs, args.prefix_len)?
                .into_iter()
                .map(|p| p.ids)
                .collect()
        }
        _ => {
            return Err(CliError::Config(
                "provide exactly one of --prefix-text or --split-file".into(),
            ))
        }
    };

    let tag = args.decoding.strategy.to_string();
    let mut records = Vec::with_capacity(prefixes.len());
    for (i, prefix) in prefixes.iter().enumerate() {
        let mut per_prefix = args.decoding.clone();
        per_prefix.seed = args.decoding.seed.wrapping_add(i as u64);
        let out = decode(&params, prefix, &per_prefix)?;
        println!(
            "[{i}] {} | score {:.4}\n  {} ||| {}",
            tag,
            out.score,
            vocab.decode(prefix),
            vocab.decode(&out.continuation)
        );
        records.push(CompletionRecord {
            prefix: prefix.clone(),
            continuation: out.continuation,
            strategy: tag.clone(),
            score: out.score,
        });
    }
    if let Some(out) = &args.out {
        ullm_core::decoding::write_completions(out, &records)?;
        println!("wrote {} completions to {}", records.len(), out.display());
    }
    Ok(())
}

fn model_tag_for(checkpoint: &Path, explicit: Option<&str>) -> String {
    if let Some(tag) = explicit {
        return tag.to_string();
    }
    let sidecar = meta_path(checkpoint);
    if let Ok(raw) = std::fs::read_to_string(&sidecar) {
        if let Ok(meta) = serde_json::from_str::<CheckpointMeta>(&raw) {
            return meta.objective;
        }
    }
    "model".to_string()
}

pub fn cmd_eval(
    config: ExperimentConfig,
    checkpoint: &Path,
    split_name: &str,
    model_tag: Option<&str>,
    out_dir: &Path,
    run_tag: Option<&str>,
) -> Result<(), CliError> {
    let eval: EvalSection = config.eval_section()?.clone();
    let (vocab, split) = load_corpus(&config)?;
    let model_config = config.model.resolve(vocab.size())?;
    check_block_fits(&model_config, config.corpus.block_len)?;
    if eval.prefix_len + eval.continuation_len > model_config.max_len {
        return Err(CliError::Config(format!(
            "prefix {} + continuation {} exceeds max_len {}",
            eval.prefix_len, eval.continuation_len, model_config.max_len
        )));
    }

    let params: Parameters<f32> = load_checkpoint(checkpoint)?;
    if params.config() != &model_config {
        return Err(CliError::Config(
            "checkpoint config does not match experiment model config".into(),
        ));
    }

    let sequences = match split_name {
        "valid" => &split.valid,
        "test" => &split.test,
        other => {
            return Err(CliError::Config(format!(
                "unknown split {other:?}; expected valid or test"
            )))
        }
    };

    let suite = SuiteConfig {
        model_tag: model_tag_for(checkpoint, model_tag),
        prefix_len: eval.prefix_len,
        continuation_len: eval.continuation_len,
        rep_window: eval.rep_window,
        seq_rep_ns: eval.seq_rep_ns.clone(),
    };
    let output = evaluate_completion_suite(&params, sequences, &suite, &eval.decoding)?;

    let dir = prepare_run_dir(&config, out_dir, run_tag)?;
    for (report, (tag, records)) in output.reports.iter().zip(&output.completions) {
        let json = report.to_json_string();
        let value: serde_json::Value = serde_json::from_str(&json).expect("report JSON");
        validate_report_json(&value).map_err(|e| CliError::Config(e.to_string()))?;
        std::fs::write(dir.join(format!("report_{tag}.json")), &json)?;
        export_histogram_csv(
            &report.token_histogram,
            &vocab,
            &dir.join(format!("histogram_{tag}.csv")),
        )?;
        ullm_core::decoding::write_completions(
            &dir.join(format!("completions_{tag}.txt")),
            records,
        )?;
    }
    let human_json = output.human.to_json_string();
    std::fs::write(dir.join("report_human.json"), &human_json)?;
    export_histogram_csv(
        &output.human.token_histogram,
        &vocab,
        &dir.join("histogram_human.csv"),
    )?;

    let mut all = output.reports.clone();
    all.push(output.human.clone());
    println!("{}", render_table(&all));
    println!("reports in {}", dir.display());
    Ok(())
}

pub struct GradcheckArgs {
    pub vocab_sizes: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub max_candidates: usize,
    pub full_model: bool,
}

pub fn cmd_gradcheck(args: GradcheckArgs) -> Result<(), CliError> {
    let mut all_passed = true;
    let mut print = |report: &ullm_core::gradcheck::GradCheckReport| {
        let verdict = if report.passed() { "PASS" } else { "FAIL" };
        println!(
            "{verdict} max_rel_err {:.3e} < {:.0e} ({}, {} trials)",
            report.max_rel_err, report.tolerance, report.label, report.trials
        );
        all_passed &= report.passed();
    };
    for &vocab in &args.vocab_sizes {
        print(&check_closed_form_gradient(vocab, args.trials, 1, args.seed));
        if args.max_candidates > 1 {
            print(&check_closed_form_gradient(vocab, args.trials, args.max_candidates, args.seed ^ 1));
        }
    }
    if args.full_model {
        let config = ModelConfig {
            n_layers: 2,
            n_heads: 4,
            d_model: 16,
            d_ffn: 32,
            vocab_size: 11,
            max_len: 16,
            seed: 11,
        };
        print(&check_model_gradients(&config, CheckObjective::Mle, 100, 10, args.seed)?);
        print(&check_model_gradients(
            &config,
            CheckObjective::UlToken { alpha: 1.0 },
            100,
            10,
            args.seed,
        )?);
    }
    if all_passed {
        Ok(())
    } else {
        Err(CliError::Other("gradient check failed".into()))
    }
}

fn fmt_opt(value: Option<f64>, decimals: usize) -> String {
    match value {
        Some(v) => format!("{v:.decimals$}"),
        None => "-".to_string(),
    }
}

fn fmt_count(value: Option<u64>) -> String {
    match value {
        Some(v) => v.to_string(),
        None => "-".to_string(),
    }
}

/// Row extraction mirroring the comparison-table layout:
/// model, search, seq-rep-4, uniq-seq, ppl, acc, rep, wrep, uniq.
fn table_row(report: &MetricsReport) -> Vec<String> {
    let first = |m: &std::collections::BTreeMap<u32, f64>| m.iter().next().map(|(_, &v)| v);
    vec![
        report.model.clone(),
        report.search.clone(),
        fmt_opt(report.seq_rep_n.get(&4).copied(), 3),
        report.uniq_seq.to_string(),
        fmt_opt(report.ppl, 2),
        fmt_opt(report.acc, 3),
        fmt_opt(first(&report.rep_l), 3),
        fmt_opt(first(&report.wrep_l), 3),
        fmt_count(report.uniq),
    ]
}

pub const TABLE_HEADER: [&str; 9] =
    ["model", "search", "seq-rep-4", "uniq-seq", "ppl", "acc", "rep", "wrep", "uniq"];

pub fn render_table(reports: &[MetricsReport]) -> String {
    let mut rows: Vec<Vec<String>> =
        vec![TABLE_HEADER.iter().map(|s| s.to_string()).collect()];
    rows.extend(reports.iter().map(table_row));
    let widths: Vec<usize> = (0..TABLE_HEADER.len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let line: Vec<String> =
            row.iter().zip(&widths).map(|(cell, w)| format!("{cell:>w$}")).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

pub fn cmd_report(files: &[PathBuf], out_csv: Option<&Path>) -> Result<(), CliError> {
    if files.is_empty() {
        return Err(CliError::Config("no report files given".into()));
    }
    let mut reports = Vec::with_capacity(files.len());
    for path in files {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| CliError::Missing(format!("{}: {e}", path.display())))?;
        let report = MetricsReport::from_json_str(&raw)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        reports.push(report);
    }
    print!("{}", render_table(&reports));
    if let Some(csv_path) = out_csv {
        let mut csv = TABLE_HEADER.join(",");
        csv.push('\n');
        for report in &reports {
            csv.push_str(&table_row(report).join(","));
            csv.push('\n');
        }
        std::fs::write(csv_path, csv)?;
        println!("wrote {}", csv_path.display());
    }
    Ok(())
}
