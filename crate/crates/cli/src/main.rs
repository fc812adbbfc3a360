//! `ullm`: train, fine-tune, decode, and evaluate a small causal language
//! model with likelihood and unlikelihood objectives.
//!
//! Exit codes: 0 success; 2 configuration or schema violation; 3 missing
//! file or I/O failure; 4 NaN abort during training; 1 anything else.
//! Errors print as a single machine-parsable stderr line:
//! `error kind=<kind> code=<code> msg="<message>"`.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use ullm_core::corpus::{CorpusError, TokenizeMode};
use ullm_core::decoding::{DecodeError, DecodeStrategy, DecodingConfig};
use ullm_core::metrics::MetricsError;
use ullm_core::model::ModelError;
use ullm_core::objectives::ObjectiveError;
use ullm_core::training::{Objective, TrainError};

use config::ExperimentConfig;

#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration, schema violation, or inconsistent inputs.
    Config(String),
    /// Missing file or other I/O failure.
    Missing(String),
    /// Training aborted on a NaN loss.
    NanAbort(String),
    Other(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Missing(_) => "missing",
            CliError::NanAbort(_) => "nan",
            CliError::Other(_) => "other",
        }
    }

    fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Missing(_) => 3,
            CliError::NanAbort(_) => 4,
            CliError::Other(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Missing(m) | CliError::NanAbort(m) | CliError::Other(m) => m,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        if err.kind() == std::io::ErrorKind::NotFound {
            CliError::Missing(err.to_string())
        } else {
            CliError::Other(err.to_string())
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(err: CorpusError) -> Self {
        match err {
            CorpusError::Io(io) => io.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(err: ModelError) -> Self {
        match err {
            ModelError::Io(io) => io.into(),
            ModelError::BadCheckpoint(m) => CliError::Config(format!("bad checkpoint: {m}")),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(err: MetricsError) -> Self {
        match err {
            MetricsError::Io(io) => io.into(),
            MetricsError::Model(m) => m.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<DecodeError> for CliError {
    fn from(err: DecodeError) -> Self {
        match err {
            DecodeError::Io(io) => io.into(),
            DecodeError::Model(m) => m.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<ObjectiveError> for CliError {
    fn from(err: ObjectiveError) -> Self {
        CliError::Config(err.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(err: TrainError) -> Self {
        match err {
            TrainError::NanLoss { update, .. } => {
                CliError::NanAbort(format!("loss became NaN at update {update}"))
            }
            TrainError::Corpus(c) => c.into(),
            TrainError::Model(m) => m.into(),
            TrainError::Metrics(m) => m.into(),
            TrainError::Decode(d) => d.into(),
            TrainError::Objective(o) => o.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "ullm",
    version,
    about = "Desk-scale language-model lab: likelihood vs unlikelihood training",
    after_help = "Exit codes: 0 ok, 2 config/schema violation, 3 missing file, 4 NaN abort, 1 other."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunDirArgs {
    /// Directory that run directories are created under.
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
    /// Optional tag appended to the config-hash run directory name.
    #[arg(long)]
    run_tag: Option<String>,
}

#[derive(Args)]
struct TrainOverrides {
    /// Override [train].seed / [finetune].seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override max_updates.
    #[arg(long)]
    max_updates: Option<usize>,
    /// Override the learning rate.
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args)]
struct DecodingFlags {
    /// greedy | beam | topk | nucleus
    #[arg(long, default_value = "greedy")]
    strategy: String,
    #[arg(long, default_value_t = 10)]
    beam_size: usize,
    /// n-gram blocking for beam search.
    #[arg(long)]
    block_ngram: Option<usize>,
    /// k for top-k sampling.
    #[arg(long, default_value_t = 50)]
    k: usize,
    /// p for nucleus sampling.
    #[arg(long, default_value_t = 0.9)]
    p: f64,
    #[arg(long, default_value_t = 30)]
    max_new_tokens: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl DecodingFlags {
    fn to_config(&self) -> Result<DecodingConfig, CliError> {
        let strategy = match self.strategy.as_str() {
            "greedy" => DecodeStrategy::Greedy,
            "beam" => DecodeStrategy::Beam {
                beam_size: self.beam_size,
                block_ngram: self.block_ngram,
            },
            "topk" => DecodeStrategy::Topk { k: self.k },
            "nucleus" => DecodeStrategy::Nucleus { p: self.p },
            other => {
                return Err(CliError::Config(format!(
                    "unknown strategy {other:?}; expected greedy|beam|topk|nucleus"
                )))
            }
        };
        Ok(DecodingConfig {
            strategy,
            max_new_tokens: self.max_new_tokens,
            seed: self.seed,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Token-level training (maximum likelihood or unlikelihood).
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override [train].objective (mle | ul-token).
        #[arg(long)]
        objective: Option<String>,
        /// Override [train].alpha.
        #[arg(long)]
        alpha: Option<f64>,
        #[command(flatten)]
        overrides: TrainOverrides,
        #[command(flatten)]
        run: RunDirArgs,
    },
    /// Sequence-level fine-tuning from a base checkpoint.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        base_checkpoint: PathBuf,
        /// Override [finetune].mix_prob.
        #[arg(long)]
        mix_prob: Option<f64>,
        #[command(flatten)]
        overrides: TrainOverrides,
        #[command(flatten)]
        run: RunDirArgs,
    },
    /// Decode continuations from a checkpoint.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// word | char tokenization of the vocabulary.
        #[arg(long, default_value = "word")]
        mode: String,
        /// Literal prefix text to continue.
        #[arg(long)]
        prefix_text: Option<String>,
        /// Text file to cut into prefixes instead of --prefix-text.
        #[arg(long)]
        split_file: Option<PathBuf>,
        /// Block length when cutting --split-file.
        #[arg(long, default_value_t = 256)]
        block_len: usize,
        /// Prefix length when cutting --split-file.
        #[arg(long, default_value_t = 10)]
        prefix_len: usize,
        #[command(flatten)]
        decoding: DecodingFlags,
        /// Completions record file to write.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint: metrics reports, histograms, completions.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// valid | test
        #[arg(long, default_value = "valid")]
        split: String,
        /// Row label; defaults to the checkpoint sidecar's objective tag.
        #[arg(long)]
        model_tag: Option<String>,
        #[command(flatten)]
        run: RunDirArgs,
    },
    /// Verify analytic gradients against finite differences.
    Gradcheck {
        /// Softmax dimension(s) to test.
        #[arg(long = "vocab-size", default_values_t = [5usize, 50])]
        vocab_sizes: Vec<usize>,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Largest candidate-set size for the multi-candidate check.
        #[arg(long, default_value_t = 4)]
        max_candidates: usize,
        /// Also run the whole-model finite-difference check.
        #[arg(long)]
        full_model: bool,
    },
    /// Combine metrics reports into a comparison table (text + CSV).
    Report {
        /// MetricsReport JSON files.
        files: Vec<PathBuf>,
        #[arg(long)]
        out_csv: Option<PathBuf>,
    },
}

fn parse_mode(raw: &str) -> Result<TokenizeMode, CliError> {
    match raw {
        "word" => Ok(TokenizeMode::Word),
        "char" => Ok(TokenizeMode::Char),
        other => Err(CliError::Config(format!("unknown mode {other:?}; expected word|char"))),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, objective, alpha, overrides, run } => {
            let mut experiment = ExperimentConfig::load(&config)?;
            {
                let train = experiment
                    .train
                    .as_mut()
                    .ok_or_else(|| CliError::Config("missing [train] section".into()))?;
                if let Some(seed) = overrides.seed {
                    train.seed = seed;
                }
                if let Some(updates) = overrides.max_updates {
                    train.max_updates = updates;
                    train.eval_every = train.eval_every.min(updates);
                }
                if let Some(lr) = overrides.lr {
                    train.lr = lr;
                }
                if let Some(alpha) = alpha {
                    train.alpha = alpha;
                }
                if let Some(tag) = &objective {
                    train.objective = match tag.as_str() {
                        "mle" => Objective::Mle,
                        "ul-token" => Objective::UlToken,
                        other => {
                            return Err(CliError::Config(format!(
                                "unknown objective {other:?}; expected mle|ul-token"
                            )))
                        }
                    };
                }
            }
            for (flag, set) in [
                ("seed", overrides.seed.map(|v| v.to_string())),
                ("max-updates", overrides.max_updates.map(|v| v.to_string())),
                ("lr", overrides.lr.map(|v| v.to_string())),
                ("alpha", alpha.map(|v| v.to_string())),
                ("objective", objective.clone()),
            ] {
                if let Some(value) = set {
                    experiment.note_override(flag, value);
                }
            }
            commands::cmd_train(experiment, &run.out_dir, run.run_tag.as_deref())
        }
        Command::Finetune { config, base_checkpoint, mix_prob, overrides, run } => {
            let mut experiment = ExperimentConfig::load(&config)?;
            {
                let ft = experiment
                    .finetune
                    .as_mut()
                    .ok_or_else(|| CliError::Config("missing [finetune] section".into()))?;
                if let Some(seed) = overrides.seed {
                    ft.seed = seed;
                }
                if let Some(updates) = overrides.max_updates {
                    ft.max_updates = updates;
                    ft.eval_every = ft.eval_every.min(updates);
                }
                if let Some(lr) = overrides.lr {
                    ft.lr = lr;
                }
                if let Some(p) = mix_prob {
                    ft.mix_prob = p;
                }
            }
            for (flag, set) in [
                ("seed", overrides.seed.map(|v| v.to_string())),
                ("max-updates", overrides.max_updates.map(|v| v.to_string())),
                ("lr", overrides.lr.map(|v| v.to_string())),
                ("mix-prob", mix_prob.map(|v| v.to_string())),
            ] {
                if let Some(value) = set {
                    experiment.note_override(flag, value);
                }
            }
            commands::cmd_finetune(experiment, &base_checkpoint, &run.out_dir, run.run_tag.as_deref())
        }
        Command::Generate {
            checkpoint,
            vocab,
            mode,
            prefix_text,
            split_file,
            block_len,
            prefix_len,
            decoding,
            out,
        } => commands::cmd_generate(commands::GenerateArgs {
            checkpoint,
            vocab,
            mode: parse_mode(&mode)?,
            prefix_text,
            split_file,
            block_len,
            prefix_len,
            decoding: decoding.to_config()?,
            out,
        }),
        Command::Eval { config, checkpoint, split, model_tag, run } => {
            let experiment = ExperimentConfig::load(&config)?;
            commands::cmd_eval(
                experiment,
                &checkpoint,
                &split,
                model_tag.as_deref(),
                &run.out_dir,
                run.run_tag.as_deref(),
            )
        }
        Command::Gradcheck { vocab_sizes, trials, seed, max_candidates, full_model } => {
            commands::cmd_gradcheck(commands::GradcheckArgs {
                vocab_sizes,
                trials,
                seed,
                max_candidates,
                full_model,
            })
        }
        Command::Report { files, out_csv } => commands::cmd_report(&files, out_csv.as_deref()),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        let msg = err.message().replace(['\n', '\t'], " ");
        eprintln!("error kind={} code={} msg={:?}", err.kind(), err.code(), msg);
        std::process::exit(err.code());
    }
}
