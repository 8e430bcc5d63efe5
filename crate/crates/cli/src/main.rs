//! `encoderlab`: command-line driver for the corpus → tokenizer → encoder →
//! evaluation pipeline.
//!
//! Exit status is 0 on success, 1 on data or I/O errors and 2 on usage or
//! configuration errors.

mod commands;
mod manifest;
mod tasks;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Environment variable naming the directory default outputs go to.
pub const OUT_ROOT_ENV: &str = "ENCODERLAB_OUT";

#[derive(Parser, Debug)]
#[command(name = "encoderlab", version, about = "Desk-scale BERT/ALBERT pipeline")]
pub struct Cli {
    /// Run every data-parallel loop sequentially (results are identical).
    #[arg(long, global = true)]
    pub serial: bool,
    /// Root for default output locations.
    #[arg(long, global = true, env = OUT_ROOT_ENV, default_value = "runs")]
    pub out_root: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Corpus preparation.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Subword vocabulary training.
    #[command(subcommand)]
    Vocab(VocabCmd),
    /// Pre-training instance generation.
    #[command(subcommand, name = "pretrain-data")]
    PretrainData(PretrainDataCmd),
    /// Pre-train an encoder on an instance file.
    Pretrain(PretrainArgs),
    /// Fine-tune a pre-trained encoder on a task file.
    Finetune(FinetuneArgs),
    /// Score a task model, or cross-validate fine-tuning from a checkpoint.
    Eval(EvalArgs),
    /// Pairwise model comparison over a score table.
    Compare(CompareArgs),
    /// Run the whole pipeline on the bundled toy corpus.
    Demo(DemoArgs),
}

#[derive(Subcommand, Debug)]
pub enum CorpusCmd {
    /// Normalize and sentence-split raw text files into a corpus file.
    Ingest {
        /// A directory (every `*.txt` inside, sorted) or a single file.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        strip_diacritics: bool,
        #[arg(long)]
        lowercase: bool,
    },
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum Algo {
    Wordpiece,
    Unigram,
}

#[derive(Subcommand, Debug)]
pub enum VocabCmd {
    /// Train a vocabulary on a corpus file.
    Train {
        #[arg(long, value_enum)]
        algo: Algo,
        #[arg(long)]
        size: usize,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
pub enum PretrainDataCmd {
    /// Build masked, paired instances as JSON lines.
    Build {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// `nsp` or `so`.
        #[arg(long, default_value = "nsp")]
        objective: String,
        #[arg(long, default_value_t = 128)]
        max_len: usize,
        /// `literal` or `80-10-10`.
        #[arg(long, default_value = "literal")]
        mask_policy: String,
        #[arg(long, default_value_t = 0.15)]
        mask_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Key=value configuration shared by the training commands.
#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// Flat `key=value` file; command-line values take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum Preset {
    Tiny,
    Demo,
    BertBase,
    AlbertBase,
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    /// Instance file (JSON lines); may also come from the `data` config key.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Vocabulary the instances were built with; fixes `vocab_size`.
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Architecture defaults; individual keys can be overridden.
    #[arg(long, value_enum, default_value = "tiny")]
    pub model: Preset,
    /// Continue from a pre-training checkpoint instead of initializing.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Loss trace CSV (defaults to `<out>.loss.csv`).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Args, Debug, Clone)]
pub struct TaskArgs {
    /// Tab-separated `label<TAB>text[<TAB>text_b]` lines.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// `pair-classification`, `pair-regression` or `single-classification`.
    #[arg(long)]
    pub task_kind: Option<String>,
    #[arg(long)]
    pub num_classes: Option<usize>,
    #[arg(long, default_value = "task")]
    pub task_name: String,
    #[arg(long, default_value_t = 128)]
    pub max_len: usize,
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    /// Pre-training checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub task: TaskArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Train only the task head.
    #[arg(long)]
    pub head_only: bool,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Fine-tuned task model to score on `--data`.
    #[arg(long, conflicts_with_all = ["checkpoint", "protocol"])]
    pub model: Option<PathBuf>,
    /// Pre-training checkpoint to fine-tune per fold under `--protocol`.
    #[arg(long, requires = "protocol")]
    pub checkpoint: Option<PathBuf>,
    /// `stratified:K`, `kfold:K` or `holdout:FRACTION`.
    #[arg(long)]
    pub protocol: Option<String>,
    #[command(flatten)]
    pub task: TaskArgs,
    /// Metric CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Score table CSV (`task,setting,model,metric,value`).
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub threshold: f64,
    /// Pairwise counts CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Published counts to check against (`row,column,wins,equivalents,losses`).
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DemoArgs {
    #[arg(long, default_value_t = 17)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A configuration problem detected by the CLI itself.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<encoderlab::Error>() {
            return if e.is_config() { 2 } else { 1 };
        }
        if let Some(e) = cause.downcast_ref::<encoderlab::pipeline::StageError>() {
            return if e.config { 2 } else { 1 };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
