//! `seqxfer`: pretrain and fine-tune character-aware language models,
//! train and transfer sequence taggers, score and analyze corpora.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{Command, Usage};
use config::{ConfigError, RunConfig};

#[derive(Parser, Debug)]
#[command(
    name = "seqxfer",
    version,
    about = "Cross-lingual transfer for sequence labeling"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Train a bidirectional language model on a plain-text corpus.
    PretrainLm(Flags),
    /// Swap the vocabulary head of --init and train on --corpus (3 epochs by default).
    FinetuneLm(Flags),
    /// Train a BIO named-entity tagger (CRF head by default).
    TrainNer(Flags),
    /// Train a part-of-speech tagger (softmax head by default).
    TrainPos(Flags),
    /// Initialize a tagger from --init without training and report what moved.
    TransferInit(Flags),
    /// Span F1 of --pred (or of model --init) against --gold.
    Evaluate(Flags),
    /// Entity counts of --input; with --gold, also vocabulary and word-tag overlap.
    Analyze(Flags),
    /// Rewrite contiguous raw entity tags of --input as BIO.
    ConvertBio(Flags),
}

#[derive(Args, Debug, Default)]
struct Flags {
    /// key=value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint to start from.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Plain text, one tokenized sentence per line.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Extra plain-text corpora whose characters join the encoder vocabulary.
    #[arg(long = "char-corpus")]
    char_corpus: Vec<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// Word vectors, `word v1 v2 ...` per line.
    #[arg(long)]
    vectors: Option<PathBuf>,
    /// Language model checkpoint used as the contextual provider.
    #[arg(long)]
    lm: Option<PathBuf>,
    #[arg(long)]
    gold: Option<PathBuf>,
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long, value_parser = ["crf", "softmax"])]
    head: Option<String>,
    /// Transfer policy, e.g. `pos,crf=copy,l2=0.01`.
    #[arg(long)]
    policy: Option<String>,
    /// Overlap denominator: reference or source.
    #[arg(long, value_parser = ["reference", "source"])]
    normalization: Option<String>,
    /// Lowercase words before computing overlap.
    #[arg(long)]
    fold_case: bool,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Any config key, e.g. `--set hidden=100`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Flags {
    fn to_config(&self) -> Result<RunConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let flag = |message: String| ConfigError {
            line: None,
            message,
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| flag(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim()).map_err(flag)?;
        }
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let overrides = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("init", path(&self.init)),
            ("corpus", path(&self.corpus)),
            ("train", path(&self.train)),
            ("dev", path(&self.dev)),
            ("test", path(&self.test)),
            ("vectors", path(&self.vectors)),
            ("lm", path(&self.lm)),
            ("gold", path(&self.gold)),
            ("pred", path(&self.pred)),
            ("input", path(&self.input)),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("patience", self.patience.map(|v| v.to_string())),
            ("head", self.head.clone()),
            ("policy", self.policy.clone()),
            ("normalization", self.normalization.clone()),
            ("fold_case", self.fold_case.then(|| "true".to_string())),
            ("out", path(&self.out)),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, &v)
                    .map_err(|m| flag(format!("--{key}: {m}")))?;
            }
        }
        if !self.char_corpus.is_empty() {
            cfg.char_corpus = self.char_corpus.clone();
        }
        Ok(cfg)
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let usage = err
        .chain()
        .any(|e| e.is::<Usage>() || e.is::<ConfigError>());
    if usage {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SEQXFER_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let (command, flags) = match &cli.command {
        Sub::PretrainLm(f) => (Command::PretrainLm, f),
        Sub::FinetuneLm(f) => (Command::FinetuneLm, f),
        Sub::TrainNer(f) => (Command::TrainNer, f),
        Sub::TrainPos(f) => (Command::TrainPos, f),
        Sub::TransferInit(f) => (Command::TransferInit, f),
        Sub::Evaluate(f) => (Command::Evaluate, f),
        Sub::Analyze(f) => (Command::Analyze, f),
        Sub::ConvertBio(f) => (Command::ConvertBio, f),
    };
    let result = flags
        .to_config()
        .map_err(anyhow::Error::from)
        .and_then(|cfg| commands::run(command, &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
