use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::{info, warn};

use seqxfer::bilm::{perplexity, replace_vocab_head, train_lm, BiLm};
use seqxfer::checkpoint::{Checkpoint, Model};
use seqxfer::corpus::{
    build_char_vocab, build_vocab, contiguous_to_bio, corpus_stats, load_word_vectors, read_conll,
    read_plain_sentences, write_conll, Column, LabeledSequence,
};
use seqxfer::eval::{overlap_report, span_f1};
use seqxfer::numerics::param_seed;
use seqxfer::tagger::{predict, train_tagger, Head, LabelScheme, LabelSet, Tagger, TaggerArch};
use seqxfer::transfer::{
    build_shared_char_vocab, char_coverage, transfer_init, TargetSpec, TransferPolicy,
    TransferReport, TransferSource,
};

use crate::config::RunConfig;

/// Bad invocation: missing or conflicting settings. Exits with 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    PretrainLm,
    FinetuneLm,
    TrainNer,
    TrainPos,
    TransferInit,
    Evaluate,
    Analyze,
    ConvertBio,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::PretrainLm => "pretrain-lm",
            Command::FinetuneLm => "finetune-lm",
            Command::TrainNer => "train-ner",
            Command::TrainPos => "train-pos",
            Command::TransferInit => "transfer-init",
            Command::Evaluate => "evaluate",
            Command::Analyze => "analyze",
            Command::ConvertBio => "convert-bio",
        }
    }
}

pub fn run(command: Command, cfg: &RunConfig) -> Result<()> {
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    for (key, path) in cfg.inputs() {
        if !path.exists() {
            anyhow::bail!("{key} file {} does not exist", path.display());
        }
    }
    info!("command={} seed={}", command.name(), cfg.seed);
    match command {
        Command::PretrainLm => pretrain_lm(cfg),
        Command::FinetuneLm => finetune_lm(cfg),
        Command::TrainNer => train(cfg, Head::Crf, LabelScheme::Bio),
        Command::TrainPos => train(cfg, Head::Softmax, LabelScheme::Raw),
        Command::TransferInit => transfer_only(cfg),
        Command::Evaluate => evaluate(cfg),
        Command::Analyze => analyze(cfg),
        Command::ConvertBio => convert_bio(cfg),
    }
}

fn require<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| usage(format!("missing required --{flag}")))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| {
        format!("cannot open {}", path.display())
    })?))
}

fn read_tagged(path: &Path) -> Result<Vec<LabeledSequence>> {
    read_conll(open(path)?, Column::Index(0), Column::Last)
        .with_context(|| path.display().to_string())
}

fn read_plain(path: &Path) -> Result<Vec<Vec<String>>> {
    read_plain_sentences(open(path)?).with_context(|| path.display().to_string())
}

fn load_lm(path: &Path) -> Result<BiLm> {
    match Model::load(path).with_context(|| path.display().to_string())? {
        Model::Lm(m) => Ok(m),
        Model::Tagger(_) => anyhow::bail!(
            "{} holds a tagger, expected a language model",
            path.display()
        ),
    }
}

fn load_tagger(path: &Path) -> Result<Tagger> {
    match Model::load(path).with_context(|| path.display().to_string())? {
        Model::Tagger(t) => Ok(t),
        Model::Lm(_) => anyhow::bail!(
            "{} holds a language model, expected a tagger",
            path.display()
        ),
    }
}

/// Output directory; created when missing.
struct Artifacts<'a> {
    dir: PathBuf,
    cfg: &'a RunConfig,
}

impl<'a> Artifacts<'a> {
    fn new(cfg: &'a RunConfig) -> Result<Self> {
        let dir = require(&cfg.out, "out")?.to_path_buf();
        fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
        Ok(Self { dir, cfg })
    }

    fn optional(cfg: &'a RunConfig) -> Result<Option<Self>> {
        cfg.out.as_ref().map(|_| Self::new(cfg)).transpose()
    }

    /// Refuses to overwrite any input of the run.
    fn path(&self, name: &str) -> Result<PathBuf> {
        let target = self.dir.join(name);
        if let Ok(t) = target.canonicalize() {
            for (key, input) in self.cfg.inputs() {
                if input.canonicalize().is_ok_and(|i| i == t) {
                    return Err(usage(format!(
                        "output {} would overwrite the {key} input",
                        target.display()
                    )));
                }
            }
        }
        Ok(target)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name)?;
        fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
        info!("wrote {}", path.display());
        Ok(path)
    }

    fn checkpoint(&self, ck: &Checkpoint) -> Result<PathBuf> {
        self.write("model.ckpt", &ck.to_bytes()?)
    }

    fn conll(&self, name: &str, data: &[LabeledSequence]) -> Result<PathBuf> {
        let path = self.path(name)?;
        let file =
            File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
        let mut sink = BufWriter::new(file);
        write_conll(&mut sink, data)?;
        sink.flush()?;
        Ok(path)
    }
}

fn lines(items: &[String]) -> String {
    items.iter().map(|l| format!("{l}\n")).collect()
}

fn pretrain_lm(cfg: &RunConfig) -> Result<()> {
    let corpus = read_plain(require(&cfg.corpus, "corpus")?)?;
    let out = Artifacts::new(cfg)?;
    let init = cfg.init.as_deref().map(load_lm).transpose()?;
    let (words, chars, arch) = match &init {
        Some(m) => {
            if !cfg.char_corpus.is_empty() {
                warn!("char_corpus is ignored when resuming: the character vocabulary comes from --init");
            }
            (m.words.clone(), m.chars.clone(), m.config.clone())
        }
        None => {
            let mut texts = vec![corpus.clone()];
            for p in &cfg.char_corpus {
                texts.push(read_plain(p)?);
            }
            let refs: Vec<&[Vec<String>]> = texts.iter().map(Vec::as_slice).collect();
            (
                build_vocab(&corpus, cfg.min_count)?,
                build_shared_char_vocab(&refs)?,
                cfg.lm_arch(),
            )
        }
    };
    info!(
        "lm words={} chars={} sentences={}",
        words.len(),
        chars.len(),
        corpus.len()
    );
    let (model, report) = train_lm(
        &corpus,
        &words,
        &chars,
        &arch,
        &cfg.lm_train(10),
        init.as_ref(),
    )?;
    out.checkpoint(&Checkpoint::from_bilm(&model))?;
    out.write("metrics.txt", lines(&model.metrics).as_bytes())?;
    println!(
        "initial_loss={:.6} final_loss={:.6}",
        report.initial_loss, report.final_loss
    );
    Ok(())
}

fn finetune_lm(cfg: &RunConfig) -> Result<()> {
    let src = load_lm(require(&cfg.init, "init")?)?;
    let corpus = read_plain(require(&cfg.corpus, "corpus")?)?;
    let out = Artifacts::new(cfg)?;
    let words = build_vocab(&corpus, cfg.min_count)?;
    let coverage = char_coverage(&build_char_vocab(&corpus), &src.chars);
    info!(
        "finetune target_words={} char_coverage={coverage:.4}",
        words.len()
    );
    if coverage < 1.0 {
        warn!(
            "{:.2}% of target characters are unknown to the source encoder",
            100.0 * (1.0 - coverage)
        );
    }
    let surgered = replace_vocab_head(&src, words.clone(), param_seed(cfg.seed, "head"))?;
    let before = perplexity(&corpus, &surgered)?;
    let (mut model, report) = train_lm(
        &corpus,
        &words,
        &src.chars,
        &src.config,
        &cfg.lm_train(3),
        Some(&surgered),
    )?;
    let after = perplexity(&corpus, &model)?;
    model.metrics.push(format!(
        "perplexity_before={before:.6} perplexity_after={after:.6}"
    ));
    out.checkpoint(&Checkpoint::from_bilm(&model))?;
    out.write("metrics.txt", lines(&model.metrics).as_bytes())?;
    println!(
        "initial_loss={:.6} final_loss={:.6}",
        report.initial_loss, report.final_loss
    );
    println!("perplexity_before={before:.4} perplexity_after={after:.4}");
    Ok(())
}

struct Built {
    tagger: Tagger,
    report: Option<TransferReport>,
}

/// Creates the tagger to train: fresh, with an attached language model, or
/// transferred from a checkpoint.
fn build_tagger(
    cfg: &RunConfig,
    train: &[LabeledSequence],
    dev: Option<&[LabeledSequence]>,
    default_head: Head,
    scheme: LabelScheme,
) -> Result<Built> {
    if cfg.init.is_some() && cfg.lm.is_some() {
        return Err(usage("use either --init or --lm, not both"));
    }
    let mut all = train.to_vec();
    all.extend(dev.unwrap_or_default().iter().cloned());
    let labels = LabelSet::from_sequences(&all, scheme)?;
    let words = build_vocab(train, cfg.min_count)?;
    let seed = cfg.seed;

    let mut built = match &cfg.init {
        Some(path) => {
            let model = Model::load(path).with_context(|| path.display().to_string())?;
            let (base, source, policy) = match &model {
                Model::Tagger(t) => {
                    let head = cfg.head.unwrap_or(default_head);
                    let same_task = t.arch.head == head && t.labels.scheme() == scheme;
                    let policy = if same_task {
                        TransferPolicy::ner()
                    } else {
                        TransferPolicy::pos()
                    };
                    (t.arch.clone(), TransferSource::Tagger(t), policy)
                }
                Model::Lm(m) => {
                    let base = TaggerArch {
                        lm: Some(m.config.clone()),
                        ..TaggerArch::default()
                    };
                    (base, TransferSource::Lm(m), TransferPolicy::lm())
                }
            };
            let policy = cfg.policy.clone().unwrap_or(policy);
            let spec = TargetSpec {
                arch: cfg.tagger_arch(&base, default_head),
                words,
                labels,
                text_chars: Some(build_char_vocab(train)),
            };
            let (tagger, report) = transfer_init(source, &spec, &policy, seed)
                .with_context(|| format!("transfer from {}", path.display()))?;
            Built {
                tagger,
                report: Some(report),
            }
        }
        None => {
            let lm = cfg.lm.as_deref().map(load_lm).transpose()?;
            let arch = cfg.tagger_arch(&TaggerArch::default(), default_head);
            Built {
                tagger: Tagger::new(arch, words, labels, lm.as_ref(), seed)?,
                report: None,
            }
        }
    };

    if let Some(path) = &cfg.vectors {
        let copied = built
            .report
            .as_ref()
            .is_some_and(|r| r.copied.iter().any(|(n, _)| n == "embed.weight"));
        if copied {
            warn!("--vectors ignored: embeddings were copied from the source model");
        } else {
            let t = &mut built.tagger;
            let vectors = load_word_vectors(
                open(path)?,
                &t.words,
                t.arch.d_word,
                param_seed(seed, "vectors"),
            )
            .with_context(|| path.display().to_string())?;
            t.set_embeddings(vectors.matrix)?;
            t.provenance.push(format!(
                "vectors={} coverage={:.4}",
                path.display(),
                vectors.coverage
            ));
            info!("vectors coverage={:.4}", vectors.coverage);
        }
    }
    Ok(built)
}

fn train(cfg: &RunConfig, default_head: Head, default_scheme: LabelScheme) -> Result<()> {
    let train = read_tagged(require(&cfg.train, "train")?)?;
    let dev = cfg.dev.as_deref().map(read_tagged).transpose()?;
    let test = cfg.test.as_deref().map(read_tagged).transpose()?;
    let out = Artifacts::new(cfg)?;
    let scheme = cfg.scheme.unwrap_or(default_scheme);
    let built = build_tagger(cfg, &train, dev.as_deref(), default_head, scheme)?;
    if let Some(r) = &built.report {
        out.write("transfer_report.txt", r.to_text().as_bytes())?;
    }
    let (tagger, report) = train_tagger(built.tagger, &train, dev.as_deref(), &cfg.tagger_train())?;
    out.checkpoint(&Checkpoint::from_tagger(&tagger))?;
    out.write("metrics.txt", lines(&tagger.metrics).as_bytes())?;
    if let Some(best) = report.best_epoch {
        println!("best_epoch={best} stopped_early={}", report.stopped_early);
    }
    if let Some(test) = test {
        let preds = predict(&test, &tagger)?;
        out.conll("predictions.conll", &preds)?;
        let text = match scheme {
            LabelScheme::Bio => {
                let m = span_f1(&test, &preds).context("scoring test predictions")?;
                out.write("test_metrics.txt", m.to_kv().as_bytes())?;
                format!("{}F1={:.2}\n", m.to_text(), m.micro.f1())
            }
            LabelScheme::Raw => {
                let acc = token_accuracy(&test, &preds);
                out.write(
                    "test_metrics.txt",
                    format!("metric=accuracy type=all value={acc:.2}\n").as_bytes(),
                )?;
                format!("accuracy={acc:.2}\n")
            }
        };
        print!("{text}");
    }
    Ok(())
}

fn token_accuracy(gold: &[LabeledSequence], pred: &[LabeledSequence]) -> f64 {
    let (mut right, mut total) = (0usize, 0usize);
    for (g, p) in gold.iter().zip(pred) {
        total += g.tags.len();
        right += g.tags.iter().zip(&p.tags).filter(|(a, b)| a == b).count();
    }
    if total == 0 {
        0.0
    } else {
        100.0 * right as f64 / total as f64
    }
}

fn transfer_only(cfg: &RunConfig) -> Result<()> {
    require(&cfg.init, "init")?;
    let train = read_tagged(require(&cfg.train, "train")?)?;
    let out = Artifacts::new(cfg)?;
    let built = build_tagger(
        cfg,
        &train,
        None,
        Head::Crf,
        cfg.scheme.unwrap_or(LabelScheme::Bio),
    )?;
    let report = built.report.expect("init is set");
    out.write("transfer_report.txt", report.to_text().as_bytes())?;
    out.checkpoint(&Checkpoint::from_tagger(&built.tagger))?;
    print!("{}", report.to_text());
    Ok(())
}

fn evaluate(cfg: &RunConfig) -> Result<()> {
    let gold_path = cfg
        .gold
        .as_deref()
        .or(cfg.test.as_deref())
        .ok_or_else(|| usage("missing required --gold"))?;
    let gold = read_tagged(gold_path)?;
    let out = Artifacts::optional(cfg)?;
    let pred = match (&cfg.pred, &cfg.init) {
        (Some(p), None) => read_tagged(p)?,
        (None, Some(model)) => {
            let tagger = load_tagger(model)?;
            let preds = predict(&gold, &tagger)?;
            if let Some(out) = &out {
                out.conll("predictions.conll", &preds)?;
            }
            preds
        }
        _ => return Err(usage("evaluate needs exactly one of --pred or --init")),
    };
    let metrics = span_f1(&gold, &pred)?;
    if let Some(out) = &out {
        out.write("eval_metrics.txt", metrics.to_kv().as_bytes())?;
    }
    print!("{}", metrics.to_text());
    println!("F1={:.2}", metrics.micro.f1());
    Ok(())
}

fn analyze(cfg: &RunConfig) -> Result<()> {
    let input = require(&cfg.input, "input")?;
    let source = read_tagged(input)?;
    let out = Artifacts::optional(cfg)?;
    let stats = corpus_stats(&source).with_context(|| input.display().to_string())?;
    print!("{}", stats.to_text());
    let mut kv = stats.to_kv();
    if let Some(gold) = &cfg.gold {
        let reference = read_tagged(gold)?;
        let report = overlap_report(&source, &reference, cfg.overlap())?;
        print!("{}", report.to_text());
        kv.push_str(&report.to_kv());
    }
    if let Some(out) = out {
        out.write("analysis.txt", kv.as_bytes())?;
    }
    Ok(())
}

fn convert_bio(cfg: &RunConfig) -> Result<()> {
    let input = require(&cfg.input, "input")?;
    let data = read_tagged(input)?;
    let out = Artifacts::new(cfg)?;
    let converted = data
        .into_iter()
        .map(|s| {
            let tags = contiguous_to_bio(&s.tags);
            LabeledSequence::new(s.tokens, tags)
        })
        .collect::<seqxfer::Result<Vec<_>>>()?;
    let stem = input
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("converted");
    let path = out.conll(&format!("{stem}.bio.conll"), &converted)?;
    println!("sentences={} out={}", converted.len(), path.display());
    Ok(())
}
