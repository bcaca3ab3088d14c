//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Data-conditional checks read corpora from the directory named by
//! `SEQXFER_DATA` and are reported as skipped when it is unset.

#[path = "acceptance/synth.rs"]
mod synth;

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;
use seqxfer::bilm::{
    corpus_loss, perplexity, replace_vocab_head, train_lm, BiLm, BiLmConfig, LmTrainConfig,
};
use seqxfer::checkpoint::Checkpoint;
use seqxfer::corpus::{
    build_char_vocab, build_vocab, contiguous_to_bio, entity_type, read_conll, Column,
    LabeledSequence, LmBatch,
};
use seqxfer::encoder::{char_ids, CharEncoderConfig, CharEncoderParams};
use seqxfer::eval::{
    annotation_quality, span_f1, vocab_overlap, word_tag_overlap, Normalization, OverlapOptions,
    SpanMetrics,
};
use seqxfer::numerics::{
    finite_difference_check, seeded_init, GradCheckReport, InitScheme, ParamStore, Tensor,
};
use seqxfer::probe;
use seqxfer::tagger::{
    crf_log_partition, crf_nll, predict, train_tagger, viterbi_decode, Head, LabelScheme, LabelSet,
    Tagger, TaggerArch, TaggerTrainConfig,
};
use seqxfer::transfer::{
    build_shared_char_vocab, transfer_init, TargetSpec, TransferPolicy, TransferSource,
};
use synth::{rng, Lang, Lexicon};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn run(id: usize, name: &str, budget: Duration, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let took = start.elapsed();
    let (ok, detail) = match outcome {
        Ok(d) if took <= budget => (true, d),
        Ok(d) => (
            false,
            format!("{d}; over the {:.0}s budget", budget.as_secs_f64()),
        ),
        Err(d) => (false, d),
    };
    println!(
        "{} {id:>2} {name}: {detail} [{:.1}s]",
        if ok { "PASS" } else { "FAIL" },
        took.as_secs_f64()
    );
    ok
}

// ---------------------------------------------------------------- 1

fn oracle_score(e: &Tensor, t: &Tensor, path: &[usize]) -> f64 {
    let l = e.cols();
    let mut s = t.at(l, path[0]) + e.at(0, path[0]);
    for k in 1..path.len() {
        s = s + t.at(path[k - 1], path[k]) + e.at(k, path[k]);
    }
    s + t.at(path[path.len() - 1], l + 1)
}

fn all_paths(n: usize, l: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|p| (0..l).map(move |y| [p.clone(), vec![y]].concat()))
            .collect();
    }
    out
}

fn crf_oracle() -> Check {
    let mut r = rng(11);
    let (mut worst, mut mismatches, mut tied) = (0.0f64, 0usize, 0usize);
    let instances = 600;
    for inst in 0..instances {
        let n = r.gen_range(1..=5);
        let l = r.gen_range(1..=4);
        // Every third instance uses small integers so that exact ties occur.
        let integer = inst % 3 == 0;
        let mut draw = |count: usize| -> Vec<f64> {
            (0..count)
                .map(|_| {
                    if integer {
                        r.gen_range(-1..=1) as f64
                    } else {
                        r.gen_range(-3.0..3.0)
                    }
                })
                .collect()
        };
        let e = Tensor::new(vec![n, l], draw(n * l)).unwrap();
        let t = Tensor::new(vec![l + 2, l + 2], draw((l + 2) * (l + 2))).unwrap();

        let paths = all_paths(n, l);
        let scores: Vec<f64> = paths.iter().map(|p| oracle_score(&e, &t, p)).collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        // Lowest label at each backtrack step: among optimal paths, the
        // smallest when compared from the last position backwards.
        let mut best: Vec<&Vec<usize>> = paths
            .iter()
            .zip(&scores)
            .filter(|(_, &s)| s == max)
            .map(|(p, _)| p)
            .collect();
        if best.len() > 1 {
            tied += 1;
        }
        best.sort_by(|a, b| a.iter().rev().cmp(b.iter().rev()));

        let got_z = crf_log_partition(&e, &t).map_err(e2s)?;
        worst = worst.max((got_z - log_z).abs());
        if viterbi_decode(&e, &t).map_err(e2s)? != *best[0] {
            mismatches += 1;
        }
    }
    let flat = viterbi_decode(&Tensor::zeros(&[4, 3]), &Tensor::zeros(&[5, 5])).map_err(e2s)?;
    ensure(flat == vec![0; 4], || {
        format!("all-equal scores decoded to {flat:?}")
    })?;
    let detail = format!(
        "{instances} instances ({tied} with tied optima), max |logZ error| {worst:.2e}, {mismatches} path mismatches"
    );
    ensure(worst <= 1e-9 && mismatches == 0, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 2

fn tiny_encoder() -> CharEncoderConfig {
    CharEncoderConfig {
        char_dim: 4,
        filter_widths: vec![1, 2, 3],
        filter_counts: vec![2, 3, 2],
        highway_layers: 2,
        output_dim: 5,
        max_word_len: 8,
    }
}

fn gradient_suite() -> Check {
    let eps = 1e-5;
    let all = usize::MAX;
    let mut reports: Vec<(&str, GradCheckReport)> = Vec::new();

    let hw = probe::highway_params(3, 6, 1).map_err(e2s)?;
    reports.push((
        "highway",
        finite_difference_check(&hw, eps, all, 0, probe::highway_loss).map_err(e2s)?,
    ));

    let text = vec![vec![
        "tiny".to_string(),
        "a".into(),
        "encoders".into(),
        "ok".into(),
    ]];
    let chars = build_char_vocab(&text);
    let cfg = tiny_encoder();
    let enc = CharEncoderParams::init(cfg.clone(), chars.len(), 2).map_err(e2s)?;
    let ids: Vec<Vec<usize>> = text[0]
        .iter()
        .map(|w| char_ids(w, &chars, cfg.max_word_len).map(|c| c.ids))
        .collect::<Result<_, _>>()
        .map_err(e2s)?;
    let refs: Vec<&[usize]> = ids.iter().map(Vec::as_slice).collect();
    reports.push((
        "char-cnn encoder",
        finite_difference_check(&enc.params, eps, all, 0, |tape, s| {
            probe::encoder_loss(tape, s, &cfg, &refs)
        })
        .map_err(e2s)?,
    ));

    let cell = probe::lstm_cell_params(2, 3, 4, 3).map_err(e2s)?;
    reports.push((
        "lstm cell",
        finite_difference_check(&cell, eps, all, 0, probe::lstm_cell_loss).map_err(e2s)?,
    ));

    let corpus: Vec<Vec<String>> = ["the cat sat", "a dog ran far", "cat ran"]
        .iter()
        .map(|s| s.split(' ').map(String::from).collect())
        .collect();
    let lm_cfg = BiLmConfig {
        encoder: tiny_encoder(),
        layers: 2,
        hidden: 3,
    };
    let mut lm = BiLm::new(
        lm_cfg.clone(),
        build_vocab(&corpus, 1).map_err(e2s)?,
        build_char_vocab(&corpus),
        4,
    )
    .map_err(e2s)?;
    // A zero head passes no gradient to the layers below it.
    let head = lm.params.get("softmax.weight").unwrap().shape().to_vec();
    lm.params.insert(
        "softmax.weight",
        seeded_init(&head, InitScheme::UniformGlorot, 5).map_err(e2s)?,
    );
    let sents: Vec<&[String]> = corpus.iter().map(Vec::as_slice).collect();
    let batch = LmBatch::from_sentences(&sents, &lm.words, &lm.chars, lm_cfg.encoder.max_word_len)
        .map_err(e2s)?;
    reports.push((
        "bilm loss",
        finite_difference_check(&lm.params, eps, all, 0, |tape, s| {
            probe::bilm_batch_loss(tape, s, &lm_cfg, &batch)
        })
        .map_err(e2s)?,
    ));

    let mut crf = ParamStore::new();
    crf.insert(
        "emissions",
        seeded_init(&[5, 3], InitScheme::UniformGlorot, 6).map_err(e2s)?,
    );
    crf.insert(
        "transitions",
        seeded_init(&[5, 5], InitScheme::UniformGlorot, 7).map_err(e2s)?,
    );
    reports.push((
        "crf nll",
        finite_difference_check(&crf, eps, all, 0, |tape, s| {
            let e = tape.param(s, "emissions")?;
            let t = tape.param(s, "transitions")?;
            crf_nll(tape, e, t, &[0, 2, 2, 1, 0])
        })
        .map_err(e2s)?,
    ));

    let detail = reports
        .iter()
        .map(|(n, r)| {
            format!(
                "{n} {:.1e} ({} coords)",
                r.max_relative_error, r.coordinates_checked
            )
        })
        .collect::<Vec<_>>()
        .join(", ");
    ensure(
        reports.iter().all(|(_, r)| r.max_relative_error < 1e-4),
        || detail.clone(),
    )?;
    Ok(detail)
}

// ---------------------------------------------------------------- 3

fn small_lm() -> BiLmConfig {
    BiLmConfig {
        encoder: CharEncoderConfig {
            char_dim: 8,
            filter_widths: vec![1, 2, 3],
            filter_counts: vec![8, 8, 16],
            highway_layers: 1,
            output_dim: 24,
            max_word_len: 12,
        },
        layers: 1,
        hidden: 48,
    }
}

fn lm_train(epochs: usize, seed: u64) -> LmTrainConfig {
    LmTrainConfig {
        epochs,
        batch_size: 8,
        seed,
        ..LmTrainConfig::default()
    }
}

fn lm_sanity() -> Check {
    let corpus = synth::toy_lm_corpus(30, 3);
    let words = build_vocab(&corpus, 1).map_err(e2s)?;
    let chars = build_char_vocab(&corpus);
    ensure(words.len() <= 200, || {
        format!("vocabulary of {} words", words.len())
    })?;
    let fresh = BiLm::new(small_lm(), words.clone(), chars.clone(), 1).map_err(e2s)?;
    let initial = corpus_loss(&corpus, &fresh).map_err(e2s)?;
    let ln_v = (words.len() as f64).ln();
    let gap = (initial - ln_v).abs();
    ensure(gap <= 1e-9, || {
        format!("initial loss {initial} vs ln|V| {ln_v}")
    })?;

    let (trained, _) = train_lm(
        &corpus,
        &words,
        &chars,
        &small_lm(),
        &lm_train(100, 1),
        None,
    )
    .map_err(e2s)?;
    let before = initial.exp();
    let after = perplexity(&corpus, &trained).map_err(e2s)?;
    let detail = format!(
        "|V|={} initial loss - ln|V| = {gap:.1e}; perplexity {before:.2} -> {after:.2} after 100 epochs",
        words.len()
    );
    ensure(after < 0.5 * before, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 4

fn tagger_arch(head: Head) -> TaggerArch {
    TaggerArch {
        d_word: 16,
        hidden: 32,
        layers: 2,
        head,
        constrained: true,
        freeze_embeddings: false,
        lm: None,
    }
}

fn tagger_overfit() -> Check {
    let lex = Lexicon::new(12, 12, 8, 21);
    let data = synth::sentences(&lex, Lang::A, 30, &|_| true, 22);
    let words = build_vocab(&data, 1).map_err(e2s)?;
    let labels = LabelSet::from_sequences(&data, LabelScheme::Bio).map_err(e2s)?;
    let mut epochs = Vec::new();
    for seed in 1..=3 {
        let tagger = Tagger::new(
            tagger_arch(Head::Crf),
            words.clone(),
            labels.clone(),
            None,
            seed,
        )
        .map_err(e2s)?;
        let cfg = TaggerTrainConfig {
            epochs: 300,
            target_score: Some(100.0),
            batch_size: 4,
            unk_replace: 0.0,
            seed,
            ..TaggerTrainConfig::default()
        };
        let (trained, report) = train_tagger(tagger, &data, Some(&data), &cfg).map_err(e2s)?;
        let f1 = span_f1(&data, &predict(&data, &trained).map_err(e2s)?)
            .map_err(e2s)?
            .micro
            .f1();
        if f1 < 100.0 {
            return Err(format!(
                "seed {seed}: training F1 {f1:.2} after {} epochs",
                report.epochs.len()
            ));
        }
        epochs.push(report.best_epoch.unwrap_or(0));
    }
    Ok(format!(
        "30 sentences, 100.00 training F1 for 3/3 seeds at epochs {epochs:?}"
    ))
}

// ---------------------------------------------------------------- 5

fn head_surgery() -> Check {
    let lex = Lexicon::new(20, 20, 10, 31);
    let a = synth::tokens(&synth::sentences(&lex, Lang::A, 150, &|_| true, 32));
    let b = synth::tokens(&synth::sentences(&lex, Lang::B, 100, &|_| true, 33));
    let chars = build_shared_char_vocab(&[&a, &b]).map_err(e2s)?;
    let words_a = build_vocab(&a, 1).map_err(e2s)?;
    let (src, _) =
        train_lm(&a, &words_a, &chars, &small_lm(), &lm_train(5, 2), None).map_err(e2s)?;

    let words_b = build_vocab(&b, 1).map_err(e2s)?;
    let surgered = replace_vocab_head(&src, words_b.clone(), 3).map_err(e2s)?;
    let mut preserved = 0;
    for (name, t) in src
        .params
        .iter()
        .filter(|(n, _)| !n.starts_with("softmax."))
    {
        let after = surgered
            .params
            .get(name)
            .ok_or_else(|| format!("{name} missing after surgery"))?;
        ensure(after.checksum() == t.checksum(), || {
            format!("{name} changed")
        })?;
        preserved += 1;
    }
    ensure(surgered.params.len() == src.params.len(), || {
        "parameter set changed".into()
    })?;
    let d = src.config.output_dim();
    let w = surgered
        .params
        .get("softmax.weight")
        .unwrap()
        .shape()
        .to_vec();
    let bias = surgered
        .params
        .get("softmax.bias")
        .unwrap()
        .shape()
        .to_vec();
    ensure(w == [words_b.len(), d] && bias == [words_b.len()], || {
        format!("head shapes {w:?} {bias:?}")
    })?;

    let before = perplexity(&b, &surgered).map_err(e2s)?;
    let (tuned, report) = train_lm(
        &b,
        &words_b,
        &chars,
        &src.config,
        &lm_train(3, 4),
        Some(&surgered),
    )
    .map_err(e2s)?;
    ensure(report.epochs.len() == 3, || {
        format!("{} epochs", report.epochs.len())
    })?;
    let after = perplexity(&b, &tuned).map_err(e2s)?;
    let detail = format!(
        "{preserved} non-head tensors bit-identical, head [{}, {d}]; target perplexity {before:.1} -> {after:.1} after 3 epochs",
        words_b.len()
    );
    ensure(after < before, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 6

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn cross_lingual_seed(seed: u64) -> Result<(f64, f64), String> {
    let lex = Lexicon::new(40, 40, 30, 100 + seed);
    let s = |k: u64| 1000 * seed + k;
    let lm_a = synth::tokens(&synth::sentences(&lex, Lang::A, 500, &|_| true, s(1)));
    let lm_b = synth::tokens(&synth::sentences(&lex, Lang::B, 200, &|_| true, s(2)));
    // Labeled sentences only mention a third of the entities.
    let train = synth::sentences(&lex, Lang::B, 50, &|i| i % 3 == 0, s(3));
    let test = synth::sentences(&lex, Lang::B, 200, &|_| true, s(4));

    let chars = build_shared_char_vocab(&[&lm_a, &lm_b]).map_err(e2s)?;
    let words_a = build_vocab(&lm_a, 1).map_err(e2s)?;
    let (source, _) = train_lm(
        &lm_a,
        &words_a,
        &chars,
        &small_lm(),
        &lm_train(10, seed),
        None,
    )
    .map_err(e2s)?;
    let words_b = build_vocab(&lm_b, 1).map_err(e2s)?;
    let surgered = replace_vocab_head(&source, words_b.clone(), seed).map_err(e2s)?;
    let (target_lm, _) = train_lm(
        &lm_b,
        &words_b,
        &chars,
        &source.config,
        &lm_train(3, seed),
        Some(&surgered),
    )
    .map_err(e2s)?;

    let words = build_vocab(&train, 1).map_err(e2s)?;
    let labels = LabelSet::from_sequences(&train, LabelScheme::Bio).map_err(e2s)?;
    let cfg = TaggerTrainConfig {
        epochs: 40,
        batch_size: 8,
        seed,
        ..TaggerTrainConfig::default()
    };
    let score = |lm: Option<&BiLm>| -> Result<f64, String> {
        let t = Tagger::new(
            tagger_arch(Head::Crf),
            words.clone(),
            labels.clone(),
            lm,
            seed,
        )
        .map_err(e2s)?;
        let (t, _) = train_tagger(t, &train, None, &cfg).map_err(e2s)?;
        Ok(span_f1(&test, &predict(&test, &t).map_err(e2s)?)
            .map_err(e2s)?
            .micro
            .f1())
    };
    Ok((score(Some(&target_lm))?, score(None)?))
}

fn cross_lingual() -> Check {
    let mut transfer = Vec::new();
    let mut baseline = Vec::new();
    for seed in 1..=5 {
        let (t, b) = cross_lingual_seed(seed)?;
        transfer.push(t);
        baseline.push(b);
    }
    let wins = transfer
        .iter()
        .zip(&baseline)
        .filter(|(t, b)| t > b)
        .count();
    let (mt, mb) = (median(transfer.clone()), median(baseline.clone()));
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:.2}"))
            .collect::<Vec<_>>()
            .join("/")
    };
    let detail = format!(
        "median F1 transfer {mt:.2} vs random init {mb:.2}, {wins}/5 paired wins (transfer {}, baseline {})",
        fmt(&transfer),
        fmt(&baseline)
    );
    ensure(mt >= mb && wins >= 3, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 7

fn seq(tokens: &str, tags: &str) -> LabeledSequence {
    let split = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
    LabeledSequence::new(split(tokens), split(tags)).unwrap()
}

/// Gold and predicted tags for ten sentences; expected counts in the
/// comment of each case.
fn crafted_eval_suite() -> (Vec<LabeledSequence>, Vec<LabeledSequence>) {
    let cases = [
        // exact: PER tp, LOC tp
        (
            "Ann Lee in Oslo",
            "B-PER I-PER O B-LOC",
            "B-PER I-PER O B-LOC",
        ),
        // span too short: PER fp, PER fn
        ("Ann Lee left", "B-PER I-PER O", "B-PER O O"),
        // span too long: LOC fp, LOC fn
        ("Oslo is cold", "B-LOC O O", "B-LOC I-LOC O"),
        // wrong type: ORG fn, LOC fp
        ("at Acme Corp", "O B-ORG I-ORG", "O B-LOC I-LOC"),
        // missed: PER tp, LOC fn
        ("Ann to Rome", "B-PER O B-LOC", "B-PER O O"),
        // spurious: ORG fp
        ("it is late", "O O O", "O B-ORG O"),
        // orphan I repaired to B: LOC tp
        ("in New York", "O B-LOC I-LOC", "O I-LOC I-LOC"),
        // I of another type starts a new span: PER fp, PER fn, ORG fp
        ("Ann Lee said", "B-PER I-PER O", "B-PER I-ORG O"),
        // nothing to find
        ("no names", "O O", "O O"),
        // ORG tp, PER fp + fn (too long), LOC tp
        (
            "Acme hired Bo Li yesterday Oslo",
            "B-ORG O B-PER I-PER O B-LOC",
            "B-ORG O B-PER I-PER I-PER B-LOC",
        ),
    ];
    let gold = cases.iter().map(|(w, g, _)| seq(w, g)).collect();
    let pred = cases.iter().map(|(w, _, p)| seq(w, p)).collect();
    (gold, pred)
}

fn to_contiguous_bio(data: &[LabeledSequence]) -> Vec<LabeledSequence> {
    data.iter()
        .map(|s| {
            let raw: Vec<&str> = s.tags.iter().map(|t| entity_type(t)).collect();
            LabeledSequence::new(s.tokens.clone(), contiguous_to_bio(&raw)).unwrap()
        })
        .collect()
}

fn summary(m: &SpanMetrics) -> BTreeMap<String, (usize, usize, usize, String, String, String)> {
    m.per_type
        .iter()
        .map(|(k, c)| (k.as_str(), c))
        .chain([("micro", &m.micro)])
        .map(|(k, c)| {
            (
                k.to_string(),
                (
                    c.tp,
                    c.fp,
                    c.fn_,
                    format!("{:.2}", c.precision()),
                    format!("{:.2}", c.recall()),
                    format!("{:.2}", c.f1()),
                ),
            )
        })
        .collect()
}

fn data_dir() -> Option<PathBuf> {
    std::env::var_os("SEQXFER_DATA").map(PathBuf::from)
}

fn read_data(dir: &Path, name: &str) -> Result<Vec<LabeledSequence>, String> {
    let path = dir.join(name);
    let file = std::fs::File::open(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    read_conll(
        std::io::BufReader::new(file),
        Column::Index(0),
        Column::Last,
    )
    .map_err(|e| format!("{}: {e}", path.display()))
}

fn evaluator() -> Check {
    let (gold, pred) = crafted_eval_suite();
    let m = span_f1(&gold, &pred).map_err(e2s)?;
    let s = |tp, fp, fn_, p: &str, r: &str, f: &str| {
        (tp, fp, fn_, p.to_string(), r.to_string(), f.to_string())
    };
    let expected: BTreeMap<String, _> = [
        ("LOC", s(3, 2, 2, "60.00", "60.00", "60.00")),
        ("ORG", s(1, 2, 1, "33.33", "50.00", "40.00")),
        ("PER", s(2, 3, 3, "40.00", "40.00", "40.00")),
        ("micro", s(6, 7, 6, "46.15", "50.00", "48.00")),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let got = summary(&m);
    ensure(got == expected, || format!("metrics {got:?}"))?;

    let converted = span_f1(&to_contiguous_bio(&gold), &to_contiguous_bio(&pred)).map_err(e2s)?;
    ensure(converted == m, || {
        "raw-contiguous scoring differs from BIO scoring".into()
    })?;

    let mut detail = "10-sentence suite matches hand counts (micro P/R/F1 46.15/50.00/48.00); BIO conversion invariant".to_string();
    match data_dir() {
        None => detail.push_str("; silver-annotation table skipped (SEQXFER_DATA unset)"),
        Some(dir) => {
            let clean = read_data(&dir, "clean_1.2k.conll")?;
            let mut rows = Vec::new();
            for (file, want) in [
                ("dee_1.2k.conll", ["60.85", "33.08", "42.86"]),
                ("mdee_1.2k.conll", ["61.77", "35.07", "44.74"]),
                ("gazz_1.2k.conll", ["63.83", "40.44", "49.51"]),
            ] {
                let q = annotation_quality(&read_data(&dir, file)?, &clean)
                    .map_err(e2s)?
                    .micro;
                let got = [q.precision(), q.recall(), q.f1()].map(|v| format!("{v:.2}"));
                ensure(got == want, || {
                    format!("{file}: {got:?}, expected {want:?}")
                })?;
                rows.push(got.join("/"));
            }
            detail.push_str(&format!("; silver annotation quality {}", rows.join(", ")));
        }
    }
    Ok(detail)
}

// ---------------------------------------------------------------- 8

fn overlap() -> Check {
    let source = vec![seq(
        "Budi lives in Jakarta in Budi",
        "B-PER O O B-LOC O B-PER",
    )];
    let reference = vec![seq(
        "Jakarta is near Budi in Surabaya",
        "B-LOC O O B-ORG O B-LOC",
    )];
    let by_ref = OverlapOptions::default();
    let by_src = OverlapOptions {
        normalization: Normalization::Source,
        ..by_ref
    };

    // Shared words {Budi, in, Jakarta}: 3 of the 6 reference words, 3 of 4 source words.
    let v_ref = vocab_overlap(&source, &reference, by_ref).map_err(e2s)?;
    let v_src = vocab_overlap(&source, &reference, by_src).map_err(e2s)?;
    ensure(v_ref == 3.0 / 6.0 && v_src == 3.0 / 4.0, || {
        format!("vocab overlap {v_ref} / {v_src}")
    })?;

    let expect = |pairs: &[(&str, f64)]| {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect::<BTreeMap<_, _>>()
    };
    let wt_ref = word_tag_overlap(&source, &reference, by_ref).map_err(e2s)?;
    let want_ref = expect(&[("LOC", 1.0 / 2.0), ("O", 1.0 / 3.0), ("ORG", 0.0)]);
    ensure(wt_ref == want_ref, || {
        format!("word-tag by reference {wt_ref:?}")
    })?;
    let wt_src = word_tag_overlap(&source, &reference, by_src).map_err(e2s)?;
    let want_src = expect(&[("LOC", 1.0), ("O", 1.0 / 2.0), ("PER", 0.0)]);
    ensure(wt_src == want_src, || {
        format!("word-tag by source {wt_src:?}")
    })?;

    let folded = OverlapOptions {
        fold_case: true,
        ..by_ref
    };
    let lower = vec![seq("budi IN", "B-PER O")];
    let v_fold = vocab_overlap(&lower, &reference, folded).map_err(e2s)?;
    ensure(v_fold == 2.0 / 6.0, || {
        format!("case-folded overlap {v_fold}")
    })?;

    let mut detail =
        "crafted corpora match hand-computed rates under both normalizations".to_string();
    let Some(dir) = data_dir() else {
        detail.push_str("; corpus overlap figures skipped (SEQXFER_DATA unset)");
        return Ok(detail);
    };
    let gold = read_data(&dir, "gold_id.conll")?;
    let wp2 = read_data(&dir, "wp2.conll")?;
    let wp3 = read_data(&dir, "wp3.conll")?;
    let conll = read_data(&dir, "conll_en.conll")?;
    let pct = |v: f64| format!("{:.2}", 100.0 * v);
    let mut failures = Vec::new();
    for norm in [Normalization::Reference, Normalization::Source] {
        let o = OverlapOptions {
            normalization: norm,
            ..OverlapOptions::default()
        };
        let vocab = [&wp2, &wp3, &conll]
            .iter()
            .map(|c| vocab_overlap(c, &gold, o).map(pct))
            .collect::<Result<Vec<_>, _>>()
            .map_err(e2s)?;
        let wt = word_tag_overlap(&wp2, &gold, o).map_err(e2s)?;
        let tags: Vec<String> = ["PER", "LOC", "ORG", "O"]
            .iter()
            .map(|t| wt.get(*t).map_or("-".into(), |v| pct(*v)))
            .collect();
        if vocab == ["26.77", "25.70", "15.24"] && tags == ["51.09", "60.90", "60.54", "16.56"] {
            detail.push_str(&format!(
                "; corpus figures reproduced with {norm} normalization"
            ));
            if norm != Normalization::Reference {
                detail.push_str(" (differs from the default)");
            }
            return Ok(detail);
        }
        failures.push(format!("{norm}: vocab {vocab:?}, WP2 word-tag {tags:?}"));
    }
    Err(format!(
        "corpus figures not reproduced: {}",
        failures.join("; ")
    ))
}

// ---------------------------------------------------------------- 9

fn pos_data() -> Vec<LabeledSequence> {
    let lex = Lexicon::new(8, 8, 6, 41);
    synth::sentences(&lex, Lang::A, 20, &|_| true, 42)
        .into_iter()
        .map(|s| {
            let tags = s
                .tags
                .iter()
                .map(|t| {
                    if t == "O" {
                        "FW".to_string()
                    } else {
                        "NNP".to_string()
                    }
                })
                .collect();
            LabeledSequence::new(s.tokens, tags).unwrap()
        })
        .collect()
}

fn transfer_mechanics() -> Check {
    let pos = pos_data();
    let words = build_vocab(&pos, 1).map_err(e2s)?;
    let pos_labels = LabelSet::from_sequences(&pos, LabelScheme::Raw).map_err(e2s)?;
    let src = Tagger::new(
        tagger_arch(Head::Softmax),
        words.clone(),
        pos_labels,
        None,
        1,
    )
    .map_err(e2s)?;
    let cfg = TaggerTrainConfig {
        epochs: 2,
        batch_size: 4,
        ..TaggerTrainConfig::default()
    };
    let (src, _) = train_tagger(src, &pos, None, &cfg).map_err(e2s)?;

    let ner_labels = LabelSet::new(
        ["O", "B-PER", "I-PER", "B-LOC", "I-LOC", "B-ORG", "I-ORG"]
            .map(String::from)
            .to_vec(),
        LabelScheme::Bio,
    )
    .map_err(e2s)?;
    let spec = TargetSpec {
        arch: tagger_arch(Head::Crf),
        words: words.clone(),
        labels: ner_labels.clone(),
        text_chars: None,
    };
    let policy = TransferPolicy::parse("pos,embed=copy").map_err(e2s)?;
    let (ner, report) =
        transfer_init(TransferSource::Tagger(&src), &spec, &policy, 9).map_err(e2s)?;

    let mut trunk = 0;
    for (name, t) in src
        .params
        .iter()
        .filter(|(n, _)| n.starts_with("lstm.") || n.starts_with("embed."))
    {
        let got = ner
            .params
            .get(name)
            .ok_or_else(|| format!("{name} missing"))?;
        ensure(got.checksum() == t.checksum(), || {
            format!("{name} not copied bit-exactly")
        })?;
        trunk += 1;
    }
    let reinit: Vec<&str> = report
        .reinitialized
        .iter()
        .map(|(n, _)| n.as_str())
        .collect();
    ensure(
        ["emission.weight", "emission.bias", "crf.transitions"]
            .iter()
            .all(|n| reinit.contains(n)),
        || format!("reinitialized {reinit:?}"),
    )?;
    let l = ner_labels.len();
    let emission = ner.params.get("emission.weight").unwrap().shape().to_vec();
    let crf = ner.params.get("crf.transitions").unwrap().shape().to_vec();
    ensure(emission[0] == l && crf == [l + 2, l + 2], || {
        format!("head shapes {emission:?} {crf:?}")
    })?;

    let mut wide = spec.clone();
    wide.arch.hidden += 1;
    let err = match transfer_init(TransferSource::Tagger(&src), &wide, &policy, 9) {
        Ok(_) => return Err("mismatched hidden size was accepted".into()),
        Err(e) => e.to_string(),
    };
    ensure(err.contains("lstm"), || {
        format!("mismatch error does not name the group: {err}")
    })?;
    Ok(format!("{trunk} trunk tensors bit-identical, softmax head replaced by a {l}-label CRF; mismatch error: {err}"))
}

// ---------------------------------------------------------------- 10

fn determinism() -> Check {
    let tmp = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-determinism");
    std::fs::create_dir_all(&tmp).map_err(e2s)?;

    let corpus = synth::toy_lm_corpus(12, 5);
    let words = build_vocab(&corpus, 1).map_err(e2s)?;
    let chars = build_char_vocab(&corpus);
    let lm_bytes = || -> Result<Vec<u8>, String> {
        let (m, _) =
            train_lm(&corpus, &words, &chars, &small_lm(), &lm_train(2, 7), None).map_err(e2s)?;
        Checkpoint::from_bilm(&m).to_bytes().map_err(e2s)
    };
    let lm1 = lm_bytes()?;
    ensure(lm1 == lm_bytes()?, || {
        "language model retraining is not bit-exact".into()
    })?;

    let data = pos_data();
    let tagger_bytes = |lm: Option<&BiLm>| -> Result<Vec<u8>, String> {
        let labels = LabelSet::from_sequences(&data, LabelScheme::Raw).map_err(e2s)?;
        let t = Tagger::new(
            tagger_arch(Head::Crf),
            build_vocab(&data, 1).map_err(e2s)?,
            labels,
            lm,
            3,
        )
        .map_err(e2s)?;
        let cfg = TaggerTrainConfig {
            epochs: 2,
            batch_size: 4,
            seed: 3,
            ..TaggerTrainConfig::default()
        };
        let (t, _) = train_tagger(t, &data, Some(&data), &cfg).map_err(e2s)?;
        Checkpoint::from_tagger(&t).to_bytes().map_err(e2s)
    };
    let lm_model = Checkpoint::from_bytes(&lm1)
        .map_err(e2s)?
        .to_bilm()
        .map_err(e2s)?;
    let t1 = tagger_bytes(Some(&lm_model))?;
    ensure(t1 == tagger_bytes(Some(&lm_model))?, || {
        "tagger retraining is not bit-exact".into()
    })?;

    for (name, bytes) in [("lm.ckpt", &lm1), ("tagger.ckpt", &t1)] {
        let a = tmp.join(name);
        let b = tmp.join(format!("{name}.again"));
        std::fs::write(&a, bytes).map_err(e2s)?;
        Checkpoint::load(&a).map_err(e2s)?.save(&b).map_err(e2s)?;
        let again = std::fs::read(&b).map_err(e2s)?;
        ensure(again == *bytes, || {
            format!("{name}: save -> load -> save changed the bytes")
        })?;
    }
    Ok(format!(
        "retraining reproduces LM ({} B) and tagger ({} B) checkpoints bit-exactly; save/load/save byte-identical",
        lm1.len(),
        t1.len()
    ))
}

fn main() {
    let secs = Duration::from_secs;
    let results = [
        run(1, "crf oracle equivalence", secs(10), crf_oracle),
        run(2, "gradient suite", secs(60), gradient_suite),
        run(3, "lm sanity", secs(120), lm_sanity),
        run(4, "tagger overfit", secs(180), tagger_overfit),
        run(5, "vocab-head surgery", secs(600), head_surgery),
        run(
            6,
            "synthetic cross-lingual transfer",
            secs(900),
            cross_lingual,
        ),
        run(7, "evaluator exactness", secs(600), evaluator),
        run(8, "overlap analyzer", secs(600), overlap),
        run(9, "transfer mechanics", secs(600), transfer_mechanics),
        run(10, "determinism and persistence", secs(600), determinism),
    ];
    let passed = results.iter().filter(|&&ok| ok).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
