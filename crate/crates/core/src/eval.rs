//! Span-level scoring and corpus overlap statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::corpus::{bio_to_spans, entity_type, LabeledSequence};
use crate::error::{contract, Error, Result};

/// True positive, false positive and false negative counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    /// Percent; 0 when nothing was predicted.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// Percent; 0 when there is nothing to find.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Percent; 0 when precision and recall are both 0.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// Exact-match span scores per entity type and micro-averaged.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SpanMetrics {
    pub per_type: BTreeMap<String, Counts>,
    pub micro: Counts,
}

impl SpanMetrics {
    /// Aligned table with two decimals.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>6} {:>6} {:>6} {:>8} {:>8} {:>8}",
            "type", "tp", "fp", "fn", "prec", "recall", "f1"
        );
        let rows = self
            .per_type
            .iter()
            .map(|(k, c)| (k.as_str(), c))
            .chain([("micro", &self.micro)]);
        for (name, c) in rows {
            let _ = writeln!(
                out,
                "{:<10} {:>6} {:>6} {:>6} {:>8.2} {:>8.2} {:>8.2}",
                name,
                c.tp,
                c.fp,
                c.fn_,
                c.precision(),
                c.recall(),
                c.f1()
            );
        }
        out
    }

    /// One `metric=… type=… value=…` line per number.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let rows = self
            .per_type
            .iter()
            .map(|(k, c)| (k.as_str(), c))
            .chain([("micro", &self.micro)]);
        for (name, c) in rows {
            let _ = writeln!(out, "metric=tp type={name} value={}", c.tp);
            let _ = writeln!(out, "metric=fp type={name} value={}", c.fp);
            let _ = writeln!(out, "metric=fn type={name} value={}", c.fn_);
            let _ = writeln!(
                out,
                "metric=precision type={name} value={:.2}",
                c.precision()
            );
            let _ = writeln!(out, "metric=recall type={name} value={:.2}", c.recall());
            let _ = writeln!(out, "metric=f1 type={name} value={:.2}", c.f1());
        }
        out
    }
}

/// Exact-match span F1 of `pred` against `gold`.
///
/// Gold tags must be strictly valid BIO; predicted tags are repaired
/// (an orphan `I-X` opens an entity). A predicted span counts only when
/// type, start and end all match a gold span.
pub fn span_f1(gold: &[LabeledSequence], pred: &[LabeledSequence]) -> Result<SpanMetrics> {
    if gold.len() != pred.len() {
        return Err(contract(format!(
            "{} gold sentences but {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let mut metrics = SpanMetrics::default();
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.tags.len() != p.tags.len() {
            return Err(contract(format!(
                "sentence {i}: {} gold tags but {} predicted",
                g.tags.len(),
                p.tags.len()
            )));
        }
        let gs: BTreeSet<_> = bio_to_spans(&g.tags, false)
            .map_err(|e| Error::Data(format!("gold sentence {i}: {e}")))?
            .into_iter()
            .collect();
        let ps: BTreeSet<_> = bio_to_spans(&p.tags, true)
            .map_err(|e| Error::Data(format!("predicted sentence {i}: {e}")))?
            .into_iter()
            .collect();
        for s in &ps {
            let c = metrics.per_type.entry(s.kind.clone()).or_default();
            if gs.contains(s) {
                c.tp += 1;
            } else {
                c.fp += 1;
            }
        }
        for s in gs.difference(&ps) {
            metrics.per_type.entry(s.kind.clone()).or_default().fn_ += 1;
        }
    }
    let mut micro = Counts::default();
    metrics.per_type.values().for_each(|c| micro.add(*c));
    metrics.micro = micro;
    Ok(metrics)
}

/// Scores silver annotations against a clean reference of the same text.
pub fn annotation_quality(
    silver: &[LabeledSequence],
    clean: &[LabeledSequence],
) -> Result<SpanMetrics> {
    span_f1(clean, silver)
}

/// Which side's unique items form the denominator of an overlap rate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Normalization {
    /// Divide by the reference (second, target) corpus.
    #[default]
    Reference,
    /// Divide by the source (first) corpus.
    Source,
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reference" => Ok(Normalization::Reference),
            "source" => Ok(Normalization::Source),
            other => Err(Error::Config(format!(
                "unknown normalization `{other}` (reference or source)"
            ))),
        }
    }
}

impl std::fmt::Display for Normalization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Normalization::Reference => "reference",
            Normalization::Source => "source",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OverlapOptions {
    /// Compare lowercased words.
    pub fold_case: bool,
    pub normalization: Normalization,
}

impl OverlapOptions {
    fn key(&self, w: &str) -> String {
        if self.fold_case {
            w.to_lowercase()
        } else {
            w.to_string()
        }
    }

    fn rate(&self, shared: usize, source: usize, reference: usize) -> Option<f64> {
        let den = match self.normalization {
            Normalization::Reference => reference,
            Normalization::Source => source,
        };
        (den > 0).then(|| shared as f64 / den as f64)
    }
}

/// Shared unique words over unique words of the normalizing side.
pub fn vocab_overlap<S: AsRef<[String]>>(
    source: &[S],
    reference: &[S],
    options: OverlapOptions,
) -> Result<f64> {
    let collect = |c: &[S]| -> BTreeSet<String> {
        c.iter()
            .flat_map(|s| s.as_ref().iter().map(|w| options.key(w)))
            .collect()
    };
    let (a, b) = (collect(source), collect(reference));
    if a.is_empty() || b.is_empty() {
        return Err(Error::Data(
            "vocabulary overlap needs two non-empty corpora".into(),
        ));
    }
    let shared = a.intersection(&b).count();
    Ok(options.rate(shared, a.len(), b.len()).expect("non-empty"))
}

/// Per tag type: words seen with that type in both corpora over words
/// seen with it on the normalizing side. Types are BIO tags with the
/// prefix removed; types without any word on that side are omitted.
pub fn word_tag_overlap(
    source: &[LabeledSequence],
    reference: &[LabeledSequence],
    options: OverlapOptions,
) -> Result<BTreeMap<String, f64>> {
    let collect = |c: &[LabeledSequence]| {
        let mut by_type: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for s in c {
            for (w, t) in s.tokens.iter().zip(&s.tags) {
                by_type
                    .entry(entity_type(t).to_string())
                    .or_default()
                    .insert(options.key(w));
            }
        }
        by_type
    };
    let (a, b) = (collect(source), collect(reference));
    let empty = BTreeSet::new();
    let types: BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    let mut out = BTreeMap::new();
    for t in types {
        let wa = a.get(t).unwrap_or(&empty);
        let wb = b.get(t).unwrap_or(&empty);
        if let Some(rate) = options.rate(wa.intersection(wb).count(), wa.len(), wb.len()) {
            out.insert(t.clone(), rate);
        }
    }
    Ok(out)
}

/// Vocabulary and word-tag overlap of a source corpus with a reference.
#[derive(Clone, Debug, PartialEq)]
pub struct OverlapReport {
    pub options: OverlapOptions,
    pub vocab: f64,
    pub word_tag: BTreeMap<String, f64>,
}

pub fn overlap_report(
    source: &[LabeledSequence],
    reference: &[LabeledSequence],
    options: OverlapOptions,
) -> Result<OverlapReport> {
    Ok(OverlapReport {
        options,
        vocab: vocab_overlap(source, reference, options)?,
        word_tag: word_tag_overlap(source, reference, options)?,
    })
}

impl OverlapReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "normalized by the {} corpus, case {}",
            self.options.normalization,
            if self.options.fold_case {
                "folded"
            } else {
                "sensitive"
            }
        );
        let _ = writeln!(out, "vocabulary overlap: {:.2}%", 100.0 * self.vocab);
        for (t, r) in &self.word_tag {
            let _ = writeln!(out, "word-tag overlap {t}: {:.2}%", 100.0 * r);
        }
        out
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "normalization={}", self.options.normalization);
        let _ = writeln!(out, "fold_case={}", self.options.fold_case);
        let _ = writeln!(
            out,
            "metric=vocab_overlap type=all value={:.2}",
            100.0 * self.vocab
        );
        for (t, r) in &self.word_tag {
            let _ = writeln!(
                out,
                "metric=word_tag_overlap type={t} value={:.2}",
                100.0 * r
            );
        }
        out
    }
}
