//! Initializing a tagger from a trained tagger or language model.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::bilm::BiLm;
use crate::corpus::{build_char_vocab, entity_type, parse_tag, Bio, Vocabulary};
use crate::error::{contract, Error, Result};
use crate::numerics::{ParamStore, Tensor};
use crate::tagger::{init_tagger_params, LabelSet, Tagger, TaggerArch};

/// What happens to one parameter group of the target.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    /// Take the source values bit-exactly. Label-indexed groups copy the
    /// rows of mapped labels.
    Copy,
    /// Draw fresh seeded values.
    Reinitialize,
    /// Leave the target's current values alone.
    Skip,
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(Action::Copy),
            "reinit" | "reinitialize" => Ok(Action::Reinitialize),
            "skip" => Ok(Action::Skip),
            other => Err(Error::Config(format!(
                "unknown transfer action `{other}` (copy, reinit, skip)"
            ))),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Copy => "copy",
            Action::Reinitialize => "reinit",
            Action::Skip => "skip",
        })
    }
}

/// How the target's characters relate to the source character vocabulary.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CharAlignment {
    /// The source was built on a shared vocabulary; every target character
    /// must already be in it.
    #[default]
    Shared,
    /// Characters unknown to the source map to `UNK`; coverage is reported.
    SourceOnly,
}

/// Per-group actions plus alignment settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferPolicy {
    pub actions: BTreeMap<String, Action>,
    pub chars: CharAlignment,
    /// Anchor strength toward copied LM weights during later training.
    pub l2_anchor: f64,
}

/// Parameter groups of a tagger, in a stable order.
pub const GROUPS: [&str; 5] = ["embed", "bilm", "lstm", "emission", "crf"];

impl TransferPolicy {
    fn from_actions(actions: [(&str, Action); 5]) -> Self {
        Self {
            actions: actions
                .into_iter()
                .map(|(g, a)| (g.to_string(), a))
                .collect(),
            chars: CharAlignment::default(),
            l2_anchor: 0.0,
        }
    }

    /// Tagger to tagger over related label sets: everything but the word
    /// embeddings, head rows mapped by label.
    pub fn ner() -> Self {
        use Action::*;
        Self::from_actions([
            ("embed", Skip),
            ("bilm", Copy),
            ("lstm", Copy),
            ("emission", Copy),
            ("crf", Copy),
        ])
    }

    /// Trunk only; the head is drawn fresh.
    pub fn pos() -> Self {
        use Action::*;
        Self::from_actions([
            ("embed", Skip),
            ("bilm", Copy),
            ("lstm", Copy),
            ("emission", Reinitialize),
            ("crf", Reinitialize),
        ])
    }

    /// Language model into the contextual provider; the tagger itself is fresh.
    pub fn lm() -> Self {
        use Action::*;
        Self::from_actions([
            ("embed", Skip),
            ("bilm", Copy),
            ("lstm", Reinitialize),
            ("emission", Reinitialize),
            ("crf", Reinitialize),
        ])
    }

    pub fn all_copy() -> Self {
        Self::from_actions(GROUPS.map(|g| (g, Action::Copy)))
    }

    /// Parses a preset name (`ner`, `pos`, `lm`, `all`) or a comma list of
    /// `group=action`, `chars=shared|source` and `l2=<coef>` items. A list
    /// may start with a preset to override.
    pub fn parse(text: &str) -> Result<Self> {
        let mut policy: Option<Self> = None;
        let mut actions = BTreeMap::new();
        let mut chars = None;
        let mut l2 = None;
        for (i, item) in text
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .enumerate()
        {
            let Some((key, value)) = item.split_once('=') else {
                if i > 0 {
                    return Err(Error::Config(format!(
                        "policy item `{item}` must be key=value"
                    )));
                }
                policy = Some(match item {
                    "ner" => Self::ner(),
                    "pos" => Self::pos(),
                    "lm" => Self::lm(),
                    "all" => Self::all_copy(),
                    other => return Err(Error::Config(format!("unknown policy preset `{other}`"))),
                });
                continue;
            };
            match key.trim() {
                "chars" => {
                    chars = Some(match value.trim() {
                        "shared" => CharAlignment::Shared,
                        "source" => CharAlignment::SourceOnly,
                        other => {
                            return Err(Error::Config(format!("unknown char alignment `{other}`")))
                        }
                    })
                }
                "l2" => {
                    l2 = Some(
                        value
                            .trim()
                            .parse::<f64>()
                            .ok()
                            .filter(|v| *v >= 0.0 && v.is_finite())
                            .ok_or_else(|| {
                                Error::Config(format!(
                                    "l2 must be a non-negative number, got `{value}`"
                                ))
                            })?,
                    )
                }
                group if GROUPS.contains(&group) => {
                    actions.insert(group.to_string(), value.trim().parse()?);
                }
                other => return Err(Error::Config(format!("unknown policy key `{other}`"))),
            }
        }
        let mut policy = policy.unwrap_or(Self {
            actions: BTreeMap::new(),
            chars: CharAlignment::default(),
            l2_anchor: 0.0,
        });
        policy.actions.extend(actions);
        if let Some(c) = chars {
            policy.chars = c;
        }
        if let Some(l2) = l2 {
            policy.l2_anchor = l2;
        }
        Ok(policy)
    }

    pub fn action(&self, group: &str) -> Option<Action> {
        self.actions.get(group).copied()
    }
}

impl fmt::Display for TransferPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .actions
            .iter()
            .map(|(g, a)| format!("{g}={a}"))
            .collect();
        let chars = match self.chars {
            CharAlignment::Shared => "shared",
            CharAlignment::SourceOnly => "source",
        };
        write!(f, "{},chars={chars},l2={}", parts.join(","), self.l2_anchor)
    }
}

/// Correspondence between two label sets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMapping {
    /// For each target label, the source label index it takes rows from.
    pub source_of: Vec<Option<usize>>,
    /// Source labels with no target counterpart.
    pub dropped: Vec<String>,
    /// Target labels with no source counterpart.
    pub new: Vec<String>,
}

impl LabelMapping {
    pub fn mapped(&self) -> usize {
        self.source_of.iter().filter(|s| s.is_some()).count()
    }

    fn is_identity(&self, source_len: usize) -> bool {
        self.source_of.len() == source_len
            && self
                .source_of
                .iter()
                .enumerate()
                .all(|(i, s)| *s == Some(i))
    }
}

fn canonical(label: &str) -> (Option<char>, &str) {
    match parse_tag(label) {
        Some(Bio::Begin(k)) => (Some('B'), k),
        Some(Bio::Inside(k)) => (Some('I'), k),
        _ => (None, entity_type(label)),
    }
}

/// Matches labels by type, keeping the `B-`/`I-` prefix.
pub fn map_label_space(source: &LabelSet, target: &LabelSet) -> LabelMapping {
    let key_of = |l: &str| {
        let (p, k) = canonical(l);
        (p, k.to_string())
    };
    let src: BTreeMap<_, usize> = source
        .labels()
        .iter()
        .enumerate()
        .map(|(i, l)| (key_of(l), i))
        .collect();
    let source_of: Vec<Option<usize>> = target
        .labels()
        .iter()
        .map(|l| src.get(&key_of(l)).copied())
        .collect();
    let used: BTreeSet<usize> = source_of.iter().flatten().copied().collect();
    LabelMapping {
        dropped: source
            .labels()
            .iter()
            .enumerate()
            .filter(|(i, _)| !used.contains(i))
            .map(|(_, l)| l.clone())
            .collect(),
        new: target
            .labels()
            .iter()
            .zip(&source_of)
            .filter(|(_, s)| s.is_none())
            .map(|(l, _)| l.clone())
            .collect(),
        source_of,
    }
}

/// Union of characters over several corpora, so a character encoder keeps
/// its shape across languages.
pub fn build_shared_char_vocab(corpora: &[&[Vec<String>]]) -> Result<Vocabulary> {
    if corpora.is_empty() {
        return Err(contract(
            "shared character vocabulary needs at least one corpus",
        ));
    }
    let all: Vec<Vec<String>> = corpora.iter().flat_map(|c| c.iter().cloned()).collect();
    Ok(build_char_vocab(&all))
}

/// Fraction of `target`'s non-reserved characters present in `source`.
pub fn char_coverage(target: &Vocabulary, source: &Vocabulary) -> f64 {
    let symbols: Vec<&str> = target.symbols().collect();
    if symbols.is_empty() {
        return 1.0;
    }
    symbols.iter().filter(|s| source.contains(s)).count() as f64 / symbols.len() as f64
}

/// What a transfer is initialized from.
#[derive(Clone, Copy, Debug)]
pub enum TransferSource<'a> {
    Tagger(&'a Tagger),
    Lm(&'a BiLm),
}

impl TransferSource<'_> {
    /// Source parameters renamed into the tagger namespace.
    fn params(&self) -> ParamStore {
        match self {
            TransferSource::Tagger(t) => t.params.clone(),
            TransferSource::Lm(m) => m
                .params
                .iter()
                .map(|(n, t)| (format!("bilm.{n}"), t.clone()))
                .collect(),
        }
    }

    fn lm_chars(&self) -> Option<&Vocabulary> {
        match self {
            TransferSource::Tagger(t) => t.lm_chars.as_ref(),
            TransferSource::Lm(m) => Some(&m.chars),
        }
    }

    fn describe(&self) -> String {
        match self {
            TransferSource::Tagger(t) => {
                format!("tagger head={} labels={}", t.arch.head, t.labels.len())
            }
            TransferSource::Lm(m) => format!("language model vocab={}", m.words.len()),
        }
    }
}

/// Architecture and vocabularies of the tagger being initialized.
#[derive(Clone, Debug)]
pub struct TargetSpec {
    pub arch: TaggerArch,
    pub words: Vocabulary,
    pub labels: LabelSet,
    /// Characters of the target training text, for coverage statistics.
    pub text_chars: Option<Vocabulary>,
}

/// Parameter name with its shape.
pub type Entry = (String, Vec<usize>);

/// Record of what a transfer did to every parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TransferReport {
    pub copied: Vec<Entry>,
    pub reinitialized: Vec<Entry>,
    pub skipped: Vec<Entry>,
    /// Source parameters that have no place in the target.
    pub discarded: Vec<Entry>,
    pub label_mapping: Option<(Vec<String>, LabelMapping)>,
    /// Fraction of target text characters known to the source encoder.
    pub char_coverage: Option<f64>,
}

impl TransferReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (title, list) in [
            ("copied", &self.copied),
            ("reinitialized", &self.reinitialized),
            ("skipped", &self.skipped),
            ("discarded", &self.discarded),
        ] {
            let _ = writeln!(out, "[{title}] {}", list.len());
            for (name, shape) in list {
                let _ = writeln!(out, "{name} {shape:?}");
            }
        }
        if let Some((target, mapping)) = &self.label_mapping {
            let _ = writeln!(out, "[label mapping] {} mapped", mapping.mapped());
            for (label, src) in target.iter().zip(&mapping.source_of) {
                match src {
                    Some(i) => {
                        let _ = writeln!(out, "{label} <- source label {i}");
                    }
                    None => {
                        let _ = writeln!(out, "{label} <- new");
                    }
                }
            }
            let _ = writeln!(out, "dropped: {}", mapping.dropped.join(" "));
        }
        if let Some(c) = self.char_coverage {
            let _ = writeln!(out, "char_coverage={c:.4}");
        }
        out
    }
}

fn group_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

fn mismatch(group: &str, name: &str, want: &[usize], have: &[usize]) -> Error {
    Error::Transfer(format!(
        "cannot copy group `{group}`: `{name}` is {have:?} in the source but {want:?} in the target"
    ))
}

/// Copies rows (and for transitions, columns) of label-indexed tensors.
fn copy_mapped(
    name: &str,
    fresh: &Tensor,
    source: &Tensor,
    mapping: &LabelMapping,
    src_labels: usize,
) -> Result<Tensor> {
    let mut out = fresh.clone();
    if name == "crf.transitions" {
        let (t, s) = (fresh.rows(), source.rows());
        if source.shape() != [src_labels + 2, src_labels + 2] {
            return Err(mismatch("crf", name, fresh.shape(), source.shape()));
        }
        let tl = t - 2;
        let map = |i: usize| -> Option<usize> {
            if i < tl {
                mapping.source_of[i]
            } else {
                Some(i - tl + src_labels)
            }
        };
        for i in 0..t {
            for j in 0..t {
                if let (Some(a), Some(b)) = (map(i), map(j)) {
                    out.data_mut()[i * t + j] = source.data()[a * s + b];
                }
            }
        }
        return Ok(out);
    }
    // emission.weight [L, 2h] and emission.bias [L]
    let width = fresh.shape()[1..].iter().product::<usize>();
    if source.shape().first() != Some(&src_labels) || source.shape()[1..] != fresh.shape()[1..] {
        return Err(mismatch("emission", name, fresh.shape(), source.shape()));
    }
    for (i, src) in mapping.source_of.iter().enumerate() {
        if let Some(a) = src {
            let row = source.data()[a * width..(a + 1) * width].to_vec();
            out.data_mut()[i * width..(i + 1) * width].copy_from_slice(&row);
        }
    }
    Ok(out)
}

/// Builds a target tagger from `source` following `policy`.
///
/// Copy actions are bit-exact. Label-indexed groups (`emission`, `crf`)
/// copy the rows of labels matched by [`map_label_space`]; rows of new
/// labels keep their fresh values. Any other shape difference in a copied
/// group is an error naming the group and parameter.
pub fn transfer_init(
    source: TransferSource<'_>,
    target: &TargetSpec,
    policy: &TransferPolicy,
    seed: u64,
) -> Result<(Tagger, TransferReport)> {
    let mut arch = target.arch.clone();
    let src_params = source.params();
    let lm_chars = if arch.lm.is_some() || matches!(source, TransferSource::Lm(_)) {
        let chars = source.lm_chars().ok_or_else(|| {
            Error::Transfer("target expects a language model but the source has none".into())
        })?;
        if arch.lm.is_none() {
            if let TransferSource::Lm(m) = source {
                arch.lm = Some(m.config.clone());
            }
        }
        Some(chars.clone())
    } else {
        None
    };
    let fresh = init_tagger_params(
        &arch,
        target.words.len(),
        target.labels.len(),
        lm_chars.as_ref().map_or(0, Vocabulary::len),
        seed,
    )?;

    let present: BTreeSet<&str> = fresh.names().map(group_of).collect();
    for g in &present {
        if policy.action(g).is_none() {
            return Err(contract(format!(
                "transfer policy has no action for group `{g}`"
            )));
        }
    }

    let (src_labels, src_words) = match source {
        TransferSource::Tagger(t) => (Some(&t.labels), Some(&t.words)),
        TransferSource::Lm(_) => (None, None),
    };
    let mut report = TransferReport::default();
    let mapping = src_labels.map(|s| map_label_space(s, &target.labels));
    if let (Some(m), true) = (&mapping, present.contains("emission")) {
        report.label_mapping = Some((target.labels.labels().to_vec(), m.clone()));
    }

    let mut params = ParamStore::new();
    let mut ordered: Vec<(&str, &Tensor)> = fresh.iter().collect();
    ordered.sort_by_key(|(n, _)| GROUPS.iter().position(|g| *g == group_of(n)));
    for (name, fresh_t) in ordered {
        let group = group_of(name);
        let entry = (name.to_string(), fresh_t.shape().to_vec());
        match policy.action(group).expect("checked") {
            Action::Reinitialize => {
                params.insert(name, fresh_t.clone());
                report.reinitialized.push(entry);
            }
            Action::Skip => {
                params.insert(name, fresh_t.clone());
                report.skipped.push(entry);
            }
            Action::Copy => {
                let src = src_params.get(name).ok_or_else(|| {
                    Error::Transfer(format!(
                        "cannot copy group `{group}`: source has no `{name}`"
                    ))
                })?;
                let value = match (group, &mapping, src_labels) {
                    ("emission" | "crf", Some(m), Some(sl)) if !m.is_identity(sl.len()) => {
                        copy_mapped(name, fresh_t, src, m, sl.len())?
                    }
                    _ => {
                        if src.shape() != fresh_t.shape() {
                            return Err(mismatch(group, name, fresh_t.shape(), src.shape()));
                        }
                        src.clone()
                    }
                };
                if group == "embed" && src_words != Some(&target.words) {
                    return Err(Error::Transfer(
                        "cannot copy group `embed`: source and target word vocabularies differ"
                            .into(),
                    ));
                }
                params.insert(name, value);
                report.copied.push(entry);
            }
        }
    }
    let used: BTreeSet<&str> = report.copied.iter().map(|e| e.0.as_str()).collect();
    for (name, t) in src_params.iter() {
        if !used.contains(name) {
            report
                .discarded
                .push((name.to_string(), t.shape().to_vec()));
        }
    }

    if let (Some(text), Some(chars)) = (&target.text_chars, &lm_chars) {
        let coverage = char_coverage(text, chars);
        report.char_coverage = Some(coverage);
        if policy.chars == CharAlignment::Shared && coverage < 1.0 {
            let missing: Vec<&str> = text
                .symbols()
                .filter(|s| !chars.contains(s))
                .take(20)
                .collect();
            return Err(Error::Transfer(format!(
                "target text uses characters missing from the shared character vocabulary: {missing:?}"
            )));
        }
    }

    let mut provenance = vec![format!(
        "transfer from {} policy={policy} seed={seed}",
        source.describe()
    )];
    if let Some(m) = &mapping {
        if !m.dropped.is_empty() {
            provenance.push(format!("dropped source labels {}", m.dropped.join(" ")));
        }
    }
    let tagger = Tagger {
        arch,
        words: target.words.clone(),
        labels: target.labels.clone(),
        lm_chars,
        params,
        provenance,
        metrics: Vec::new(),
    };
    tagger.validate()?;
    Ok((tagger, report))
}
