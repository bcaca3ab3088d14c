//! BiLSTM sequence tagger with a CRF or per-token softmax head.

mod crf;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use crf::{crf_log_partition, crf_nll, crf_sequence_score, viterbi_decode, FORBIDDEN};

use crate::bilm::{init_bilm_params, lm_stacks, BiLm, BiLmConfig};
use crate::corpus::{parse_tag, validate_bio, Bio, LabeledSequence, Vocabulary};
use crate::encoder::{char_ids, parse_usize};
use crate::error::{contract, Error, Result};
use crate::eval::span_f1;
use crate::nn::{self, Scope, SeqLayout};
use crate::numerics::{
    param_seed, seeded_init, AdamConfig, AdamState, InitScheme, ParamStore, Tape, Tensor, Var,
};
use crf::{crf_nll_on_tape, CrfTarget};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Crf,
    Softmax,
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Head::Crf => "crf",
            Head::Softmax => "softmax",
        })
    }
}

impl FromStr for Head {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "crf" => Ok(Head::Crf),
            "softmax" => Ok(Head::Softmax),
            other => Err(Error::Config(format!(
                "unknown head `{other}` (expected crf or softmax)"
            ))),
        }
    }
}

/// How label strings are interpreted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelScheme {
    /// Entity labels in BIO form; must contain `O`.
    Bio,
    /// Opaque labels such as part-of-speech tags.
    Raw,
}

impl fmt::Display for LabelScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelScheme::Bio => "bio",
            LabelScheme::Raw => "raw",
        })
    }
}

impl FromStr for LabelScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bio" => Ok(LabelScheme::Bio),
            "raw" => Ok(LabelScheme::Raw),
            other => Err(Error::Config(format!("unknown label scheme `{other}`"))),
        }
    }
}

/// Ordered label inventory of a tagger.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSet {
    scheme: LabelScheme,
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelSet {
    pub fn new(labels: Vec<String>, scheme: LabelScheme) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, l) in labels.iter().enumerate() {
            if l.is_empty() || l.chars().any(char::is_whitespace) {
                return Err(Error::Data(format!("invalid label `{l}`")));
            }
            if index.insert(l.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate label `{l}`")));
            }
        }
        if labels.is_empty() {
            return Err(Error::Data("label set is empty".into()));
        }
        if scheme == LabelScheme::Bio {
            if !index.contains_key("O") {
                return Err(Error::Data("BIO label set must contain O".into()));
            }
            for l in &labels {
                match parse_tag(l) {
                    None => return Err(Error::Data(format!("`{l}` is not a BIO label"))),
                    Some(Bio::Inside(kind)) if !index.contains_key(&format!("B-{kind}")) => {
                        return Err(Error::Data(format!("`{l}` has no matching B-{kind}")))
                    }
                    _ => {}
                }
            }
        }
        Ok(Self {
            scheme,
            labels,
            index,
        })
    }

    /// Collects the labels used in `data`. BIO sets are ordered `O` first,
    /// then `B-X`, `I-X` per type in sorted order, always in pairs.
    pub fn from_sequences(data: &[LabeledSequence], scheme: LabelScheme) -> Result<Self> {
        let used: BTreeSet<&str> = data
            .iter()
            .flat_map(|s| s.tags.iter().map(String::as_str))
            .collect();
        let labels = match scheme {
            LabelScheme::Raw => used.into_iter().map(String::from).collect(),
            LabelScheme::Bio => {
                let mut kinds = BTreeSet::new();
                for tag in &used {
                    match parse_tag(tag) {
                        Some(Bio::Begin(k)) | Some(Bio::Inside(k)) => {
                            kinds.insert(k);
                        }
                        Some(Bio::Outside) => {}
                        None => return Err(Error::Data(format!("`{tag}` is not a BIO label"))),
                    }
                }
                let mut labels = vec!["O".to_string()];
                for k in kinds {
                    labels.push(format!("B-{k}"));
                    labels.push(format!("I-{k}"));
                }
                labels
            }
        };
        Self::new(labels, scheme)
    }

    pub fn scheme(&self) -> LabelScheme {
        self.scheme
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    /// Whether BIO grammar allows `to` after `from` (`None` is the sentence
    /// start). Raw label sets allow everything.
    pub fn allowed(&self, from: Option<usize>, to: usize) -> bool {
        if self.scheme == LabelScheme::Raw {
            return true;
        }
        match parse_tag(&self.labels[to]) {
            Some(Bio::Inside(kind)) => match from.and_then(|f| parse_tag(&self.labels[f])) {
                Some(Bio::Begin(k)) | Some(Bio::Inside(k)) => k == kind,
                _ => false,
            },
            _ => true,
        }
    }

    /// Keep-mask over the transition matrix: `false` marks entries fixed
    /// at [`FORBIDDEN`].
    pub fn transition_mask(&self) -> Vec<bool> {
        let l = self.len();
        let s = l + 2;
        let mut keep = vec![true; s * s];
        for to in 0..l {
            keep[l * s + to] = self.allowed(None, to);
            for from in 0..l {
                keep[from * s + to] = self.allowed(Some(from), to);
            }
        }
        keep
    }
}

/// Tagger architecture.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaggerArch {
    pub d_word: usize,
    pub hidden: usize,
    pub layers: usize,
    pub head: Head,
    /// Fix BIO-illegal CRF transitions.
    pub constrained: bool,
    pub freeze_embeddings: bool,
    /// Attached contextual provider.
    pub lm: Option<BiLmConfig>,
}

impl Default for TaggerArch {
    fn default() -> Self {
        Self {
            d_word: 50,
            hidden: 200,
            layers: 2,
            head: Head::Crf,
            constrained: true,
            freeze_embeddings: false,
            lm: None,
        }
    }
}

impl TaggerArch {
    /// Width of the first BiLSTM layer's input.
    pub fn input_dim(&self) -> usize {
        self.d_word + self.lm.as_ref().map_or(0, |c| 2 * c.output_dim())
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_word == 0 || self.hidden == 0 || self.layers == 0 {
            return Err(Error::Config("tagger dimensions must be positive".into()));
        }
        if let Some(lm) = &self.lm {
            lm.validate()?;
        }
        Ok(())
    }

    pub fn to_kv(&self, out: &mut BTreeMap<String, String>) {
        out.insert("tagger.d_word".into(), self.d_word.to_string());
        out.insert("tagger.hidden".into(), self.hidden.to_string());
        out.insert("tagger.layers".into(), self.layers.to_string());
        out.insert("tagger.head".into(), self.head.to_string());
        out.insert("tagger.constrained".into(), self.constrained.to_string());
        out.insert(
            "tagger.freeze_embeddings".into(),
            self.freeze_embeddings.to_string(),
        );
        if let Some(lm) = &self.lm {
            let mut inner = BTreeMap::new();
            lm.to_kv(&mut inner);
            out.extend(inner.into_iter().map(|(k, v)| (format!("bilm.{k}"), v)));
        }
    }

    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| {
            kv.get(k)
                .ok_or_else(|| Error::Checkpoint(format!("missing architecture key `{k}`")))
        };
        let flag = |k: &str| -> Result<bool> {
            get(k)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("`{k}` must be true or false")))
        };
        let lm_keys: BTreeMap<String, String> = kv
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("bilm.").map(|k| (k.to_string(), v.clone())))
            .collect();
        let arch = Self {
            d_word: parse_usize(get("tagger.d_word")?)?,
            hidden: parse_usize(get("tagger.hidden")?)?,
            layers: parse_usize(get("tagger.layers")?)?,
            head: get("tagger.head")?.parse()?,
            constrained: flag("tagger.constrained")?,
            freeze_embeddings: flag("tagger.freeze_embeddings")?,
            lm: if lm_keys.is_empty() {
                None
            } else {
                Some(BiLmConfig::from_kv(&lm_keys)?)
            },
        };
        arch.validate()?;
        Ok(arch)
    }
}

/// Fresh parameters for `arch`.
pub(crate) fn init_tagger_params(
    arch: &TaggerArch,
    words: usize,
    labels: usize,
    lm_chars: usize,
    seed: u64,
) -> Result<ParamStore> {
    arch.validate()?;
    let mut store = ParamStore::new();
    let e = "embed.weight";
    store.insert(
        e,
        seeded_init(
            &[words, arch.d_word],
            InitScheme::UniformGlorot,
            param_seed(seed, e),
        )?,
    );
    if let Some(lm) = &arch.lm {
        init_bilm_params(&mut store, "bilm.", lm, None, lm_chars, seed)?;
    }
    for l in 0..arch.layers {
        let input = if l == 0 {
            arch.input_dim()
        } else {
            2 * arch.hidden
        };
        nn::init_lstm(
            &mut store,
            &format!("lstm.{l}.fwd"),
            input,
            arch.hidden,
            seed,
        )?;
        nn::init_lstm(
            &mut store,
            &format!("lstm.{l}.bwd"),
            input,
            arch.hidden,
            seed,
        )?;
    }
    nn::init_linear(&mut store, "emission", labels, 2 * arch.hidden, seed)?;
    if arch.head == Head::Crf {
        store.insert("crf.transitions", Tensor::zeros(&[labels + 2, labels + 2]));
    }
    Ok(store)
}

/// A tagger with its vocabularies and label inventory.
#[derive(Clone, Debug)]
pub struct Tagger {
    pub arch: TaggerArch,
    pub words: Vocabulary,
    pub labels: LabelSet,
    /// Character vocabulary of the attached language model.
    pub lm_chars: Option<Vocabulary>,
    pub params: ParamStore,
    pub provenance: Vec<String>,
    pub metrics: Vec<String>,
}

impl Tagger {
    /// Randomly initialized tagger. When `lm` is given it becomes the
    /// contextual provider (its softmax head is not carried over) and
    /// `arch.lm` is set from it.
    pub fn new(
        mut arch: TaggerArch,
        words: Vocabulary,
        labels: LabelSet,
        lm: Option<&BiLm>,
        seed: u64,
    ) -> Result<Self> {
        arch.lm = lm.map(|m| m.config.clone());
        let lm_chars = lm.map(|m| m.chars.clone());
        let mut params = init_tagger_params(
            &arch,
            words.len(),
            labels.len(),
            lm_chars.as_ref().map_or(0, Vocabulary::len),
            seed,
        )?;
        let mut provenance = vec![format!("init=random seed={seed}")];
        if let Some(m) = lm {
            m.validate()?;
            for (name, t) in m.params.iter().filter(|(n, _)| !n.starts_with("softmax.")) {
                params.insert(format!("bilm.{name}"), t.clone());
            }
            provenance.push("attached contextual language model".into());
            provenance.extend(m.provenance.iter().map(|p| format!("lm: {p}")));
        }
        Ok(Self {
            arch,
            words,
            labels,
            lm_chars,
            params,
            provenance,
            metrics: Vec::new(),
        })
    }

    /// Replaces the word embedding matrix (e.g. with loaded vectors).
    pub fn set_embeddings(&mut self, matrix: Tensor) -> Result<()> {
        let expected = [self.words.len(), self.arch.d_word];
        if matrix.shape() != expected {
            return Err(contract(format!(
                "embedding matrix {:?} does not match {expected:?}",
                matrix.shape()
            )));
        }
        self.params.insert("embed.weight", matrix);
        Ok(())
    }

    /// Checks every parameter's presence and shape.
    pub fn validate(&self) -> Result<()> {
        let expected = init_tagger_params(
            &self.arch,
            self.words.len(),
            self.labels.len(),
            self.lm_chars.as_ref().map_or(0, Vocabulary::len),
            0,
        )?;
        let problems = crate::bilm::shape_mismatches(&expected, &self.params);
        if !problems.is_empty() {
            return Err(Error::Checkpoint(format!(
                "tagger parameters do not match: {}",
                problems.join(", ")
            )));
        }
        if self.arch.lm.is_some() != self.lm_chars.is_some() {
            return Err(Error::Checkpoint(
                "contextual provider and its character vocabulary disagree".into(),
            ));
        }
        Ok(())
    }

    fn constrained(&self) -> bool {
        self.arch.head == Head::Crf
            && self.arch.constrained
            && self.labels.scheme() == LabelScheme::Bio
    }

    /// Transition scores as used for decoding, with forbidden entries
    /// applied. `None` for a softmax head.
    pub fn transitions(&self) -> Option<Tensor> {
        let mut t = self.params.get("crf.transitions")?.clone();
        if self.constrained() {
            for (v, keep) in t.data_mut().iter_mut().zip(self.labels.transition_mask()) {
                if !keep {
                    *v = FORBIDDEN;
                }
            }
        }
        Some(t)
    }

    fn inputs<S: AsRef<[String]>>(&self, sentences: &[S]) -> Result<TagInputs> {
        let word_ids = sentences
            .iter()
            .map(|s| s.as_ref().iter().map(|w| self.words.id(w)).collect())
            .collect();
        let lm_chars = match (&self.arch.lm, &self.lm_chars) {
            (Some(cfg), Some(chars)) => Some(
                sentences
                    .iter()
                    .map(|s| {
                        s.as_ref()
                            .iter()
                            .map(|w| Ok(char_ids(w, chars, cfg.encoder.max_word_len)?.ids))
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
            _ => None,
        };
        Ok(TagInputs { word_ids, lm_chars })
    }
}

/// Dropout behaviour of an emission pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { dropout_seed: u64 },
}

pub(crate) struct TagInputs {
    word_ids: Vec<Vec<usize>>,
    lm_chars: Option<Vec<Vec<Vec<usize>>>>,
}

/// Records emission scores for a batch as a `[T * B, labels]` position matrix.
pub(crate) fn emissions_on_tape(
    tape: &mut Tape,
    arch: &TaggerArch,
    store: &ParamStore,
    inputs: &TagInputs,
    mode: Mode,
    dropout: f64,
) -> Result<(Var, SeqLayout)> {
    let layout = SeqLayout::new(inputs.word_ids.iter().map(Vec::len).collect());
    if layout.batch() == 0 || layout.lengths.contains(&0) {
        return Err(contract("tagger input needs non-empty sentences"));
    }
    let scope = Scope::new(store, "");
    let mut ids = vec![0usize; layout.rows()];
    for (b, sent) in inputs.word_ids.iter().enumerate() {
        for (t, &id) in sent.iter().enumerate() {
            ids[layout.row(b, t)] = id;
        }
    }
    let table = scope.var(tape, "embed.weight")?;
    if let Some(&bad) = ids.iter().find(|&&i| i >= tape.value(table).rows()) {
        return Err(contract(format!(
            "word id {bad} outside the embedding table"
        )));
    }
    let mut x = tape.gather_rows(table, &ids);
    if let (Some(cfg), Some(chars)) = (&arch.lm, &inputs.lm_chars) {
        let (fwd, bwd, _) = lm_stacks(tape, &scope.child("bilm."), cfg, chars)?;
        let mut ctx = tape.concat_cols(&[fwd, bwd]);
        if let Mode::Train { dropout_seed } = mode {
            if dropout > 0.0 {
                let mask = nn::dropout_mask(tape.value(ctx).shape(), dropout, dropout_seed);
                let mask = tape.constant(mask);
                ctx = tape.mul(ctx, mask);
            }
        }
        x = tape.concat_cols(&[x, ctx]);
    }
    let mut out = x;
    for l in 0..arch.layers {
        let input = nn::append_zero_row(tape, out);
        let f = nn::lstm_direction(
            tape,
            &scope,
            &format!("lstm.{l}.fwd"),
            input,
            &layout,
            false,
        )?;
        let b = nn::lstm_direction(tape, &scope, &format!("lstm.{l}.bwd"), input, &layout, true)?;
        out = tape.concat_cols(&[f, b]);
    }
    let emissions = nn::linear(tape, &scope, "emission", out)?;
    Ok((emissions, layout))
}

/// Per-token label scores `[len, labels]` for one sentence.
pub fn tagger_emissions<S: AsRef<str>>(
    sentence: &[S],
    tagger: &Tagger,
    mode: Mode,
) -> Result<Tensor> {
    let tokens: Vec<String> = sentence.iter().map(|s| s.as_ref().to_string()).collect();
    let inputs = tagger.inputs(&[tokens])?;
    let mut tape = Tape::new();
    let (e, _) = emissions_on_tape(&mut tape, &tagger.arch, &tagger.params, &inputs, mode, 0.5)?;
    Ok(tape.value(e).clone())
}

/// Tags sentences with Viterbi (CRF head) or per-token argmax (softmax).
pub fn predict<S: AsRef<[String]>>(
    sentences: &[S],
    tagger: &Tagger,
) -> Result<Vec<LabeledSequence>> {
    let mut out = Vec::with_capacity(sentences.len());
    let transitions = tagger.transitions();
    let nonempty: Vec<&S> = sentences
        .iter()
        .filter(|s| !s.as_ref().is_empty())
        .collect();
    let mut decoded = Vec::with_capacity(nonempty.len());
    for chunk in nonempty.chunks(32) {
        let inputs = tagger.inputs(chunk)?;
        let mut tape = Tape::new();
        let (e, layout) = emissions_on_tape(
            &mut tape,
            &tagger.arch,
            &tagger.params,
            &inputs,
            Mode::Eval,
            0.0,
        )?;
        let all = tape.value(e);
        for b in 0..layout.batch() {
            let rows: Vec<f64> = layout
                .sequence_rows(b)
                .into_iter()
                .flat_map(|r| all.row(r).to_vec())
                .collect();
            let em = Tensor::new(vec![layout.lengths[b], all.cols()], rows)?;
            let path = match &transitions {
                Some(t) => viterbi_decode(&em, t)?,
                None => (0..em.rows()).map(|k| argmax(em.row(k))).collect(),
            };
            decoded.push(path);
        }
    }
    let mut decoded = decoded.into_iter();
    for s in sentences {
        let tokens = s.as_ref().to_vec();
        let tags = if tokens.is_empty() {
            Vec::new()
        } else {
            decoded
                .next()
                .expect("one path per sentence")
                .iter()
                .map(|&y| tagger.labels.label(y).to_string())
                .collect()
        };
        out.push(LabeledSequence { tokens, tags });
    }
    Ok(out)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Training settings for [`train_tagger`].
#[derive(Clone, Debug, PartialEq)]
pub struct TaggerTrainConfig {
    pub epochs: usize,
    /// Early-stopping patience in epochs; only used with a validation set.
    pub patience: Option<usize>,
    /// Stop as soon as the validation score reaches this value.
    pub target_score: Option<f64>,
    pub batch_size: usize,
    pub lr: f64,
    pub clip: f64,
    /// Dropout rate on the contextual representation.
    pub dropout: f64,
    /// Probability of replacing a training singleton with `UNK`.
    pub unk_replace: f64,
    /// Squared-distance penalty toward the attached LM's starting weights.
    pub l2_anchor: f64,
    pub seed: u64,
}

impl Default for TaggerTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            patience: None,
            target_score: None,
            batch_size: 32,
            lr: 0.001,
            clip: 5.0,
            dropout: 0.5,
            unk_replace: 0.1,
            l2_anchor: 0.0,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaggerEpoch {
    pub epoch: usize,
    /// Mean loss per sentence over the epoch.
    pub train_loss: f64,
    /// Span F1 (BIO labels) or token accuracy (raw labels), in percent.
    pub dev_score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaggerTrainReport {
    pub epochs: Vec<TaggerEpoch>,
    /// Epoch whose parameters were kept, when validating.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

/// Validation score in percent: micro span F1 for BIO labels, token
/// accuracy otherwise.
pub fn validation_score(tagger: &Tagger, gold: &[LabeledSequence]) -> Result<f64> {
    let pred = predict(gold, tagger)?;
    match tagger.labels.scheme() {
        LabelScheme::Bio => Ok(span_f1(gold, &pred)?.micro.f1()),
        LabelScheme::Raw => {
            let (mut hit, mut total) = (0usize, 0usize);
            for (g, p) in gold.iter().zip(&pred) {
                hit += g.tags.iter().zip(&p.tags).filter(|(a, b)| a == b).count();
                total += g.len();
            }
            Ok(if total == 0 {
                0.0
            } else {
                100.0 * hit as f64 / total as f64
            })
        }
    }
}

fn label_ids(tagger: &Tagger, data: &[LabeledSequence]) -> Result<Vec<Vec<usize>>> {
    data.iter()
        .enumerate()
        .map(|(i, s)| {
            if s.is_empty() {
                return Err(Error::Data(format!("sentence {i} is empty")));
            }
            if tagger.labels.scheme() == LabelScheme::Bio {
                validate_bio(&s.tags).map_err(|e| Error::Data(format!("sentence {i}: {e}")))?;
            }
            s.tags
                .iter()
                .map(|t| {
                    tagger
                        .labels
                        .id(t)
                        .ok_or_else(|| Error::Data(format!("sentence {i}: unknown label `{t}`")))
                })
                .collect()
        })
        .collect()
}

/// Trains `tagger` on `train`, optionally validating on `dev` after every
/// epoch for early stopping; the best validated parameters are kept.
pub fn train_tagger(
    mut tagger: Tagger,
    train: &[LabeledSequence],
    dev: Option<&[LabeledSequence]>,
    config: &TaggerTrainConfig,
) -> Result<(Tagger, TaggerTrainReport)> {
    tagger.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if config.batch_size == 0 || !(config.lr > 0.0) || !(0.0..1.0).contains(&config.dropout) {
        return Err(Error::Config(
            "batch size and learning rate must be positive, dropout in [0, 1)".into(),
        ));
    }
    let gold = label_ids(&tagger, train)?;
    if let Some(dev) = dev {
        label_ids(&tagger, dev).map_err(|e| Error::Data(format!("validation set: {e}")))?;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in train {
        for w in &s.tokens {
            *counts.entry(w.as_str()).or_default() += 1;
        }
    }
    let base = tagger.inputs(train)?;
    let singleton: Vec<Vec<bool>> = train
        .iter()
        .map(|s| s.tokens.iter().map(|w| counts[w.as_str()] == 1).collect())
        .collect();
    let anchor: ParamStore = tagger
        .params
        .iter()
        .filter(|(n, _)| n.starts_with("bilm."))
        .map(|(n, t)| (n.to_string(), t.clone()))
        .collect();
    let mask = tagger
        .constrained()
        .then(|| tagger.labels.transition_mask());
    let mut adam = AdamState::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    });

    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut stopped_early = false;
    for epoch in 1..=config.epochs {
        let mut rng =
            ChaCha8Rng::seed_from_u64(param_seed(config.seed, &format!("tagger-epoch{epoch}")));
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let word_ids = chunk
                .iter()
                .map(|&i| {
                    base.word_ids[i]
                        .iter()
                        .zip(&singleton[i])
                        .map(|(&id, &single)| {
                            if single && rng.gen::<f64>() < config.unk_replace {
                                crate::corpus::vocab::UNK
                            } else {
                                id
                            }
                        })
                        .collect()
                })
                .collect();
            let lm_chars = base
                .lm_chars
                .as_ref()
                .map(|c| chunk.iter().map(|&i| c[i].clone()).collect());
            let inputs = TagInputs { word_ids, lm_chars };
            let mode = Mode::Train {
                dropout_seed: rng.gen(),
            };

            let mut tape = Tape::new();
            let (em, layout) = emissions_on_tape(
                &mut tape,
                &tagger.arch,
                &tagger.params,
                &inputs,
                mode,
                config.dropout,
            )?;
            let nll = match tagger.arch.head {
                Head::Crf => {
                    let mut trans = tape.param(&tagger.params, "crf.transitions")?;
                    if let Some(mask) = &mask {
                        trans = tape.masked_fill(trans, mask, FORBIDDEN);
                    }
                    let rows: Vec<Vec<usize>> = (0..layout.batch())
                        .map(|b| layout.sequence_rows(b))
                        .collect();
                    let targets: Vec<CrfTarget<'_>> = chunk
                        .iter()
                        .zip(&rows)
                        .map(|(&i, r)| CrfTarget {
                            rows: r,
                            tags: &gold[i],
                        })
                        .collect();
                    crf_nll_on_tape(&mut tape, em, trans, &targets)?
                }
                Head::Softmax => {
                    let mut targets = vec![None; layout.rows()];
                    for (b, &i) in chunk.iter().enumerate() {
                        for (t, &y) in gold[i].iter().enumerate() {
                            targets[layout.row(b, t)] = Some(y);
                        }
                    }
                    tape.softmax_cross_entropy(em, &targets)
                }
            };
            let loss = tape.scale(nll, 1.0 / chunk.len() as f64);
            let mut grads = tape.backward(loss)?;
            if tagger.arch.freeze_embeddings {
                grads.remove("embed.weight");
            }
            nn::add_l2_anchor(&mut grads, &tagger.params, &anchor, config.l2_anchor);
            let norm = nn::clipped_step(&mut tagger.params, grads, &mut adam, config.clip)?;
            let value = tape.value(loss).item();
            debug!(
                "tagger step={} loss={value:.6} grad_norm={norm:.4}",
                adam.step()
            );
            loss_sum += value * chunk.len() as f64;
        }
        let train_loss = loss_sum / train.len() as f64;
        let dev_score = dev.map(|d| validation_score(&tagger, d)).transpose()?;
        let mut line = format!("epoch={epoch} train_loss={train_loss:.6}");
        if let Some(s) = dev_score {
            line.push_str(&format!(" dev_score={s:.2}"));
        }
        info!("tagger {line}");
        tagger.metrics.push(line);
        epochs.push(TaggerEpoch {
            epoch,
            train_loss,
            dev_score,
        });

        if let Some(score) = dev_score {
            if best.as_ref().is_none_or(|(_, b, _)| score > *b) {
                best = Some((epoch, score, tagger.params.clone()));
            }
            let best_epoch = best.as_ref().map_or(epoch, |b| b.0);
            if config.target_score.is_some_and(|t| score >= t) {
                stopped_early = epoch < config.epochs;
                break;
            }
            if config.patience.is_some_and(|p| epoch - best_epoch >= p) {
                stopped_early = epoch < config.epochs;
                break;
            }
        }
    }
    let best_epoch = best.as_ref().map(|b| b.0);
    if let Some((epoch, score, params)) = best {
        tagger.params = params;
        tagger
            .metrics
            .push(format!("best_epoch={epoch} best_dev_score={score:.2}"));
    }
    tagger.provenance.push(format!(
        "trained epochs={} seed={}",
        epochs.len(),
        config.seed
    ));
    Ok((
        tagger,
        TaggerTrainReport {
            epochs,
            best_epoch,
            stopped_early,
        },
    ))
}
