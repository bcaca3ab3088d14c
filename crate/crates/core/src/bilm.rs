//! Bidirectional language model over character-encoded words.
//!
//! A shared character encoder feeds a forward and a backward LSTM stack;
//! each layer projects its hidden state back to the encoder width. Both
//! directions predict words through one shared softmax head.

use std::collections::{BTreeMap, HashMap};

use log::{debug, info};

use crate::corpus::{lm_batches, lm_batches_sequential, LmBatch, Vocabulary};
use crate::encoder::{self, char_ids, parse_usize, CharEncoderConfig};
use crate::error::{contract, Error, Result};
use crate::nn::{self, Scope, SeqLayout};
use crate::numerics::{
    param_seed, seeded_init, AdamConfig, AdamState, InitScheme, ParamStore, Tape, Tensor, Var,
};

/// Architecture of a [`BiLm`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BiLmConfig {
    pub encoder: CharEncoderConfig,
    pub layers: usize,
    /// LSTM hidden size per direction.
    pub hidden: usize,
}

impl Default for BiLmConfig {
    fn default() -> Self {
        Self {
            encoder: CharEncoderConfig::default(),
            layers: 1,
            hidden: 128,
        }
    }
}

impl BiLmConfig {
    /// Width of each direction's output (the encoder output width).
    pub fn output_dim(&self) -> usize {
        self.encoder.output_dim
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.layers == 0 || self.hidden == 0 {
            return Err(Error::Config(
                "LM layers and hidden size must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn to_kv(&self, out: &mut BTreeMap<String, String>) {
        self.encoder.to_kv("encoder.", out);
        out.insert("lm.layers".into(), self.layers.to_string());
        out.insert("lm.hidden".into(), self.hidden.to_string());
    }

    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| {
            kv.get(k)
                .ok_or_else(|| Error::Checkpoint(format!("missing architecture key `{k}`")))
        };
        let config = Self {
            encoder: CharEncoderConfig::from_kv("encoder.", kv)?,
            layers: parse_usize(get("lm.layers")?)?,
            hidden: parse_usize(get("lm.hidden")?)?,
        };
        config.validate()?;
        Ok(config)
    }
}

/// A language model together with the vocabularies it was built for.
#[derive(Clone, Debug)]
pub struct BiLm {
    pub config: BiLmConfig,
    pub words: Vocabulary,
    pub chars: Vocabulary,
    pub params: ParamStore,
    /// Free-form lines describing where the weights came from.
    pub provenance: Vec<String>,
    /// Per-epoch `key=value` metric lines.
    pub metrics: Vec<String>,
}

/// Fresh LM parameters under `prefix`. The softmax head, created when a
/// word vocabulary size is given, starts at zero so the untrained model
/// predicts the uniform distribution.
pub(crate) fn init_bilm_params(
    store: &mut ParamStore,
    prefix: &str,
    config: &BiLmConfig,
    word_vocab: Option<usize>,
    char_vocab: usize,
    seed: u64,
) -> Result<()> {
    config.validate()?;
    encoder::init_encoder(
        store,
        &format!("{prefix}encoder."),
        &config.encoder,
        char_vocab,
        seed,
    )?;
    let d = config.output_dim();
    for dir in ["fwd", "bwd"] {
        for l in 0..config.layers {
            let name = format!("{prefix}{dir}.{l}");
            nn::init_lstm(store, &name, d, config.hidden, seed)?;
            nn::init_linear(store, &format!("{name}.proj"), d, config.hidden, seed)?;
        }
    }
    if let Some(v) = word_vocab {
        store.insert(format!("{prefix}softmax.weight"), Tensor::zeros(&[v, d]));
        store.insert(format!("{prefix}softmax.bias"), Tensor::zeros(&[v]));
    }
    Ok(())
}

/// Top-layer outputs of both directions as `[T * B, d_out]` position
/// matrices, for sentences given as per-token character ids.
pub(crate) fn lm_stacks(
    tape: &mut Tape,
    scope: &Scope<'_>,
    config: &BiLmConfig,
    sentences: &[Vec<Vec<usize>>],
) -> Result<(Var, Var, SeqLayout)> {
    let layout = SeqLayout::new(sentences.iter().map(Vec::len).collect());
    if layout.batch() == 0 || layout.lengths.contains(&0) {
        return Err(contract("language model input needs non-empty sentences"));
    }
    // Encode each distinct word once and scatter into position rows.
    let mut distinct: Vec<&[usize]> = Vec::new();
    let mut seen: HashMap<&[usize], usize> = HashMap::new();
    let mut index = vec![usize::MAX; layout.rows() + 1];
    for (b, sent) in sentences.iter().enumerate() {
        for (t, ids) in sent.iter().enumerate() {
            let next = distinct.len();
            let id = *seen.entry(ids.as_slice()).or_insert(next);
            if id == next {
                distinct.push(ids);
            }
            index[layout.row(b, t)] = id;
        }
    }
    let zero = distinct.len();
    index
        .iter_mut()
        .filter(|i| **i == usize::MAX)
        .for_each(|i| *i = zero);

    let encoded =
        encoder::encode_on_tape(tape, &scope.child("encoder."), &config.encoder, &distinct)?;
    let encoded = nn::append_zero_row(tape, encoded);
    let inputs = tape.gather_rows(encoded, &index);

    let mut tops = Vec::with_capacity(2);
    for (dir, reverse) in [("fwd", false), ("bwd", true)] {
        let mut x = inputs;
        let mut out = x;
        for l in 0..config.layers {
            let name = format!("{dir}.{l}");
            let h = nn::lstm_direction(tape, scope, &name, x, &layout, reverse)?;
            out = nn::linear(tape, scope, &format!("{name}.proj"), h)?;
            x = nn::append_zero_row(tape, out);
        }
        tops.push(out);
    }
    Ok((tops[0], tops[1], layout))
}

/// Both halves of the LM objective, each averaged over unmasked positions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmLoss {
    pub forward: f64,
    pub backward: f64,
    pub positions: usize,
}

impl LmLoss {
    /// Negative joint log-likelihood: forward plus backward mean NLL.
    pub fn total(&self) -> f64 {
        self.forward + self.backward
    }

    /// Mean NLL per token and direction; `ln |V|` for a uniform model.
    pub fn per_token(&self) -> f64 {
        self.total() / 2.0
    }
}

fn batch_chars(batch: &LmBatch) -> Vec<Vec<Vec<usize>>> {
    batch
        .char_ids
        .iter()
        .zip(batch.lengths())
        .map(|(row, n)| row[..n].to_vec())
        .collect()
}

/// Records the loss; returns the forward and backward mean NLL nodes.
pub(crate) fn loss_on_tape(
    tape: &mut Tape,
    scope: &Scope<'_>,
    config: &BiLmConfig,
    batch: &LmBatch,
) -> Result<(Var, Var, usize)> {
    let n = batch.token_count();
    if batch.batch_size() == 0 || n == 0 {
        return Err(contract("empty LM batch"));
    }
    let (fwd, bwd, layout) = lm_stacks(tape, scope, config, &batch_chars(batch))?;
    let vocab = scope.tensor("softmax.weight")?.rows();
    let mut halves = Vec::with_capacity(2);
    for (top, targets) in [
        (fwd, &batch.forward_targets),
        (bwd, &batch.backward_targets),
    ] {
        let mut rows = Vec::with_capacity(n);
        let mut gold = Vec::with_capacity(n);
        for b in 0..layout.batch() {
            for t in 0..layout.lengths[b] {
                let target = targets[b][t];
                if target >= vocab {
                    return Err(contract(format!(
                        "target id {target} outside vocabulary of {vocab}"
                    )));
                }
                rows.push(layout.row(b, t));
                gold.push(Some(target));
            }
        }
        let real = tape.gather_rows(top, &rows);
        let logits = nn::linear(tape, scope, "softmax", real)?;
        let nll = tape.softmax_cross_entropy(logits, &gold);
        halves.push(tape.scale(nll, 1.0 / n as f64));
    }
    Ok((halves[0], halves[1], n))
}

/// LM objective on one batch.
pub fn bilm_loss(batch: &LmBatch, model: &BiLm) -> Result<LmLoss> {
    let mut tape = Tape::new();
    let (f, b, n) = loss_on_tape(
        &mut tape,
        &Scope::new(&model.params, ""),
        &model.config,
        batch,
    )?;
    Ok(LmLoss {
        forward: tape.value(f).item(),
        backward: tape.value(b).item(),
        positions: n,
    })
}

impl BiLm {
    /// Randomly initialized model with a zero softmax head.
    pub fn new(
        config: BiLmConfig,
        words: Vocabulary,
        chars: Vocabulary,
        seed: u64,
    ) -> Result<Self> {
        let mut params = ParamStore::new();
        init_bilm_params(
            &mut params,
            "",
            &config,
            Some(words.len()),
            chars.len(),
            seed,
        )?;
        Ok(Self {
            config,
            words,
            chars,
            params,
            provenance: vec![format!("init=random seed={seed}")],
            metrics: Vec::new(),
        })
    }

    /// Checks that every expected parameter exists with the expected shape.
    pub fn validate(&self) -> Result<()> {
        let mut expected = ParamStore::new();
        init_bilm_params(
            &mut expected,
            "",
            &self.config,
            Some(self.words.len()),
            self.chars.len(),
            0,
        )?;
        let problems = shape_mismatches(&expected, &self.params);
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Transfer(format!(
                "language model parameters do not match: {}",
                problems.join(", ")
            )))
        }
    }

    /// Character ids of a sentence under this model's char vocabulary.
    pub fn sentence_chars<S: AsRef<str>>(&self, sentence: &[S]) -> Result<Vec<Vec<usize>>> {
        sentence
            .iter()
            .map(|w| Ok(char_ids(w.as_ref(), &self.chars, self.config.encoder.max_word_len)?.ids))
            .collect()
    }
}

/// Names of parameters that are missing, unexpected or differently shaped.
pub(crate) fn shape_mismatches(expected: &ParamStore, actual: &ParamStore) -> Vec<String> {
    let mut out = Vec::new();
    for (name, t) in expected.iter() {
        match actual.get(name) {
            None => out.push(format!("{name} (missing)")),
            Some(a) if a.shape() != t.shape() => out.push(format!(
                "{name} (expected {:?}, found {:?})",
                t.shape(),
                a.shape()
            )),
            _ => {}
        }
    }
    for name in actual.names() {
        if !expected.contains(name) {
            out.push(format!("{name} (unexpected)"));
        }
    }
    out
}

/// Last-layer forward and backward outputs per token, concatenated:
/// `[len, 2 * d_out]`.
pub fn contextual_repr<S: AsRef<str>>(sentence: &[S], model: &BiLm) -> Result<Tensor> {
    if sentence.is_empty() {
        return Err(contract("contextual representation of an empty sentence"));
    }
    let mut tape = Tape::new();
    let chars = vec![model.sentence_chars(sentence)?];
    let (fwd, bwd, _) = lm_stacks(
        &mut tape,
        &Scope::new(&model.params, ""),
        &model.config,
        &chars,
    )?;
    let both = tape.concat_cols(&[fwd, bwd]);
    Ok(tape.value(both).clone())
}

/// Summed forward and backward NLL with the token count over a corpus.
fn corpus_nll(
    corpus: &[Vec<String>],
    model: &BiLm,
    batch_size: usize,
) -> Result<(f64, f64, usize)> {
    let batches = lm_batches_sequential(
        corpus,
        &model.words,
        &model.chars,
        batch_size,
        model.config.encoder.max_word_len,
    )?;
    let (mut f, mut b, mut n) = (0.0, 0.0, 0);
    for batch in &batches {
        let loss = bilm_loss(batch, model)?;
        f += loss.forward * loss.positions as f64;
        b += loss.backward * loss.positions as f64;
        n += loss.positions;
    }
    if n == 0 {
        return Err(contract("corpus has no tokens"));
    }
    Ok((f, b, n))
}

/// Mean per-token loss (averaged over directions) on a corpus.
pub fn corpus_loss(corpus: &[Vec<String>], model: &BiLm) -> Result<f64> {
    let (f, b, n) = corpus_nll(corpus, model, 32)?;
    Ok((f + b) / (2.0 * n as f64))
}

/// `exp` of the mean per-token NLL, averaged over the two directions.
pub fn perplexity(corpus: &[Vec<String>], model: &BiLm) -> Result<f64> {
    Ok(corpus_loss(corpus, model)?.exp())
}

/// Optimization settings for [`train_lm`].
#[derive(Clone, Debug, PartialEq)]
pub struct LmTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip: f64,
    /// Coefficient of the squared-distance penalty toward the initial
    /// weights; only used when training starts from an existing model.
    pub l2_anchor: f64,
    pub seed: u64,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            lr: 0.001,
            clip: 5.0,
            l2_anchor: 0.0,
            seed: 1,
        }
    }
}

/// One completed LM epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct LmEpoch {
    pub epoch: usize,
    /// Token-weighted mean training loss over the epoch's updates.
    pub train_loss: f64,
    pub perplexity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmTrainReport {
    /// Corpus loss before the first update.
    pub initial_loss: f64,
    /// Corpus loss after the last update.
    pub final_loss: f64,
    pub epochs: Vec<LmEpoch>,
}

/// Trains a language model on `corpus`.
///
/// Without `init` a fresh model is built from `arch` and `seed`. With
/// `init`, its weights are the starting point; its architecture and
/// vocabularies must match, otherwise a transfer error lists the
/// offending parameters.
pub fn train_lm(
    corpus: &[Vec<String>],
    words: &Vocabulary,
    chars: &Vocabulary,
    arch: &BiLmConfig,
    config: &LmTrainConfig,
    init: Option<&BiLm>,
) -> Result<(BiLm, LmTrainReport)> {
    if corpus.iter().all(Vec::is_empty) {
        return Err(Error::Data("language model corpus is empty".into()));
    }
    if config.batch_size == 0 || !(config.lr > 0.0) {
        return Err(Error::Config(
            "batch size and learning rate must be positive".into(),
        ));
    }
    let mut model = match init {
        None => BiLm::new(arch.clone(), words.clone(), chars.clone(), config.seed)?,
        Some(init) => {
            let mut expected = ParamStore::new();
            init_bilm_params(&mut expected, "", arch, Some(words.len()), chars.len(), 0)?;
            let mut problems = shape_mismatches(&expected, &init.params);
            if init.config != *arch {
                problems.push("architecture descriptor".into());
            }
            if init.words != *words {
                problems.push("softmax.weight (word vocabulary differs)".into());
            }
            if init.chars != *chars {
                problems.push("encoder.char_embed (character vocabulary differs)".into());
            }
            if !problems.is_empty() {
                return Err(Error::Transfer(format!(
                    "initial model does not match the requested architecture: {}",
                    problems.join(", ")
                )));
            }
            let mut m = init.clone();
            m.provenance.push(format!(
                "continued training seed={} epochs={}",
                config.seed, config.epochs
            ));
            m
        }
    };
    let anchor = init.map(|m| m.params.clone());
    let max_len = arch.encoder.max_word_len;
    let mut adam = AdamState::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    });

    let initial_loss = corpus_loss(corpus, &model)?;
    info!("lm initial_loss={initial_loss:.6}");
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let batches = lm_batches(
            corpus,
            words,
            chars,
            config.batch_size,
            max_len,
            param_seed(config.seed, &format!("epoch{epoch}")),
        )?;
        let (mut sum, mut count) = (0.0, 0usize);
        for batch in &batches {
            let mut tape = Tape::new();
            let (f, b, n) = loss_on_tape(&mut tape, &Scope::new(&model.params, ""), arch, batch)?;
            let total = tape.add(f, b);
            let mut grads = tape.backward(total)?;
            if let Some(anchor) = &anchor {
                nn::add_l2_anchor(&mut grads, &model.params, anchor, config.l2_anchor);
            }
            let norm = nn::clipped_step(&mut model.params, grads, &mut adam, config.clip)?;
            let value = tape.value(total).item() / 2.0;
            debug!(
                "lm step={} loss={value:.6} grad_norm={norm:.4}",
                adam.step()
            );
            sum += value * n as f64;
            count += n;
        }
        let train_loss = sum / count as f64;
        let ppl = train_loss.exp();
        info!("lm epoch={epoch} train_loss={train_loss:.6} perplexity={ppl:.4}");
        model.metrics.push(format!(
            "epoch={epoch} train_loss={train_loss:.6} perplexity={ppl:.6}"
        ));
        epochs.push(LmEpoch {
            epoch,
            train_loss,
            perplexity: ppl,
        });
    }
    let final_loss = corpus_loss(corpus, &model)?;
    model.metrics.push(format!(
        "initial_loss={initial_loss:.6} final_loss={final_loss:.6}"
    ));
    Ok((
        model,
        LmTrainReport {
            initial_loss,
            final_loss,
            epochs,
        },
    ))
}

/// Swaps the softmax head for a freshly initialized one sized for
/// `target_words`; every other parameter is copied unchanged.
pub fn replace_vocab_head(src: &BiLm, target_words: Vocabulary, seed: u64) -> Result<BiLm> {
    src.validate()?;
    let d = src.config.output_dim();
    let mut params = src.params.clone();
    let w = "softmax.weight";
    params.insert(
        w,
        seeded_init(
            &[target_words.len(), d],
            InitScheme::UniformGlorot,
            param_seed(seed, w),
        )?,
    );
    params.insert("softmax.bias", Tensor::zeros(&[target_words.len()]));
    let mut provenance = src.provenance.clone();
    provenance.push(format!(
        "replaced_head source_vocab={} target_vocab={} params=softmax.weight,softmax.bias seed={seed}",
        src.words.len(),
        target_words.len()
    ));
    Ok(BiLm {
        config: src.config.clone(),
        words: target_words,
        chars: src.chars.clone(),
        params,
        provenance,
        metrics: Vec::new(),
    })
}
