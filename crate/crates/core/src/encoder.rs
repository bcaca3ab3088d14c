//! Character-level word encoder: character embeddings, a bank of
//! convolutions of several widths with max-over-time pooling, highway
//! layers and a linear projection. One vector per word, independent of
//! context.

use std::collections::BTreeMap;

use crate::corpus::vocab::{BOW, EOW, PAD};
use crate::corpus::Vocabulary;
use crate::error::{contract, Error, Result};
use crate::nn::{self, Scope};
use crate::numerics::{param_seed, seeded_init, InitScheme, ParamStore, Tape, Tensor, Var};

/// Encoder dimensions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CharEncoderConfig {
    pub char_dim: usize,
    pub filter_widths: Vec<usize>,
    pub filter_counts: Vec<usize>,
    pub highway_layers: usize,
    pub output_dim: usize,
    /// Padded character length including the two word-boundary markers.
    pub max_word_len: usize,
}

impl Default for CharEncoderConfig {
    fn default() -> Self {
        Self {
            char_dim: 16,
            filter_widths: vec![1, 2, 3, 4],
            filter_counts: vec![8, 8, 16, 16],
            highway_layers: 2,
            output_dim: 64,
            max_word_len: 20,
        }
    }
}

impl CharEncoderConfig {
    /// Width of the pooled filter concatenation fed to the highway layers.
    pub fn pooled_dim(&self) -> usize {
        self.filter_counts.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.filter_widths.is_empty() || self.filter_widths.len() != self.filter_counts.len() {
            return Err(Error::Config(
                "filter widths and counts must be non-empty and equally long".into(),
            ));
        }
        if self
            .filter_widths
            .iter()
            .chain(&self.filter_counts)
            .any(|&v| v == 0)
        {
            return Err(Error::Config(
                "filter widths and counts must be positive".into(),
            ));
        }
        if self.char_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        let widest = *self.filter_widths.iter().max().unwrap();
        if self.max_word_len < 3 || self.max_word_len < widest {
            return Err(Error::Config(format!(
                "max_word_len {} must be at least 3 and at least the widest filter ({widest})",
                self.max_word_len
            )));
        }
        Ok(())
    }

    pub fn to_kv(&self, prefix: &str, out: &mut BTreeMap<String, String>) {
        out.insert(format!("{prefix}char_dim"), self.char_dim.to_string());
        out.insert(format!("{prefix}filter_widths"), join(&self.filter_widths));
        out.insert(format!("{prefix}filter_counts"), join(&self.filter_counts));
        out.insert(
            format!("{prefix}highway_layers"),
            self.highway_layers.to_string(),
        );
        out.insert(format!("{prefix}output_dim"), self.output_dim.to_string());
        out.insert(
            format!("{prefix}max_word_len"),
            self.max_word_len.to_string(),
        );
    }

    pub fn from_kv(prefix: &str, kv: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| {
            kv.get(&format!("{prefix}{k}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing architecture key `{prefix}{k}`")))
        };
        let config = Self {
            char_dim: parse_usize(get("char_dim")?)?,
            filter_widths: parse_list(get("filter_widths")?)?,
            filter_counts: parse_list(get("filter_counts")?)?,
            highway_layers: parse_usize(get("highway_layers")?)?,
            output_dim: parse_usize(get("output_dim")?)?,
            max_word_len: parse_usize(get("max_word_len")?)?,
        };
        config.validate()?;
        Ok(config)
    }
}

pub(crate) fn join(values: &[usize]) -> String {
    values
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

pub(crate) fn parse_usize(s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("expected a non-negative integer, got `{s}`")))
}

pub(crate) fn parse_list(s: &str) -> Result<Vec<usize>> {
    s.split(',').map(parse_usize).collect()
}

/// A word as padded character ids: `[BOW, c1 … ck, EOW, PAD …]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CharSequence {
    pub word: String,
    pub ids: Vec<usize>,
}

impl CharSequence {
    /// Number of non-padding slots (characters plus both markers).
    pub fn real_len(&self) -> usize {
        real_len(&self.ids)
    }
}

fn real_len(ids: &[usize]) -> usize {
    ids.iter().position(|&i| i == PAD).unwrap_or(ids.len())
}

/// Maps a word to padded character ids; characters beyond `max_len - 2`
/// are dropped from the right and unknown characters become `UNK`.
pub fn char_ids(word: &str, chars: &Vocabulary, max_len: usize) -> Result<CharSequence> {
    if max_len < 3 {
        return Err(contract(format!(
            "max word length {max_len} leaves no room for characters"
        )));
    }
    let mut ids = Vec::with_capacity(max_len);
    ids.push(BOW);
    ids.extend(word.chars().take(max_len - 2).map(|c| chars.char_id(c)));
    ids.push(EOW);
    ids.resize(max_len, PAD);
    Ok(CharSequence {
        word: word.to_string(),
        ids,
    })
}

/// Fresh encoder parameters under `prefix`.
pub fn init_encoder(
    store: &mut ParamStore,
    prefix: &str,
    config: &CharEncoderConfig,
    char_vocab_size: usize,
    seed: u64,
) -> Result<()> {
    config.validate()?;
    let embed = format!("{prefix}char_embed");
    store.insert(
        embed.clone(),
        seeded_init(
            &[char_vocab_size, config.char_dim],
            InitScheme::UniformGlorot,
            param_seed(seed, &embed),
        )?,
    );
    for (j, (&w, &n)) in config
        .filter_widths
        .iter()
        .zip(&config.filter_counts)
        .enumerate()
    {
        nn::init_linear(
            store,
            &format!("{prefix}conv.{j}"),
            n,
            w * config.char_dim,
            seed,
        )?;
    }
    let d = config.pooled_dim();
    for l in 0..config.highway_layers {
        nn::init_linear(store, &format!("{prefix}highway.{l}.transform"), d, d, seed)?;
        nn::init_linear(store, &format!("{prefix}highway.{l}.gate"), d, d, seed)?;
        // Start the gates mostly closed so the layer initially carries its input.
        store.insert(
            format!("{prefix}highway.{l}.gate.bias"),
            Tensor::filled(&[d], -1.0),
        );
    }
    nn::init_linear(store, &format!("{prefix}proj"), config.output_dim, d, seed)?;
    Ok(())
}

/// Parameters of one highway layer.
#[derive(Clone, Debug)]
pub struct HighwayLayer {
    /// `W_T [d, d]`
    pub gate_weight: Tensor,
    /// `b_T [d]`
    pub gate_bias: Tensor,
    /// `W_H [d, d]`
    pub transform_weight: Tensor,
    /// `b_H [d]`
    pub transform_bias: Tensor,
}

impl HighwayLayer {
    pub fn dim(&self) -> usize {
        self.gate_bias.len()
    }

    fn check(&self) -> Result<()> {
        let d = self.dim();
        let square = [d, d];
        if self.gate_weight.shape() != square
            || self.transform_weight.shape() != square
            || self.transform_bias.shape() != [d]
        {
            return Err(contract(
                "highway layer parameters must be square and agree on width",
            ));
        }
        Ok(())
    }
}

pub(crate) fn highway_on_tape(
    tape: &mut Tape,
    x: Var,
    gate_w: Var,
    gate_b: Var,
    tr_w: Var,
    tr_b: Var,
) -> Var {
    let gate_pre = tape.linear(x, gate_w, gate_b);
    let gate = tape.sigmoid(gate_pre);
    let transformed = tape.linear(x, tr_w, tr_b);
    let delta = tape.sub(transformed, x);
    let gated = tape.mul(gate, delta);
    // T ⊙ H + (1 − T) ⊙ x  ==  x + T ⊙ (H − x)
    tape.add(x, gated)
}

/// `T ⊙ (W_H x + b_H) + (1 − T) ⊙ x` with gate `T = σ(W_T x + b_T)`.
pub fn highway_forward(x: &[f64], layer: &HighwayLayer) -> Result<Vec<f64>> {
    layer.check()?;
    if x.len() != layer.dim() {
        return Err(contract(format!(
            "highway input has {} values, layer width is {}",
            x.len(),
            layer.dim()
        )));
    }
    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::new(vec![1, x.len()], x.to_vec())?);
    let gw = tape.constant(layer.gate_weight.clone());
    let gb = tape.constant(layer.gate_bias.clone());
    let tw = tape.constant(layer.transform_weight.clone());
    let tb = tape.constant(layer.transform_bias.clone());
    let out = highway_on_tape(&mut tape, xv, gw, gb, tw, tb);
    Ok(tape.value(out).data().to_vec())
}

/// Records the encoder on a tape for a list of padded character sequences,
/// returning `[words, output_dim]`.
pub(crate) fn encode_on_tape(
    tape: &mut Tape,
    scope: &Scope<'_>,
    config: &CharEncoderConfig,
    words: &[&[usize]],
) -> Result<Var> {
    let len = config.max_word_len;
    if words.is_empty() || words.iter().any(|w| w.len() != len) {
        return Err(contract(format!(
            "character sequences must be padded to {len}"
        )));
    }
    let flat: Vec<usize> = words.iter().flat_map(|w| w.iter().copied()).collect();
    let table = scope.var(tape, "char_embed")?;
    if let Some(&bad) = flat.iter().find(|&&i| i >= tape.value(table).rows()) {
        return Err(contract(format!(
            "character id {bad} outside the embedding table"
        )));
    }
    let embedded = tape.gather_rows(table, &flat);

    let mut pooled = Vec::with_capacity(config.filter_widths.len());
    for (j, &width) in config.filter_widths.iter().enumerate() {
        let windows = tape.unfold(embedded, words.len(), len, width);
        let conv = nn::linear(tape, scope, &format!("conv.{j}"), windows)?;
        let act = tape.tanh(conv);
        // Windows touching padding are excluded; a word shorter than the
        // filter keeps its first (padded) window.
        let valid: Vec<usize> = words
            .iter()
            .map(|w| {
                let real = real_len(w);
                if real >= width {
                    real - width + 1
                } else {
                    1
                }
            })
            .collect();
        pooled.push(tape.masked_max_pool(act, len - width + 1, &valid));
    }
    let mut x = tape.concat_cols(&pooled);
    for l in 0..config.highway_layers {
        let gw = scope.var(tape, &format!("highway.{l}.gate.weight"))?;
        let gb = scope.var(tape, &format!("highway.{l}.gate.bias"))?;
        let tw = scope.var(tape, &format!("highway.{l}.transform.weight"))?;
        let tb = scope.var(tape, &format!("highway.{l}.transform.bias"))?;
        x = highway_on_tape(tape, x, gw, gb, tw, tb);
    }
    nn::linear(tape, scope, "proj", x)
}

/// Standalone encoder: configuration plus its parameters (unprefixed names).
#[derive(Clone, Debug)]
pub struct CharEncoderParams {
    pub config: CharEncoderConfig,
    pub params: ParamStore,
}

impl CharEncoderParams {
    pub fn init(config: CharEncoderConfig, char_vocab_size: usize, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        init_encoder(&mut params, "", &config, char_vocab_size, seed)?;
        Ok(Self { config, params })
    }

    pub fn highway_layer(&self, l: usize) -> Result<HighwayLayer> {
        let get = |k: &str| self.params.require(&format!("highway.{l}.{k}")).cloned();
        Ok(HighwayLayer {
            gate_weight: get("gate.weight")?,
            gate_bias: get("gate.bias")?,
            transform_weight: get("transform.weight")?,
            transform_bias: get("transform.bias")?,
        })
    }
}

/// Encodes a single word; a pure function of its characters and the parameters.
pub fn encode_word(chars: &CharSequence, encoder: &CharEncoderParams) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let out = encode_on_tape(
        &mut tape,
        &Scope::new(&encoder.params, ""),
        &encoder.config,
        &[&chars.ids],
    )?;
    Ok(tape.value(out).data().to_vec())
}
