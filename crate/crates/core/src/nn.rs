//! Layer building blocks shared by the language model and the tagger.

use crate::error::Result;
use crate::numerics::{
    adam_update, param_seed, seeded_init, AdamState, Gradients, InitScheme, ParamStore, Tape,
    Tensor, Var,
};

/// Parameter lookup under a name prefix.
#[derive(Clone)]
pub(crate) struct Scope<'a> {
    store: &'a ParamStore,
    prefix: String,
}

impl<'a> Scope<'a> {
    pub fn new(store: &'a ParamStore, prefix: &str) -> Self {
        Self {
            store,
            prefix: prefix.to_string(),
        }
    }

    pub fn child(&self, sub: &str) -> Scope<'a> {
        Scope {
            store: self.store,
            prefix: format!("{}{sub}", self.prefix),
        }
    }

    pub fn name(&self, local: &str) -> String {
        format!("{}{}", self.prefix, local)
    }

    pub fn var(&self, tape: &mut Tape, local: &str) -> Result<Var> {
        tape.param(self.store, &self.name(local))
    }

    pub fn tensor(&self, local: &str) -> Result<&'a Tensor> {
        self.store.require(&self.name(local))
    }
}

/// Row layout of a padded batch of sequences.
///
/// Position matrices store token `t` of sequence `b` at row `t * B + b`;
/// those fed into a recurrent layer carry one extra all-zero row at
/// index `T * B` used as input for padded steps.
#[derive(Clone, Debug)]
pub(crate) struct SeqLayout {
    pub lengths: Vec<usize>,
    pub width: usize,
}

impl SeqLayout {
    pub fn new(lengths: Vec<usize>) -> Self {
        let width = lengths.iter().copied().max().unwrap_or(0);
        Self { lengths, width }
    }

    pub fn batch(&self) -> usize {
        self.lengths.len()
    }

    pub fn rows(&self) -> usize {
        self.width * self.batch()
    }

    pub fn row(&self, b: usize, t: usize) -> usize {
        t * self.batch() + b
    }

    pub fn zero_row(&self) -> usize {
        self.rows()
    }

    /// Rows of sequence `b` in token order.
    pub fn sequence_rows(&self, b: usize) -> Vec<usize> {
        (0..self.lengths[b]).map(|t| self.row(b, t)).collect()
    }
}

pub(crate) fn append_zero_row(tape: &mut Tape, x: Var) -> Var {
    let cols = tape.value(x).cols();
    let zero = tape.constant(Tensor::zeros(&[1, cols]));
    tape.concat_rows(&[x, zero])
}

pub(crate) fn init_linear(
    store: &mut ParamStore,
    name: &str,
    out_dim: usize,
    in_dim: usize,
    seed: u64,
) -> Result<()> {
    let w = format!("{name}.weight");
    let b = format!("{name}.bias");
    store.insert(
        w.clone(),
        seeded_init(
            &[out_dim, in_dim],
            InitScheme::UniformGlorot,
            param_seed(seed, &w),
        )?,
    );
    store.insert(b, seeded_init(&[out_dim], InitScheme::Zeros, 0)?);
    Ok(())
}

pub(crate) fn linear(tape: &mut Tape, scope: &Scope<'_>, name: &str, x: Var) -> Result<Var> {
    let w = scope.var(tape, &format!("{name}.weight"))?;
    let b = scope.var(tape, &format!("{name}.bias"))?;
    Ok(tape.linear(x, w, b))
}

/// LSTM cell parameters: `{name}.wx [4h, in]`, `{name}.wh [4h, h]`,
/// `{name}.b [4h]`, gates ordered input, forget, candidate, output.
/// The forget-gate bias starts at 1.
pub(crate) fn init_lstm(
    store: &mut ParamStore,
    name: &str,
    in_dim: usize,
    hidden: usize,
    seed: u64,
) -> Result<()> {
    let wx = format!("{name}.wx");
    let wh = format!("{name}.wh");
    store.insert(
        wx.clone(),
        seeded_init(
            &[4 * hidden, in_dim],
            InitScheme::UniformGlorot,
            param_seed(seed, &wx),
        )?,
    );
    store.insert(
        wh.clone(),
        seeded_init(
            &[4 * hidden, hidden],
            InitScheme::UniformGlorot,
            param_seed(seed, &wh),
        )?,
    );
    let mut bias = Tensor::zeros(&[4 * hidden]);
    bias.data_mut()[hidden..2 * hidden]
        .iter_mut()
        .for_each(|v| *v = 1.0);
    store.insert(format!("{name}.b"), bias);
    Ok(())
}

/// One LSTM step on `[B, in]` input rows.
pub(crate) fn lstm_step(
    tape: &mut Tape,
    x_proj: Var,
    h: Var,
    c: Var,
    wh: Var,
    bias: Var,
    hidden: usize,
) -> (Var, Var) {
    let rec = tape.matmul_t(h, wh);
    let pre = tape.add(x_proj, rec);
    let gates = tape.add_bias(pre, bias);
    let i = tape.slice_cols(gates, 0, hidden);
    let i = tape.sigmoid(i);
    let f = tape.slice_cols(gates, hidden, 2 * hidden);
    let f = tape.sigmoid(f);
    let g = tape.slice_cols(gates, 2 * hidden, 3 * hidden);
    let g = tape.tanh(g);
    let o = tape.slice_cols(gates, 3 * hidden, 4 * hidden);
    let o = tape.sigmoid(o);
    let keep = tape.mul(f, c);
    let write = tape.mul(i, g);
    let c_next = tape.add(keep, write);
    let squashed = tape.tanh(c_next);
    let h_next = tape.mul(o, squashed);
    (h_next, c_next)
}

/// Runs one LSTM direction over a position matrix with a trailing zero row
/// and returns hidden states as a `[T * B, h]` position matrix.
///
/// With `reverse`, each sequence is read from its last real token to its
/// first; padding never precedes real tokens in either direction.
pub(crate) fn lstm_direction(
    tape: &mut Tape,
    scope: &Scope<'_>,
    name: &str,
    positions: Var,
    layout: &SeqLayout,
    reverse: bool,
) -> Result<Var> {
    let wx = scope.var(tape, &format!("{name}.wx"))?;
    let wh = scope.var(tape, &format!("{name}.wh"))?;
    let bias = scope.var(tape, &format!("{name}.b"))?;
    let hidden = tape.value(wh).cols();
    let batch = layout.batch();

    let projected = tape.matmul_t(positions, wx);
    let mut h = tape.constant(Tensor::zeros(&[batch, hidden]));
    let mut c = h;
    let mut steps = Vec::with_capacity(layout.width);
    for t in 0..layout.width {
        let idx: Vec<usize> = (0..batch)
            .map(|b| {
                let len = layout.lengths[b];
                match (t < len, reverse) {
                    (false, _) => layout.zero_row(),
                    (true, false) => layout.row(b, t),
                    (true, true) => layout.row(b, len - 1 - t),
                }
            })
            .collect();
        let x_t = tape.gather_rows(projected, &idx);
        let (h_next, c_next) = lstm_step(tape, x_t, h, c, wh, bias, hidden);
        h = h_next;
        c = c_next;
        steps.push(h);
    }
    let by_step = tape.concat_rows(&steps);
    if !reverse {
        return Ok(by_step);
    }
    let idx: Vec<usize> = (0..layout.width)
        .flat_map(|k| (0..batch).map(move |b| (k, b)))
        .map(|(k, b)| {
            let len = layout.lengths[b];
            if k < len {
                layout.row(b, len - 1 - k)
            } else {
                layout.row(b, k)
            }
        })
        .collect();
    Ok(tape.gather_rows(by_step, &idx))
}

/// Inverted dropout mask: kept entries are scaled by `1 / (1 - rate)`.
pub(crate) fn dropout_mask(shape: &[usize], rate: f64, seed: u64) -> Tensor {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 - rate;
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            if rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("mask shape")
}

/// Pulls parameters toward reference values: adds `2c (p - p0)` to the
/// gradient of every parameter present in `anchor`.
pub(crate) fn add_l2_anchor(
    grads: &mut Gradients,
    params: &ParamStore,
    anchor: &ParamStore,
    coef: f64,
) {
    if coef == 0.0 {
        return;
    }
    for (name, p0) in anchor.iter() {
        let (Some(p), Some(g)) = (params.get(name), grads.get(name)) else {
            continue;
        };
        let mut g = g.clone();
        for ((gi, &pi), &p0i) in g.data_mut().iter_mut().zip(p.data()).zip(p0.data()) {
            *gi += 2.0 * coef * (pi - p0i);
        }
        grads.insert(name, g);
    }
}

/// Clips to `clip` global norm, then applies one Adam step.
pub(crate) fn clipped_step(
    store: &mut ParamStore,
    mut grads: Gradients,
    adam: &mut AdamState,
    clip: f64,
) -> Result<f64> {
    let norm = if clip > 0.0 {
        grads.clip_global_norm(clip)
    } else {
        grads.global_norm()
    };
    adam_update(store, &grads, adam)?;
    Ok(norm)
}
