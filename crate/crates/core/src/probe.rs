//! Scalar losses over single model components, recorded from an explicit
//! parameter store so they can be fed to [`finite_difference_check`].
//!
//! Each loss contracts the component output with a fixed, non-uniform
//! readout so that no output coordinate is left out of the gradient.
//!
//! [`finite_difference_check`]: crate::numerics::finite_difference_check

use crate::bilm::{loss_on_tape, BiLmConfig};
use crate::corpus::LmBatch;
use crate::encoder::{encode_on_tape, highway_on_tape, CharEncoderConfig};
use crate::error::Result;
use crate::nn::{self, Scope};
use crate::numerics::{param_seed, seeded_init, InitScheme, ParamStore, Tape, Tensor, Var};

fn readout(tape: &mut Tape, like: Var) -> Var {
    let shape = tape.value(like).shape().to_vec();
    let n: usize = shape.iter().product();
    let w = (0..n).map(|i| (1.0 + i as f64).sin()).collect();
    tape.constant(Tensor::new(shape, w).expect("shape matches data"))
}

fn contract_with_readout(tape: &mut Tape, out: Var) -> Var {
    let w = readout(tape, out);
    let prod = tape.mul(out, w);
    tape.sum(prod)
}

/// One highway layer of width `dim` plus an input row block `x [rows, dim]`,
/// all registered as parameters.
pub fn highway_params(rows: usize, dim: usize, seed: u64) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    for name in ["gate", "transform"] {
        nn::init_linear(&mut store, name, dim, dim, seed)?;
    }
    let gb = store.get_mut("gate.bias").expect("just created");
    gb.data_mut()
        .iter_mut()
        .enumerate()
        .for_each(|(i, v)| *v = -1.0 + 0.1 * i as f64);
    store.insert(
        "x",
        seeded_init(
            &[rows, dim],
            InitScheme::UniformGlorot,
            param_seed(seed, "x"),
        )?,
    );
    Ok(store)
}

pub fn highway_loss(tape: &mut Tape, store: &ParamStore) -> Result<Var> {
    let s = Scope::new(store, "");
    let x = s.var(tape, "x")?;
    let gw = s.var(tape, "gate.weight")?;
    let gb = s.var(tape, "gate.bias")?;
    let tw = s.var(tape, "transform.weight")?;
    let tb = s.var(tape, "transform.bias")?;
    let out = highway_on_tape(tape, x, gw, gb, tw, tb);
    Ok(contract_with_readout(tape, out))
}

/// Character encoder over padded id sequences; `store` holds unprefixed
/// encoder parameters as made by [`CharEncoderParams::init`].
///
/// [`CharEncoderParams::init`]: crate::encoder::CharEncoderParams::init
pub fn encoder_loss(
    tape: &mut Tape,
    store: &ParamStore,
    config: &CharEncoderConfig,
    words: &[&[usize]],
) -> Result<Var> {
    let out = encode_on_tape(tape, &Scope::new(store, ""), config, words)?;
    Ok(contract_with_readout(tape, out))
}

/// LSTM cell `cell.{wx,wh,b}` with input `x [rows, in]` and previous state
/// `h0`, `c0 [rows, hidden]`, all registered as parameters.
pub fn lstm_cell_params(
    rows: usize,
    in_dim: usize,
    hidden: usize,
    seed: u64,
) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    nn::init_lstm(&mut store, "cell", in_dim, hidden, seed)?;
    for (name, cols) in [("x", in_dim), ("h0", hidden), ("c0", hidden)] {
        store.insert(
            name,
            seeded_init(
                &[rows, cols],
                InitScheme::UniformGlorot,
                param_seed(seed, name),
            )?,
        );
    }
    Ok(store)
}

/// Two consecutive steps, reading out both the hidden and the cell state.
pub fn lstm_cell_loss(tape: &mut Tape, store: &ParamStore) -> Result<Var> {
    let s = Scope::new(store, "");
    let hidden = s.tensor("h0")?.cols();
    let x = s.var(tape, "x")?;
    let wx = s.var(tape, "cell.wx")?;
    let wh = s.var(tape, "cell.wh")?;
    let b = s.var(tape, "cell.b")?;
    let mut h = s.var(tape, "h0")?;
    let mut c = s.var(tape, "c0")?;
    for _ in 0..2 {
        let proj = tape.matmul_t(x, wx);
        (h, c) = nn::lstm_step(tape, proj, h, c, wh, b, hidden);
    }
    let both = tape.concat_cols(&[h, c]);
    Ok(contract_with_readout(tape, both))
}

/// Forward plus backward mean negative log-likelihood of a batch, with
/// unprefixed model parameters (as in [`BiLm::params`]).
///
/// [`BiLm::params`]: crate::bilm::BiLm::params
pub fn bilm_batch_loss(
    tape: &mut Tape,
    store: &ParamStore,
    config: &BiLmConfig,
    batch: &LmBatch,
) -> Result<Var> {
    let (f, b, _) = loss_on_tape(tape, &Scope::new(store, ""), config, batch)?;
    Ok(tape.add(f, b))
}
