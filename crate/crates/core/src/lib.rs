//! Character-aware bidirectional language models, BiLSTM-CRF sequence
//! taggers, weight transfer between them, and the corpus and evaluation
//! tooling around them.

pub mod bilm;
pub mod checkpoint;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
mod nn;
pub mod numerics;
pub mod probe;
pub mod tagger;
pub mod transfer;

pub use error::{Error, Result};
