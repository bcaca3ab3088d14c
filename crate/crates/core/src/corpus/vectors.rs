use std::io::BufRead;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::numerics::{seeded_init, InitScheme, Tensor};

/// Embedding matrix built from a pre-computed vector file.
#[derive(Clone, Debug)]
pub struct WordVectors {
    /// `[vocab.len(), dim]`
    pub matrix: Tensor,
    /// Fraction of non-reserved vocabulary words found in the file.
    pub coverage: f64,
}

/// Reads `word v1 … v_dim` lines (space separated) into rows of an
/// embedding matrix aligned with `vocab`.
///
/// Rows of words missing from the file keep a seeded Glorot initialization.
/// Words in the file that are not in the vocabulary are ignored.
pub fn load_word_vectors<R: BufRead>(
    source: R,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<WordVectors> {
    let mut matrix = seeded_init(&[vocab.len(), dim], InitScheme::UniformGlorot, seed)?;
    let mut found = vec![false; vocab.len()];
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let values = fields
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    line: i + 1,
                    message: format!("malformed float `{f}`"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != dim {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected {dim} values for `{word}`, found {}", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line: i + 1,
                message: "non-finite vector value".into(),
            });
        }
        if let Some(id) = vocab.get(word).filter(|&id| id >= vocab.reserved_count()) {
            matrix.row_mut(id).copy_from_slice(&values);
            found[id] = true;
        }
    }
    let known = vocab.len() - vocab.reserved_count();
    let hits = found.iter().filter(|&&f| f).count();
    let coverage = if known == 0 {
        0.0
    } else {
        hits as f64 / known as f64
    };
    Ok(WordVectors { matrix, coverage })
}

/// Words listed in a vector file, in file order.
pub fn vector_file_words<R: BufRead>(source: R) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for line in source.lines() {
        if let Some(w) = line?.split_whitespace().next() {
            out.push(w.to_string());
        }
    }
    Ok(out)
}
