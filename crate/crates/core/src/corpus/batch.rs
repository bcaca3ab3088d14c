use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::vocab::{BOS, EOS, PAD};
use crate::corpus::Vocabulary;
use crate::encoder::char_ids;
use crate::error::{contract, Result};

/// Padded language-model minibatch.
///
/// Row `b`, position `k` holds the character ids of token `k`; the forward
/// target is token `k + 1` (`</s>` at the end) and the backward target is
/// token `k - 1` (`<s>` at the start). Positions past a sentence's end are
/// masked out and carry `PAD` everywhere.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LmBatch {
    /// `[batch][position][max_word_len]`
    pub char_ids: Vec<Vec<Vec<usize>>>,
    pub forward_targets: Vec<Vec<usize>>,
    pub backward_targets: Vec<Vec<usize>>,
    pub mask: Vec<Vec<bool>>,
}

impl LmBatch {
    /// Builds one batch from sentences in the given order.
    pub fn from_sentences(
        sentences: &[&[String]],
        words: &Vocabulary,
        chars: &Vocabulary,
        max_word_len: usize,
    ) -> Result<Self> {
        if sentences.is_empty() || sentences.iter().any(|s| s.is_empty()) {
            return Err(contract("LM batch needs non-empty sentences"));
        }
        let width = sentences.iter().map(|s| s.len()).max().unwrap_or(0);
        let pad_chars = vec![PAD; max_word_len];
        let mut batch = LmBatch {
            char_ids: Vec::with_capacity(sentences.len()),
            forward_targets: Vec::with_capacity(sentences.len()),
            backward_targets: Vec::with_capacity(sentences.len()),
            mask: Vec::with_capacity(sentences.len()),
        };
        for sent in sentences {
            let ids: Vec<usize> = sent.iter().map(|w| words.id(w)).collect();
            let n = sent.len();
            let mut row_chars = Vec::with_capacity(width);
            let mut fwd = Vec::with_capacity(width);
            let mut bwd = Vec::with_capacity(width);
            let mut mask = Vec::with_capacity(width);
            for k in 0..width {
                if k < n {
                    row_chars.push(char_ids(&sent[k], chars, max_word_len)?.ids);
                    fwd.push(if k + 1 < n { ids[k + 1] } else { EOS });
                    bwd.push(if k > 0 { ids[k - 1] } else { BOS });
                    mask.push(true);
                } else {
                    row_chars.push(pad_chars.clone());
                    fwd.push(PAD);
                    bwd.push(PAD);
                    mask.push(false);
                }
            }
            batch.char_ids.push(row_chars);
            batch.forward_targets.push(fwd);
            batch.backward_targets.push(bwd);
            batch.mask.push(mask);
        }
        Ok(batch)
    }

    pub fn batch_size(&self) -> usize {
        self.mask.len()
    }

    /// Padded sentence length.
    pub fn width(&self) -> usize {
        self.mask.first().map_or(0, Vec::len)
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.mask
            .iter()
            .map(|m| m.iter().filter(|&&b| b).count())
            .collect()
    }

    pub fn token_count(&self) -> usize {
        self.lengths().iter().sum()
    }
}

/// Shuffles sentences by `seed`, buckets them by length and pads per batch.
/// Batch order is shuffled again with the same generator.
pub fn lm_batches(
    corpus: &[Vec<String>],
    words: &Vocabulary,
    chars: &Vocabulary,
    batch_size: usize,
    max_word_len: usize,
    seed: u64,
) -> Result<Vec<LmBatch>> {
    if batch_size == 0 {
        return Err(contract("batch_size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..corpus.len())
        .filter(|&i| !corpus[i].is_empty())
        .collect();
    order.shuffle(&mut rng);
    order.sort_by_key(|&i| corpus[i].len());
    let mut batches = order
        .chunks(batch_size)
        .map(|chunk| {
            let sents: Vec<&[String]> = chunk.iter().map(|&i| corpus[i].as_slice()).collect();
            LmBatch::from_sentences(&sents, words, chars, max_word_len)
        })
        .collect::<Result<Vec<_>>>()?;
    batches.shuffle(&mut rng);
    Ok(batches)
}

/// Batches in corpus order, for evaluation passes whose result must not
/// depend on a shuffle.
pub fn lm_batches_sequential(
    corpus: &[Vec<String>],
    words: &Vocabulary,
    chars: &Vocabulary,
    batch_size: usize,
    max_word_len: usize,
) -> Result<Vec<LmBatch>> {
    if batch_size == 0 {
        return Err(contract("batch_size must be at least 1"));
    }
    let sents: Vec<&[String]> = corpus
        .iter()
        .filter(|s| !s.is_empty())
        .map(Vec::as_slice)
        .collect();
    sents
        .chunks(batch_size)
        .map(|chunk| LmBatch::from_sentences(chunk, words, chars, max_word_len))
        .collect()
}
