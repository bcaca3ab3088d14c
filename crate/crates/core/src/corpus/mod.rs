//! Corpus ingestion and conversion: column-format I/O, BIO handling,
//! vocabularies, pre-computed word vectors and LM batching.

mod batch;
mod bio;
mod conll;
mod stats;
mod vectors;
pub mod vocab;

pub use batch::{lm_batches, lm_batches_sequential, LmBatch};
pub use bio::{
    bio_to_spans, contiguous_to_bio, entity_type, repair_bio, spans_to_bio, validate_bio,
    EntitySpan,
};
pub(crate) use bio::{parse_tag, Bio};
pub use conll::{read_conll, read_plain_sentences, write_conll, Column, LabeledSequence};
pub use stats::{corpus_stats, CorpusStats, TypeCounts};
pub use vectors::{load_word_vectors, vector_file_words, WordVectors};
pub use vocab::{build_char_vocab, build_vocab, VocabKind, Vocabulary};
