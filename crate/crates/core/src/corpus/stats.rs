use std::collections::BTreeMap;
use std::fmt::Write;

use crate::corpus::{bio_to_spans, LabeledSequence};
use crate::error::{Error, Result};

/// Entity counts of one type, by mention and by token.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TypeCounts {
    pub mentions: usize,
    pub tokens: usize,
}

/// Size of a tagged corpus and its entities per type.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CorpusStats {
    pub sentences: usize,
    pub tokens: usize,
    pub per_type: BTreeMap<String, TypeCounts>,
}

/// Counts sentences, tokens and entities. Tags must be strictly valid BIO.
pub fn corpus_stats(data: &[LabeledSequence]) -> Result<CorpusStats> {
    let mut stats = CorpusStats {
        sentences: data.len(),
        ..CorpusStats::default()
    };
    for (i, s) in data.iter().enumerate() {
        stats.tokens += s.len();
        let spans =
            bio_to_spans(&s.tags, false).map_err(|e| Error::Data(format!("sentence {i}: {e}")))?;
        for span in spans {
            let c = stats.per_type.entry(span.kind).or_default();
            c.mentions += 1;
            c.tokens += span.end - span.start;
        }
    }
    Ok(stats)
}

impl CorpusStats {
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "metric=sentences type=all value={}", self.sentences);
        let _ = writeln!(out, "metric=tokens type=all value={}", self.tokens);
        for (t, c) in &self.per_type {
            let _ = writeln!(out, "metric=entity_mentions type={t} value={}", c.mentions);
            let _ = writeln!(out, "metric=entity_tokens type={t} value={}", c.tokens);
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} sentences, {} tokens\n", self.sentences, self.tokens);
        let _ = writeln!(out, "{:<10} {:>9} {:>9}", "type", "mentions", "tokens");
        for (t, c) in &self.per_type {
            let _ = writeln!(out, "{t:<10} {:>9} {:>9}", c.mentions, c.tokens);
        }
        out
    }
}
