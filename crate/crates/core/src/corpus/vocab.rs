use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
/// Sentence boundary symbols in word vocabularies.
pub const BOS: usize = 2;
pub const EOS: usize = 3;
/// Word boundary markers in character vocabularies.
pub const BOW: usize = 2;
pub const EOW: usize = 3;

const WORD_RESERVED: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];
const CHAR_RESERVED: [&str; 4] = ["<pad>", "<unk>", "<bow>", "<eow>"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VocabKind {
    Word,
    Char,
}

impl VocabKind {
    fn reserved(self) -> &'static [&'static str] {
        match self {
            VocabKind::Word => &WORD_RESERVED,
            VocabKind::Char => &CHAR_RESERVED,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            VocabKind::Word => "word",
            VocabKind::Char => "char",
        }
    }
}

/// Symbol ↔ id mapping with reserved ids prepended.
///
/// Ids `0..4` are reserved (`PAD`, `UNK` and a kind-specific boundary pair);
/// lookups of unknown symbols return [`UNK`].
#[derive(Clone, PartialEq, Eq)]
pub struct Vocabulary {
    kind: VocabKind,
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary over the given (deduplicated, sorted) symbols.
    pub fn from_symbols<I, S>(kind: VocabKind, symbols: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let unique: BTreeSet<String> = symbols.into_iter().map(Into::into).collect();
        let mut all: Vec<String> = kind.reserved().iter().map(|s| s.to_string()).collect();
        all.extend(
            unique
                .into_iter()
                .filter(|s| !kind.reserved().contains(&s.as_str())),
        );
        let index = all
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Self {
            kind,
            symbols: all,
            index,
        }
    }

    pub fn empty(kind: VocabKind) -> Self {
        Self::from_symbols(kind, Vec::<String>::new())
    }

    pub fn kind(&self) -> VocabKind {
        self.kind
    }

    pub fn reserved_count(&self) -> usize {
        self.kind.reserved().len()
    }

    /// Total size including reserved entries.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.len() == self.reserved_count()
    }

    pub fn id(&self, symbol: &str) -> usize {
        self.index.get(symbol).copied().unwrap_or(UNK)
    }

    pub fn get(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn contains(&self, symbol: &str) -> bool {
        self.index
            .get(symbol)
            .is_some_and(|&i| i >= self.reserved_count())
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    /// Non-reserved symbols in id order.
    pub fn symbols(&self) -> impl Iterator<Item = &str> {
        self.symbols[self.reserved_count()..]
            .iter()
            .map(String::as_str)
    }

    pub fn char_id(&self, c: char) -> usize {
        let mut buf = [0u8; 4];
        self.id(c.encode_utf8(&mut buf))
    }

    /// Text form: a `kind` header line followed by one symbol per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("{}\n", self.kind.tag());
        for s in self.symbols() {
            out.push_str(s);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let kind = match lines.next() {
            Some("word") => VocabKind::Word,
            Some("char") => VocabKind::Char,
            other => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("unknown vocabulary kind {other:?}"),
                })
            }
        };
        let symbols: Vec<&str> = lines.collect();
        let vocab = Self::from_symbols(kind, symbols.iter().copied());
        if vocab.len() != symbols.len() + vocab.reserved_count() {
            return Err(Error::Parse {
                line: 1,
                message: "duplicate or reserved symbol in vocabulary".into(),
            });
        }
        Ok(vocab)
    }
}

impl fmt::Debug for Vocabulary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Vocabulary({:?}, {} symbols)", self.kind, self.len())
    }
}

/// Word vocabulary of tokens occurring at least `min_count` times,
/// codepoint-sorted.
pub fn build_vocab<'a, I, S>(sequences: I, min_count: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a S>,
    S: AsRef<[String]> + 'a + ?Sized,
{
    if min_count == 0 {
        return Err(Error::Contract("min_count must be at least 1".into()));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for seq in sequences {
        for tok in seq.as_ref() {
            *counts.entry(tok.as_str()).or_default() += 1;
        }
    }
    Ok(Vocabulary::from_symbols(
        VocabKind::Word,
        counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count)
            .map(|(s, _)| s),
    ))
}

/// Character vocabulary over every Unicode scalar in the tokens.
pub fn build_char_vocab<'a, I, S>(sequences: I) -> Vocabulary
where
    I: IntoIterator<Item = &'a S>,
    S: AsRef<[String]> + 'a + ?Sized,
{
    let mut chars = BTreeSet::new();
    for seq in sequences {
        for tok in seq.as_ref() {
            chars.extend(tok.chars());
        }
    }
    Vocabulary::from_symbols(VocabKind::Char, chars.into_iter().map(String::from))
}
