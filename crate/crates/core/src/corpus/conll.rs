use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// One sentence: tokens with a tag per token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledSequence {
    pub tokens: Vec<String>,
    pub tags: Vec<String>,
}

impl LabeledSequence {
    pub fn new(tokens: Vec<String>, tags: Vec<String>) -> Result<Self> {
        if tokens.len() != tags.len() {
            return Err(Error::Data(format!(
                "sentence has {} tokens but {} tags",
                tokens.len(),
                tags.len()
            )));
        }
        if tokens.iter().any(String::is_empty) {
            return Err(Error::Data("empty token string".into()));
        }
        Ok(Self { tokens, tags })
    }

    /// Untagged sentence (every tag `O`), used for prediction input.
    pub fn untagged(tokens: Vec<String>) -> Self {
        let tags = vec!["O".to_string(); tokens.len()];
        Self { tokens, tags }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl AsRef<[String]> for LabeledSequence {
    fn as_ref(&self) -> &[String] {
        &self.tokens
    }
}

/// Which whitespace-separated field holds a value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Column {
    Index(usize),
    Last,
}

impl Column {
    fn pick<'a>(self, fields: &[&'a str]) -> Option<&'a str> {
        match self {
            Column::Index(i) => fields.get(i).copied(),
            Column::Last => fields.last().copied(),
        }
    }
}

/// Reads column-formatted sentences separated by blank lines.
///
/// Fields are split on any run of spaces or tabs. Every non-blank line must
/// have the same number of fields (at least two) as the first one.
/// Consecutive blank lines and trailing blank lines do not create empty
/// sentences.
pub fn read_conll<R: BufRead>(
    source: R,
    token_col: Column,
    tag_col: Column,
) -> Result<Vec<LabeledSequence>> {
    let mut out = Vec::new();
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let mut width = None;
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            if !tokens.is_empty() {
                out.push(LabeledSequence {
                    tokens: std::mem::take(&mut tokens),
                    tags: std::mem::take(&mut tags),
                });
            }
            continue;
        }
        let expected = *width.get_or_insert(fields.len());
        if fields.len() != expected || expected < 2 {
            return Err(Error::Parse {
                line: i + 1,
                message: format!(
                    "expected {} fields, found {}",
                    expected.max(2),
                    fields.len()
                ),
            });
        }
        let (Some(token), Some(tag)) = (token_col.pick(&fields), tag_col.pick(&fields)) else {
            return Err(Error::Parse {
                line: i + 1,
                message: format!(
                    "expected columns {token_col:?} and {tag_col:?}, found {} field(s)",
                    fields.len()
                ),
            });
        };
        tokens.push(token.to_string());
        tags.push(tag.to_string());
    }
    if !tokens.is_empty() {
        out.push(LabeledSequence { tokens, tags });
    }
    Ok(out)
}

/// Writes `token tag` lines with a blank line after every sentence.
pub fn write_conll<W: Write>(mut sink: W, sequences: &[LabeledSequence]) -> Result<()> {
    for seq in sequences {
        for (tok, tag) in seq.tokens.iter().zip(&seq.tags) {
            writeln!(sink, "{tok} {tag}")?;
        }
        writeln!(sink)?;
    }
    Ok(())
}

/// Reads an unlabeled corpus: one pre-tokenized sentence per line.
pub fn read_plain_sentences<R: BufRead>(source: R) -> Result<Vec<Vec<String>>> {
    let mut out = Vec::new();
    for line in source.lines() {
        let toks: Vec<String> = line?.split_whitespace().map(String::from).collect();
        if !toks.is_empty() {
            out.push(toks);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str) -> Result<Vec<LabeledSequence>> {
        read_conll(text.as_bytes(), Column::Index(0), Column::Index(1))
    }

    #[test]
    fn mixed_separators() {
        let s = read("John B-PER\n.\tO\n\n").unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].tokens, vec!["John", "."]);
        assert_eq!(s[0].tags, vec!["B-PER", "O"]);
    }

    #[test]
    fn repeated_blank_lines_do_not_create_sentences() {
        let s = read("a O\n\n\nb O\n\n\n").unwrap();
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn missing_column_reports_line() {
        match read("John\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
        match read("a O\nb O\n\nc\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_input_is_empty_list() {
        assert!(read("").unwrap().is_empty());
    }

    #[test]
    fn last_column_selection() {
        let s = read_conll(
            "EU NNP B-NP B-ORG\n".as_bytes(),
            Column::Index(0),
            Column::Last,
        )
        .unwrap();
        assert_eq!(s[0].tags, vec!["B-ORG"]);
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let last = |t: &str| read_conll(t.as_bytes(), Column::Index(0), Column::Last);
        match last("a NN O\nb O\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(last("Obama\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn write_then_read_normalizes_whitespace() {
        let text = "John\tB-PER\nlives   O\n\n\nin O\nParis B-LOC\n";
        let parsed = read(text).unwrap();
        let mut buf = Vec::new();
        write_conll(&mut buf, &parsed).unwrap();
        let written = String::from_utf8(buf).unwrap();
        assert_eq!(written, "John B-PER\nlives O\n\nin O\nParis B-LOC\n\n");
        assert_eq!(read(&written).unwrap(), parsed);
    }
}
