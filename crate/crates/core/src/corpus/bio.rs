use crate::error::{Error, Result};

/// Typed entity over the half-open token range `[start, end)`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntitySpan {
    pub kind: String,
    pub start: usize,
    pub end: usize,
}

impl EntitySpan {
    pub fn new(kind: impl Into<String>, start: usize, end: usize) -> Self {
        Self {
            kind: kind.into(),
            start,
            end,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Bio<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

pub(crate) fn parse_tag(tag: &str) -> Option<Bio<'_>> {
    if tag == "O" {
        return Some(Bio::Outside);
    }
    let (prefix, kind) = tag.split_at_checked(2)?;
    if kind.is_empty() {
        return None;
    }
    match prefix {
        "B-" => Some(Bio::Begin(kind)),
        "I-" => Some(Bio::Inside(kind)),
        _ => None,
    }
}

/// Entity type of a tag with any `B-`/`I-` prefix removed; `O` stays `O`.
pub fn entity_type(tag: &str) -> &str {
    match parse_tag(tag) {
        Some(Bio::Begin(k)) | Some(Bio::Inside(k)) => k,
        _ => tag,
    }
}

/// Turns per-token entity types (or `O`) into BIO: every maximal run of the
/// same type becomes `B-X I-X …`.
///
/// Input tags are expected to carry no `B-`/`I-` prefixes.
pub fn contiguous_to_bio<S: AsRef<str>>(raw_tags: &[S]) -> Vec<String> {
    let mut out = Vec::with_capacity(raw_tags.len());
    let mut prev: Option<&str> = None;
    for tag in raw_tags {
        let tag = tag.as_ref();
        if tag == "O" {
            out.push("O".to_string());
            prev = None;
        } else if prev == Some(tag) {
            out.push(format!("I-{tag}"));
        } else {
            out.push(format!("B-{tag}"));
            prev = Some(tag);
        }
    }
    out
}

/// Extracts entity spans from BIO tags.
///
/// In strict mode an `I-X` that does not continue an `X` entity is an
/// error. In repair mode such a tag opens a new `X` entity, as if it were
/// `B-X`. Tags that are neither `O` nor `B-`/`I-` prefixed are rejected in
/// both modes.
pub fn bio_to_spans<S: AsRef<str>>(tags: &[S], repair: bool) -> Result<Vec<EntitySpan>> {
    let mut spans = Vec::new();
    let mut open: Option<(&str, usize)> = None;
    for (i, tag) in tags.iter().enumerate() {
        let tag = tag.as_ref();
        let parsed = parse_tag(tag)
            .ok_or_else(|| Error::Data(format!("malformed BIO tag `{tag}` at index {i}")))?;
        match parsed {
            Bio::Outside => {
                if let Some((k, s)) = open.take() {
                    spans.push(EntitySpan::new(k, s, i));
                }
            }
            Bio::Begin(kind) => {
                if let Some((k, s)) = open.take() {
                    spans.push(EntitySpan::new(k, s, i));
                }
                open = Some((kind, i));
            }
            Bio::Inside(kind) => match open {
                Some((k, _)) if k == kind => {}
                _ if repair => {
                    if let Some((k, s)) = open.take() {
                        spans.push(EntitySpan::new(k, s, i));
                    }
                    open = Some((kind, i));
                }
                _ => {
                    return Err(Error::Data(format!(
                        "illegal BIO transition: `{tag}` at index {i} does not continue an entity"
                    )))
                }
            },
        }
    }
    if let Some((k, s)) = open {
        spans.push(EntitySpan::new(k, s, tags.len()));
    }
    Ok(spans)
}

/// Writes spans back to BIO over a sentence of `len` tokens.
pub fn spans_to_bio(spans: &[EntitySpan], len: usize) -> Result<Vec<String>> {
    let mut tags = vec!["O".to_string(); len];
    let mut taken = vec![false; len];
    for span in spans {
        if span.start >= span.end || span.end > len {
            return Err(Error::Data(format!(
                "span {span:?} out of range for length {len}"
            )));
        }
        if taken[span.start..span.end].iter().any(|&t| t) {
            return Err(Error::Data(format!("span {span:?} overlaps another span")));
        }
        for (i, slot) in tags.iter_mut().enumerate().take(span.end).skip(span.start) {
            *slot = if i == span.start {
                format!("B-{}", span.kind)
            } else {
                format!("I-{}", span.kind)
            };
            taken[i] = true;
        }
    }
    Ok(tags)
}

/// Canonical form of a tag sequence: the repaired spans written back out.
pub fn repair_bio<S: AsRef<str>>(tags: &[S]) -> Result<Vec<String>> {
    let spans = bio_to_spans(tags, true)?;
    spans_to_bio(&spans, tags.len())
}

/// Checks that a tag sequence is strictly legal BIO.
pub fn validate_bio<S: AsRef<str>>(tags: &[S]) -> Result<()> {
    bio_to_spans(tags, false).map(|_| ())
}
