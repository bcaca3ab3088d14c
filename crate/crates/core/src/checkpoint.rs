//! Single-file model container.
//!
//! Layout: a UTF-8 text header (format line, manifest entries, vocabulary
//! and label sections, tensor directory) terminated by a `payload <bytes>`
//! line, followed by every tensor's values as little-endian `f64` in
//! directory order. Nothing time-dependent is written, so equal models
//! serialize to equal bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::bilm::{BiLm, BiLmConfig};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};
use crate::tagger::{LabelScheme, LabelSet, Tagger, TaggerArch};

const MAGIC: &str = "seqxfer-checkpoint 1";

/// Raw checkpoint contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// `bilm` or `tagger`.
    pub kind: String,
    pub arch: BTreeMap<String, String>,
    pub provenance: Vec<String>,
    pub metrics: Vec<String>,
    /// Named blocks of text lines (vocabularies, labels).
    pub sections: BTreeMap<String, Vec<String>>,
    pub params: ParamStore,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn single_line(field: &str, value: &str) -> Result<()> {
    if value.contains('\n') || value.contains('\r') {
        return Err(bad(format!("{field} must fit on one line: {value:?}")));
    }
    Ok(())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut head = String::new();
        head.push_str(MAGIC);
        head.push('\n');
        single_line("kind", &self.kind)?;
        head.push_str(&format!("kind={}\n", self.kind));
        for (k, v) in &self.arch {
            single_line("architecture entry", &format!("{k}{v}"))?;
            if k.contains('=') {
                return Err(bad(format!("architecture key `{k}` contains `=`")));
            }
            head.push_str(&format!("arch.{k}={v}\n"));
        }
        for p in &self.provenance {
            single_line("provenance", p)?;
            head.push_str(&format!("provenance={p}\n"));
        }
        for m in &self.metrics {
            single_line("metric", m)?;
            head.push_str(&format!("metric={m}\n"));
        }
        for (name, lines) in &self.sections {
            single_line("section name", name)?;
            if name.contains(' ') {
                return Err(bad(format!("section name `{name}` contains a space")));
            }
            head.push_str(&format!("section {name} {}\n", lines.len()));
            for l in lines {
                single_line("section line", l)?;
                head.push_str(l);
                head.push('\n');
            }
        }
        let mut payload = Vec::new();
        for (name, t) in self.params.iter() {
            if name.contains(char::is_whitespace) {
                return Err(bad(format!("parameter name `{name}` contains whitespace")));
            }
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            head.push_str(&format!(
                "tensor {name} {}\n",
                if dims.is_empty() {
                    "-".into()
                } else {
                    dims.join(",")
                }
            ));
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        head.push_str(&format!("payload {}\n", payload.len()));
        let mut out = head.into_bytes();
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut line_no = 0;
        let mut next_line = || -> Result<&str> {
            let rest = &bytes[pos..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| bad("truncated header"))?;
            pos += end + 1;
            line_no += 1;
            std::str::from_utf8(&rest[..end])
                .map_err(|_| bad(format!("header line {line_no} is not UTF-8")))
        };
        if next_line()? != MAGIC {
            return Err(bad("not a checkpoint file (bad format line)"));
        }
        let mut ck = Checkpoint {
            kind: String::new(),
            arch: BTreeMap::new(),
            provenance: Vec::new(),
            metrics: Vec::new(),
            sections: BTreeMap::new(),
            params: ParamStore::new(),
        };
        let mut directory: Vec<(String, Vec<usize>)> = Vec::new();
        let payload_len = loop {
            let line = next_line()?;
            if let Some(v) = line.strip_prefix("kind=") {
                ck.kind = v.to_string();
            } else if let Some(kv) = line.strip_prefix("arch.") {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| bad(format!("malformed entry `{line}`")))?;
                ck.arch.insert(k.to_string(), v.to_string());
            } else if let Some(v) = line.strip_prefix("provenance=") {
                ck.provenance.push(v.to_string());
            } else if let Some(v) = line.strip_prefix("metric=") {
                ck.metrics.push(v.to_string());
            } else if let Some(rest) = line.strip_prefix("section ") {
                let (name, count) = rest
                    .split_once(' ')
                    .ok_or_else(|| bad(format!("malformed `{line}`")))?;
                let count: usize = count
                    .parse()
                    .map_err(|_| bad(format!("malformed `{line}`")))?;
                let name = name.to_string();
                let mut lines = Vec::with_capacity(count);
                for _ in 0..count {
                    lines.push(next_line()?.to_string());
                }
                ck.sections.insert(name, lines);
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let (name, dims) = rest
                    .split_once(' ')
                    .ok_or_else(|| bad(format!("malformed `{line}`")))?;
                let shape = if dims == "-" {
                    Vec::new()
                } else {
                    dims.split(',')
                        .map(|d| {
                            d.parse::<usize>()
                                .map_err(|_| bad(format!("bad shape in `{line}`")))
                        })
                        .collect::<Result<Vec<_>>>()?
                };
                directory.push((name.to_string(), shape));
            } else if let Some(n) = line.strip_prefix("payload ") {
                break n
                    .parse::<usize>()
                    .map_err(|_| bad(format!("malformed `{line}`")))?;
            } else {
                return Err(bad(format!("unrecognized header line `{line}`")));
            }
        };
        let payload = &bytes[pos..];
        let declared: usize = directory
            .iter()
            .map(|(_, s)| 8 * s.iter().product::<usize>())
            .sum();
        if payload.len() != payload_len || declared != payload_len {
            return Err(bad(format!(
                "payload holds {} bytes, header declares {payload_len}, tensor shapes need {declared}",
                payload.len()
            )));
        }
        let mut offset = 0;
        for (name, shape) in directory {
            let n: usize = shape.iter().product();
            let data = payload[offset..offset + 8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            offset += 8 * n;
            if ck
                .params
                .insert(name.clone(), Tensor::new(shape, data)?)
                .is_some()
            {
                return Err(bad(format!("duplicate tensor `{name}`")));
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|e| bad(format!("{}: {e}", path.display())))
    }

    fn vocab(&self, name: &str) -> Result<Vocabulary> {
        let lines = self
            .sections
            .get(name)
            .ok_or_else(|| bad(format!("missing `{name}` section")))?;
        let mut text = lines.join("\n");
        text.push('\n');
        Vocabulary::from_text(&text)
    }

    fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(bad(format!(
                "expected a {kind} checkpoint, found `{}`",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn from_bilm(model: &BiLm) -> Self {
        let mut arch = BTreeMap::new();
        model.config.to_kv(&mut arch);
        let mut sections = BTreeMap::new();
        sections.insert("words".into(), vocab_lines(&model.words));
        sections.insert("chars".into(), vocab_lines(&model.chars));
        Self {
            kind: "bilm".into(),
            arch,
            provenance: model.provenance.clone(),
            metrics: model.metrics.clone(),
            sections,
            params: model.params.clone(),
        }
    }

    pub fn to_bilm(&self) -> Result<BiLm> {
        self.expect_kind("bilm")?;
        let model = BiLm {
            config: BiLmConfig::from_kv(&self.arch)?,
            words: self.vocab("words")?,
            chars: self.vocab("chars")?,
            params: self.params.clone(),
            provenance: self.provenance.clone(),
            metrics: self.metrics.clone(),
        };
        model.validate().map_err(|e| bad(e.to_string()))?;
        Ok(model)
    }

    pub fn from_tagger(model: &Tagger) -> Self {
        let mut arch = BTreeMap::new();
        model.arch.to_kv(&mut arch);
        arch.insert("labels.scheme".into(), model.labels.scheme().to_string());
        let mut sections = BTreeMap::new();
        sections.insert("words".into(), vocab_lines(&model.words));
        sections.insert("labels".into(), model.labels.labels().to_vec());
        if let Some(chars) = &model.lm_chars {
            sections.insert("lm_chars".into(), vocab_lines(chars));
        }
        Self {
            kind: "tagger".into(),
            arch,
            provenance: model.provenance.clone(),
            metrics: model.metrics.clone(),
            sections,
            params: model.params.clone(),
        }
    }

    pub fn to_tagger(&self) -> Result<Tagger> {
        self.expect_kind("tagger")?;
        let scheme: LabelScheme = self
            .arch
            .get("labels.scheme")
            .ok_or_else(|| bad("missing `labels.scheme`"))?
            .parse()?;
        let labels = self
            .sections
            .get("labels")
            .ok_or_else(|| bad("missing `labels` section"))?;
        let lm_chars = if self.sections.contains_key("lm_chars") {
            Some(self.vocab("lm_chars")?)
        } else {
            None
        };
        let model = Tagger {
            arch: TaggerArch::from_kv(&self.arch)?,
            words: self.vocab("words")?,
            labels: LabelSet::new(labels.clone(), scheme)?,
            lm_chars,
            params: self.params.clone(),
            provenance: self.provenance.clone(),
            metrics: self.metrics.clone(),
        };
        model.validate()?;
        Ok(model)
    }
}

fn vocab_lines(v: &Vocabulary) -> Vec<String> {
    v.to_text().lines().map(String::from).collect()
}

/// A loaded model of either kind.
#[derive(Clone, Debug)]
pub enum Model {
    Lm(BiLm),
    Tagger(Tagger),
}

impl Model {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        match ck.kind.as_str() {
            "bilm" => Ok(Model::Lm(ck.to_bilm()?)),
            "tagger" => Ok(Model::Tagger(ck.to_tagger()?)),
            other => Err(bad(format!("unknown checkpoint kind `{other}`"))),
        }
    }
}
