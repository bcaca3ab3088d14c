//! Run configuration: `key=value` lines, `#` comments, flags override.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use seqxfer::bilm::{BiLmConfig, LmTrainConfig};
use seqxfer::encoder::CharEncoderConfig;
use seqxfer::eval::{Normalization, OverlapOptions};
use seqxfer::tagger::{Head, LabelScheme, TaggerArch, TaggerTrainConfig};
use seqxfer::transfer::TransferPolicy;
use seqxfer::Error;

/// Every setting a command may read. Unset optional fields fall back to
/// per-command defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub epochs: Option<usize>,
    pub patience: Option<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub clip: f64,
    pub dropout: f64,
    pub unk_replace: f64,
    pub l2_anchor: f64,
    pub min_count: usize,

    pub head: Option<Head>,
    pub scheme: Option<LabelScheme>,
    pub constrained: bool,
    pub freeze_embeddings: bool,
    pub d_word: Option<usize>,
    pub hidden: Option<usize>,
    pub layers: Option<usize>,

    pub char_dim: usize,
    pub filter_widths: Vec<usize>,
    pub filter_counts: Vec<usize>,
    pub highway_layers: usize,
    pub lm_dim: usize,
    pub max_word_len: usize,
    pub lm_layers: usize,
    pub lm_hidden: usize,

    pub policy: Option<TransferPolicy>,
    pub normalization: Normalization,
    pub fold_case: bool,

    pub corpus: Option<PathBuf>,
    pub char_corpus: Vec<PathBuf>,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub vectors: Option<PathBuf>,
    pub init: Option<PathBuf>,
    pub lm: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub pred: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let enc = CharEncoderConfig::default();
        let lm = BiLmConfig::default();
        Self {
            seed: 1,
            epochs: None,
            patience: None,
            batch_size: 32,
            lr: 0.001,
            clip: 5.0,
            dropout: 0.5,
            unk_replace: 0.1,
            l2_anchor: 0.0,
            min_count: 1,
            head: None,
            scheme: None,
            constrained: true,
            freeze_embeddings: false,
            d_word: None,
            hidden: None,
            layers: None,
            char_dim: enc.char_dim,
            filter_widths: enc.filter_widths,
            filter_counts: enc.filter_counts,
            highway_layers: enc.highway_layers,
            lm_dim: enc.output_dim,
            max_word_len: enc.max_word_len,
            lm_layers: lm.layers,
            lm_hidden: lm.hidden,
            policy: None,
            normalization: Normalization::default(),
            fold_case: false,
            corpus: None,
            char_corpus: Vec::new(),
            train: None,
            dev: None,
            test: None,
            vectors: None,
            init: None,
            lm: None,
            gold: None,
            pred: None,
            input: None,
            out: None,
        }
    }
}

/// A rejected setting.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// Line in the config file; `None` for flags and cross-field checks.
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "config line {line}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .trim()
        .parse()
        .map_err(|_| format!("invalid value `{value}` for `{key}`"))
}

fn boolean(key: &str, value: &str) -> Result<bool, String> {
    match value.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!(
            "invalid value `{value}` for `{key}` (true or false)"
        )),
    }
}

fn list(key: &str, value: &str) -> Result<Vec<usize>, String> {
    value.split(',').map(|v| num(key, v)).collect()
}

fn parsed<T: FromStr<Err = Error>>(value: &str) -> Result<T, String> {
    value.trim().parse().map_err(|e: Error| e.to_string())
}

impl RunConfig {
    /// Parses config text. Unknown keys and repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut config = Self::default();
        let mut seen = std::collections::BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |message: String| ConfigError {
                line: Some(i + 1),
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected key=value, found `{line}`")))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(at(format!("`{key}` is set twice")));
            }
            config.set(key, value.trim()).map_err(at)?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            line: None,
            message: format!("cannot read config {}: {e}", path.display()),
        })?;
        Self::parse(&text).map_err(|e| ConfigError {
            message: format!("{}: {}", path.display(), e.message),
            ..e
        })
    }

    /// Applies one setting. Flags go through here too, so file and command
    /// line accept exactly the same keys and values.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let path = || PathBuf::from(value);
        match key {
            "seed" => self.seed = num(key, value)?,
            "epochs" => self.epochs = Some(num(key, value)?),
            "patience" => self.patience = Some(num(key, value)?),
            "batch_size" => self.batch_size = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "clip" => self.clip = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "unk_replace" => self.unk_replace = num(key, value)?,
            "l2_anchor" => self.l2_anchor = num(key, value)?,
            "min_count" => self.min_count = num(key, value)?,
            "head" => self.head = Some(parsed(value)?),
            "scheme" => self.scheme = Some(parsed(value)?),
            "constrained" => self.constrained = boolean(key, value)?,
            "freeze_embeddings" => self.freeze_embeddings = boolean(key, value)?,
            "d_word" => self.d_word = Some(num(key, value)?),
            "hidden" => self.hidden = Some(num(key, value)?),
            "layers" => self.layers = Some(num(key, value)?),
            "char_dim" => self.char_dim = num(key, value)?,
            "filter_widths" => self.filter_widths = list(key, value)?,
            "filter_counts" => self.filter_counts = list(key, value)?,
            "highway_layers" => self.highway_layers = num(key, value)?,
            "lm_dim" => self.lm_dim = num(key, value)?,
            "max_word_len" => self.max_word_len = num(key, value)?,
            "lm_layers" => self.lm_layers = num(key, value)?,
            "lm_hidden" => self.lm_hidden = num(key, value)?,
            "policy" => {
                self.policy = Some(TransferPolicy::parse(value).map_err(|e| e.to_string())?)
            }
            "normalization" => self.normalization = parsed(value)?,
            "fold_case" => self.fold_case = boolean(key, value)?,
            "corpus" => self.corpus = Some(path()),
            "char_corpus" => {
                self.char_corpus = value.split(',').map(|p| PathBuf::from(p.trim())).collect()
            }
            "train" => self.train = Some(path()),
            "dev" => self.dev = Some(path()),
            "test" => self.test = Some(path()),
            "vectors" => self.vectors = Some(path()),
            "init" => self.init = Some(path()),
            "lm" => self.lm = Some(path()),
            "gold" => self.gold = Some(path()),
            "pred" => self.pred = Some(path()),
            "input" => self.input = Some(path()),
            "out" => self.out = Some(path()),
            other => return Err(format!("unknown setting `{other}`")),
        }
        Ok(())
    }

    /// Cross-field checks that do not depend on the command.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |message: String| {
            Err(ConfigError {
                line: None,
                message,
            })
        };
        let positive = [
            ("batch_size", self.batch_size),
            ("min_count", self.min_count),
            ("char_dim", self.char_dim),
            ("lm_dim", self.lm_dim),
            ("lm_layers", self.lm_layers),
            ("lm_hidden", self.lm_hidden),
            ("max_word_len", self.max_word_len),
        ];
        let optional = [
            ("epochs", self.epochs),
            ("patience", self.patience),
            ("d_word", self.d_word),
            ("hidden", self.hidden),
            ("layers", self.layers),
        ];
        for (key, v) in positive
            .into_iter()
            .chain(optional.into_iter().filter_map(|(k, v)| v.map(|v| (k, v))))
        {
            if v == 0 {
                return fail(format!("`{key}` must be positive"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("`lr` must be positive".into());
        }
        if !(self.clip > 0.0) {
            return fail("`clip` must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("`dropout` must be in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.unk_replace) {
            return fail("`unk_replace` must be in [0, 1]".into());
        }
        if !(self.l2_anchor >= 0.0) {
            return fail("`l2_anchor` must be non-negative".into());
        }
        Ok(())
    }

    pub fn lm_arch(&self) -> BiLmConfig {
        BiLmConfig {
            encoder: CharEncoderConfig {
                char_dim: self.char_dim,
                filter_widths: self.filter_widths.clone(),
                filter_counts: self.filter_counts.clone(),
                highway_layers: self.highway_layers,
                output_dim: self.lm_dim,
                max_word_len: self.max_word_len,
            },
            layers: self.lm_layers,
            hidden: self.lm_hidden,
        }
    }

    pub fn lm_train(&self, default_epochs: usize) -> LmTrainConfig {
        LmTrainConfig {
            epochs: self.epochs.unwrap_or(default_epochs),
            batch_size: self.batch_size,
            lr: self.lr,
            clip: self.clip,
            l2_anchor: self.l2_anchor,
            seed: self.seed,
        }
    }

    /// Tagger architecture; unset trunk sizes come from `base`.
    pub fn tagger_arch(&self, base: &TaggerArch, default_head: Head) -> TaggerArch {
        TaggerArch {
            d_word: self.d_word.unwrap_or(base.d_word),
            hidden: self.hidden.unwrap_or(base.hidden),
            layers: self.layers.unwrap_or(base.layers),
            head: self.head.unwrap_or(default_head),
            constrained: self.constrained,
            freeze_embeddings: self.freeze_embeddings,
            lm: base.lm.clone(),
        }
    }

    pub fn tagger_train(&self) -> TaggerTrainConfig {
        TaggerTrainConfig {
            epochs: self.epochs.unwrap_or(TaggerTrainConfig::default().epochs),
            patience: self.patience,
            target_score: None,
            batch_size: self.batch_size,
            lr: self.lr,
            clip: self.clip,
            dropout: self.dropout,
            unk_replace: self.unk_replace,
            l2_anchor: self.l2_anchor,
            seed: self.seed,
        }
    }

    pub fn overlap(&self) -> OverlapOptions {
        OverlapOptions {
            fold_case: self.fold_case,
            normalization: self.normalization,
        }
    }

    /// Every input path that is set, with its key.
    pub fn inputs(&self) -> Vec<(&'static str, &Path)> {
        let single = [
            ("corpus", &self.corpus),
            ("train", &self.train),
            ("dev", &self.dev),
            ("test", &self.test),
            ("vectors", &self.vectors),
            ("init", &self.init),
            ("lm", &self.lm),
            ("gold", &self.gold),
            ("pred", &self.pred),
            ("input", &self.input),
        ];
        let mut out: Vec<_> = single
            .into_iter()
            .filter_map(|(k, p)| p.as_deref().map(|p| (k, p)))
            .collect();
        out.extend(
            self.char_corpus
                .iter()
                .map(|p| ("char_corpus", p.as_path())),
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_comments_and_blanks() {
        let c = RunConfig::parse(
            "# run\nseed = 7\n\nepochs=3 # short\nhead=softmax\nfilter_widths=1,2\n",
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.epochs, Some(3));
        assert_eq!(c.head, Some(Head::Softmax));
        assert_eq!(c.filter_widths, vec![1, 2]);
        assert_eq!(c.batch_size, 32);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = RunConfig::parse("seed=1\n\nlr=fast\n").unwrap_err();
        assert_eq!(e.line, Some(3));
        assert!(e.message.contains("lr"));
        assert_eq!(
            RunConfig::parse("seed=1\nbogus=2").unwrap_err().line,
            Some(2)
        );
        assert_eq!(RunConfig::parse("seed 1").unwrap_err().line, Some(1));
        assert_eq!(
            RunConfig::parse("seed=1\nseed=2").unwrap_err().line,
            Some(2)
        );
    }

    #[test]
    fn set_overrides_file_values() {
        let mut c = RunConfig::parse("seed=3\ndropout=0.2").unwrap();
        c.set("seed", "9").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.dropout, 0.2);
    }

    #[test]
    fn validation_rejects_nonpositive_values() {
        let mut c = RunConfig::default();
        assert!(c.validate().is_ok());
        c.set("epochs", "0").unwrap();
        assert!(c.validate().unwrap_err().message.contains("epochs"));
        let mut c = RunConfig::default();
        c.set("dropout", "1").unwrap();
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.set("lr", "-1").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn policy_and_head_parse_through_core() {
        let mut c = RunConfig::default();
        c.set("policy", "pos,crf=copy").unwrap();
        assert!(c.policy.is_some());
        assert!(c.set("head", "hmm").is_err());
        assert!(c.set("policy", "nonsense").is_err());
    }
}
