//! Seeded synthetic corpora.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqxfer::corpus::LabeledSequence;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

/// Small English-like corpus from a handful of templates.
pub fn toy_lm_corpus(n: usize, seed: u64) -> Vec<Vec<String>> {
    let subjects = [
        "the cat",
        "a dog",
        "the old man",
        "my sister",
        "the bird",
        "a child",
    ];
    let verbs = ["saw", "liked", "chased", "found", "fed"];
    let objects = [
        "the ball",
        "a fish",
        "the red hat",
        "some bread",
        "the garden",
    ];
    let tails = ["", "today", "in the park", "again", "at night"];
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let s = format!(
                "{} {} {} {} .",
                subjects.choose(&mut r).unwrap(),
                verbs.choose(&mut r).unwrap(),
                objects.choose(&mut r).unwrap(),
                tails.choose(&mut r).unwrap()
            );
            words(&s)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Per,
    Loc,
    Org,
}

impl Kind {
    fn tag(self) -> &'static str {
        match self {
            Kind::Per => "PER",
            Kind::Loc => "LOC",
            Kind::Org => "ORG",
        }
    }
}

/// A template piece: a function word (by concept index) or an entity slot.
#[derive(Clone, Copy, Debug)]
enum Piece {
    F(usize),
    E(Option<Kind>),
}

use Piece::{E, F};

/// Sentence shapes shared by both synthetic languages. `E(None)` slots take
/// an entity of any type, so only the word itself reveals its type.
const TEMPLATES: &[&[Piece]] = &[
    &[E(Some(Kind::Per)), F(0), E(Some(Kind::Loc)), F(9)],
    &[E(Some(Kind::Per)), F(1), F(2), E(Some(Kind::Org)), F(9)],
    &[
        E(Some(Kind::Org)),
        F(3),
        F(4),
        F(5),
        E(Some(Kind::Loc)),
        F(9),
    ],
    &[F(6), E(Some(Kind::Per)), F(7), E(Some(Kind::Per)), F(9)],
    &[E(None), F(8), F(10), F(9)],
    &[F(11), F(12), E(None), F(9)],
    &[F(13), F(14), F(15), F(9)],
    &[
        E(Some(Kind::Per)),
        F(16),
        F(17),
        E(Some(Kind::Loc)),
        F(18),
        E(Some(Kind::Org)),
        F(9),
    ],
];

const LANG_A: [&str; 19] = [
    "visited",
    "works",
    "at",
    "opened",
    "an",
    "office",
    "yesterday",
    "met",
    "is",
    ".",
    "famous",
    "people",
    "discuss",
    "the",
    "weather",
    "changed",
    "travelled",
    "to",
    "with",
];

const LANG_B: [&str; 19] = [
    "mengunjungi",
    "bekerja",
    "di",
    "membuka",
    "sebuah",
    "kantor",
    "kemarin",
    "bertemu",
    "adalah",
    "|",
    "terkenal",
    "orang",
    "membahas",
    "cuaca",
    "hari",
    "berubah",
    "pergi",
    "ke",
    "bersama",
];

/// Entity names with type-specific endings. Each name has a
/// language-A spelling and a language-B spelling that differs only by
/// regular letter substitutions (c→k, ph→f, y→i, q→k).
pub struct Lexicon {
    pub entries: Vec<(Kind, Vec<String>, Vec<String>)>,
}

fn respell(w: &str) -> String {
    w.replace("ph", "f")
        .replace('c', "k")
        .replace('y', "i")
        .replace('q', "k")
        .replace('C', "K")
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

impl Lexicon {
    pub fn new(per: usize, loc: usize, org: usize, seed: u64) -> Self {
        let onsets = ["c", "ph", "m", "r", "t", "s", "l", "qu", "b", "d", "y", "n"];
        let vowels = ["a", "e", "i", "o", "u", "y"];
        let mut r = rng(seed);
        let stem = |r: &mut ChaCha8Rng| {
            let syl = r.gen_range(1..=2);
            (0..syl)
                .map(|_| format!("{}{}", onsets.choose(r).unwrap(), vowels.choose(r).unwrap()))
                .collect::<String>()
        };
        let mut seen = std::collections::BTreeSet::new();
        let mut entries = Vec::new();
        for (kind, count, endings) in [
            (Kind::Per, per, &["o", "ina", "ardo"][..]),
            (Kind::Loc, loc, &["cia", "land", "burg"][..]),
            (Kind::Org, org, &["corp", "tech", "bank"][..]),
        ] {
            let mut made = 0;
            while made < count {
                let mut toks = vec![capitalize(&format!(
                    "{}{}",
                    stem(&mut r),
                    endings.choose(&mut r).unwrap()
                ))];
                if kind != Kind::Loc && r.gen_bool(0.3) {
                    let second = match kind {
                        Kind::Per => capitalize(&format!("{}son", stem(&mut r))),
                        _ => "Group".to_string(),
                    };
                    toks.push(second);
                }
                if seen.insert(toks.join(" ")) {
                    let b = toks.iter().map(|t| respell(t)).collect();
                    entries.push((kind, toks, b));
                    made += 1;
                }
            }
        }
        Self { entries }
    }

    fn of_kind(&self, kind: Kind) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].0 == kind)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lang {
    A,
    B,
}

/// Generates labeled sentences in `lang`. Entity slots draw from the
/// entries for which `allowed` holds.
pub fn sentences(
    lex: &Lexicon,
    lang: Lang,
    n: usize,
    allowed: &dyn Fn(usize) -> bool,
    seed: u64,
) -> Vec<LabeledSequence> {
    let pools: Vec<(Kind, Vec<usize>)> = [Kind::Per, Kind::Loc, Kind::Org]
        .into_iter()
        .map(|k| {
            (
                k,
                lex.of_kind(k).into_iter().filter(|&i| allowed(i)).collect(),
            )
        })
        .collect();
    let func = match lang {
        Lang::A => &LANG_A,
        Lang::B => &LANG_B,
    };
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let template = TEMPLATES.choose(&mut r).unwrap();
            let (mut toks, mut tags) = (Vec::new(), Vec::new());
            for piece in template.iter() {
                match *piece {
                    F(i) => {
                        toks.push(func[i].to_string());
                        tags.push("O".to_string());
                    }
                    E(kind) => {
                        let kind = kind.unwrap_or_else(|| {
                            *[Kind::Per, Kind::Loc, Kind::Org].choose(&mut r).unwrap()
                        });
                        let pool = &pools.iter().find(|(k, _)| *k == kind).unwrap().1;
                        let (_, a, b) = &lex.entries[*pool.choose(&mut r).unwrap()];
                        let name = if lang == Lang::A { a } else { b };
                        for (j, t) in name.iter().enumerate() {
                            toks.push(t.clone());
                            tags.push(format!("{}-{}", if j == 0 { "B" } else { "I" }, kind.tag()));
                        }
                    }
                }
            }
            LabeledSequence::new(toks, tags).unwrap()
        })
        .collect()
}

pub fn tokens(data: &[LabeledSequence]) -> Vec<Vec<String>> {
    data.iter().map(|s| s.tokens.clone()).collect()
}
