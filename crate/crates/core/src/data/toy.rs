//! Seeded synthetic corpora for desk-scale experiments.
//!
//! - `copy-span`: two-fact passages; the answer is the subject of one fact and
//!   the question is a wh-word followed by the rest of that fact.
//! - `copy-span-oov`: as above, with the object noun of every fact replaced by
//!   a fresh made-up word, so questions can only be completed by copying.
//! - `corrupt-draft`: the question is a truncated template (wh-word, verb,
//!   object) completed with the fact's location and/or year modifiers.
//! - `counting`: "how many people have a X ?" over a list of ownership facts,
//!   with a numeric answer that is not a passage span.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{CorpusSplit, Example, Span};
use crate::error::{Error, Result};

const PEOPLE: &[&str] = &[
    "Alice", "Bob", "Carol", "David", "Emma", "Frank", "Grace", "Henry", "Irene", "Jack", "Karen",
    "Liam",
];
const THINGS: &[&str] = &["storm", "fire", "flood", "wind", "crowd", "army"];
const VERBS: &[&str] = &[
    "painted", "visited", "repaired", "sold", "bought", "cleaned", "built", "found", "opened",
    "moved",
];
const ADJS: &[&str] = &["red", "old", "small", "large", "green", "quiet", "bright", "wooden"];
const NOUNS: &[&str] = &["barn", "tower", "bridge", "boat", "house", "garden", "car", "shop", "mill", "gate"];
const PLACES: &[&str] = &["Paris", "Rome", "Oslo", "Lima", "Cairo", "Delhi", "Berlin", "Madrid"];
const ANIMALS: &[&str] = &["dog", "cat", "bird", "horse", "goat"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ToySpec {
    CopySpan,
    CopySpanOov,
    CorruptDraft,
    Counting,
}

impl ToySpec {
    pub fn name(&self) -> &'static str {
        match self {
            ToySpec::CopySpan => "copy-span",
            ToySpec::CopySpanOov => "copy-span-oov",
            ToySpec::CorruptDraft => "corrupt-draft",
            ToySpec::Counting => "counting",
        }
    }
}

impl FromStr for ToySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy-span" => Ok(ToySpec::CopySpan),
            "copy-span-oov" => Ok(ToySpec::CopySpanOov),
            "corrupt-draft" => Ok(ToySpec::CorruptDraft),
            "counting" => Ok(ToySpec::Counting),
            other => Err(Error::usage(format!(
                "unknown toy corpus {other:?} (expected copy-span, copy-span-oov, corrupt-draft or counting)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ToySizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl ToySizes {
    pub fn new(train: usize, validation: usize, test: usize) -> Self {
        Self {
            train,
            validation,
            test,
        }
    }
}

struct Fact {
    subject: Vec<String>,
    is_person: bool,
    rest: Vec<String>,
    modifiers: Vec<String>,
}

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    const CONS: &[u8] = b"bcdfghjklmnprstvz";
    const VOW: &[u8] = b"aeiou";
    let syll = rng.gen_range(3..=4);
    let mut s = String::new();
    for _ in 0..syll {
        s.push(*CONS.choose(rng).unwrap() as char);
        s.push(*VOW.choose(rng).unwrap() as char);
    }
    s
}

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).unwrap()
}

fn fact(rng: &mut ChaCha8Rng, subject: &str, is_person: bool, oov: bool, modifiers: bool) -> Fact {
    let subject_toks: Vec<String> = if is_person {
        vec![subject.to_string()]
    } else {
        vec!["The".to_string(), subject.to_string()]
    };
    let noun = if oov { pseudo_word(rng) } else { pick(rng, NOUNS).to_string() };
    let rest = vec![
        pick(rng, VERBS).to_string(),
        "the".to_string(),
        pick(rng, ADJS).to_string(),
        noun,
    ];
    let mut mods = Vec::new();
    if modifiers {
        let (place, year) = match rng.gen_range(0..3) {
            0 => (true, false),
            1 => (false, true),
            _ => (true, true),
        };
        if place {
            mods.push("in".to_string());
            mods.push(pick(rng, PLACES).to_string());
        }
        if year {
            mods.push("in".to_string());
            mods.push(rng.gen_range(1850..2000).to_string());
        }
    } else {
        mods.push("in".to_string());
        mods.push(pick(rng, PLACES).to_string());
    }
    Fact {
        subject: subject_toks,
        is_person,
        rest,
        modifiers: mods,
    }
}

fn two_fact_example(rng: &mut ChaCha8Rng, id: String, oov: bool, corrupt: bool) -> Result<Example> {
    let mut subjects: Vec<(String, bool)> = Vec::new();
    while subjects.len() < 2 {
        let cand = if rng.gen_bool(0.7) {
            (pick(rng, PEOPLE).to_string(), true)
        } else {
            (pick(rng, THINGS).to_string(), false)
        };
        if !subjects.iter().any(|s| s.0 == cand.0) {
            subjects.push(cand);
        }
    }
    let facts: Vec<Fact> = subjects
        .iter()
        .map(|(s, p)| fact(rng, s, *p, oov, corrupt))
        .collect();
    let target = rng.gen_range(0..2);
    let mut passage: Vec<String> = Vec::new();
    let mut span = Span { start: 0, len: 0 };
    for (k, f) in facts.iter().enumerate() {
        if k == target {
            span = Span {
                start: passage.len(),
                len: f.subject.len(),
            };
        }
        passage.extend(f.subject.iter().cloned());
        passage.extend(f.rest.iter().cloned());
        passage.extend(f.modifiers.iter().cloned());
        passage.push(".".to_string());
    }
    let f = &facts[target];
    let wh = if f.is_person { "Who" } else { "What" };
    let mut question = vec![wh.to_string()];
    question.extend(f.rest.iter().cloned());
    let prefix: Vec<String> = question.iter().map(|t| t.to_lowercase()).collect();
    question.extend(f.modifiers.iter().cloned());
    question.push("?".to_string());
    let answer = f.subject.clone();
    let mut ex = Example::new(id, passage, answer, Some(span), question)?;
    if corrupt {
        ex.template_prefix = Some(prefix);
    }
    Ok(ex)
}

fn counting_example(rng: &mut ChaCha8Rng, id: String) -> Result<Example> {
    let n = rng.gen_range(3..=5);
    let mut people: Vec<&str> = PEOPLE.to_vec();
    people.shuffle(rng);
    let mut passage = Vec::new();
    let mut owned = Vec::new();
    for p in people.iter().take(n) {
        let a = pick(rng, ANIMALS);
        owned.push(a);
        passage.extend([p.to_string(), "has".into(), "a".into(), a.to_string(), ".".into()]);
    }
    let target = *owned.choose(rng).unwrap();
    let count = owned.iter().filter(|&&a| a == target).count();
    let question: Vec<String> = ["How", "many", "people", "have", "a", target, "?"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    Example::new(id, passage, vec![count.to_string()], None, question)
}

/// Deterministic corpus for `spec` (see the module docs for the names).
pub fn make_toy_corpus(spec: &str, sizes: ToySizes, seed: u64) -> Result<CorpusSplit> {
    let kind: ToySpec = spec.parse()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gen = |split: &str, n: usize, rng: &mut ChaCha8Rng| -> Result<Vec<Example>> {
        (0..n)
            .map(|i| {
                let id = format!("{}-{split}-{i:05}", kind.name());
                match kind {
                    ToySpec::CopySpan => two_fact_example(rng, id, false, false),
                    ToySpec::CopySpanOov => two_fact_example(rng, id, true, false),
                    ToySpec::CorruptDraft => two_fact_example(rng, id, false, true),
                    ToySpec::Counting => counting_example(rng, id),
                }
            })
            .collect()
    };
    let train = gen("train", sizes.train, &mut rng)?;
    let validation = gen("val", sizes.validation, &mut rng)?;
    let test = gen("test", sizes.test, &mut rng)?;
    let split = CorpusSplit {
        train,
        validation,
        test,
        provenance: format!("toy:{} seed={seed}", kind.name()),
    };
    split.check_disjoint()?;
    Ok(split)
}
