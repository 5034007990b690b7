//! Four-component answerability score: named entities, important words,
//! function words and question type.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Leading words that determine the question type.
pub const WH_WORDS: &[&str] = &[
    "what", "which", "who", "whom", "whose", "when", "where", "why", "how",
];

pub const AUXILIARIES: &[&str] = &[
    "is", "are", "was", "were", "am", "be", "been", "being", "do", "does", "did", "has", "have",
    "had", "can", "could", "will", "would", "shall", "should", "may", "might", "must",
];

pub const FUNCTION_WORDS: &[&str] = &[
    "a", "an", "the", "of", "in", "on", "at", "to", "for", "from", "by", "with", "about", "as",
    "into", "through", "during", "before", "after", "above", "below", "between", "under", "over",
    "and", "or", "but", "nor", "so", "yet", "if", "than", "then", "that", "this", "these", "those",
    "there", "here", "it", "its", "he", "she", "they", "them", "his", "her", "their", "him", "we",
    "us", "our", "you", "your", "i", "me", "my", "not", "no", "many", "much", "some", "any", "all",
    "each", "every", "other", "another", "such", "own", "same", "both", "few", "more", "most",
    "is", "are", "was", "were", "am", "be", "been", "being", "do", "does", "did", "has", "have",
    "had", "can", "could", "will", "would", "shall", "should", "may", "might", "must", "up",
    "down", "out", "off", "again", "also", "only", "very", "too", "just",
];

fn is_punct(t: &str) -> bool {
    !t.is_empty() && t.chars().all(|c| !c.is_alphanumeric())
}

fn is_number(t: &str) -> bool {
    t.chars().any(|c| c.is_ascii_digit())
        && t.chars().all(|c| c.is_ascii_digit() || c == '.' || c == ',')
}

/// Lowercased tokens treated as named entities.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NeLexicon {
    entries: HashSet<String>,
}

impl NeLexicon {
    /// Capitalized raw tokens that are not function or question words.
    pub fn from_raw<'a, I: IntoIterator<Item = &'a str>>(raw: I) -> Self {
        let mut entries = HashSet::new();
        for t in raw {
            if t.chars().next().is_some_and(char::is_uppercase) {
                let l = t.to_lowercase();
                if !FUNCTION_WORDS.contains(&l.as_str()) && !WH_WORDS.contains(&l.as_str()) {
                    entries.insert(l);
                }
            }
        }
        Self { entries }
    }

    /// Adds one entity per line of a gazetteer file (each token of the line).
    pub fn add_gazetteer(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for line in text.lines() {
            for t in line.split_whitespace() {
                self.entries.insert(t.to_lowercase());
            }
        }
        Ok(())
    }

    pub fn extend(&mut self, other: &NeLexicon) {
        self.entries.extend(other.entries.iter().cloned());
    }

    pub fn contains(&self, t: &str) -> bool {
        self.entries.contains(t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnswerabilityWeights {
    pub named_entities: f64,
    pub important_words: f64,
    pub function_words: f64,
    pub question_type: f64,
}

impl Default for AnswerabilityWeights {
    fn default() -> Self {
        Self {
            named_entities: 0.25,
            important_words: 0.25,
            function_words: 0.25,
            question_type: 0.25,
        }
    }
}

impl AnswerabilityWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [
            self.named_entities,
            self.important_words,
            self.function_words,
            self.question_type,
        ];
        if w.iter().any(|&v| v < 0.0 || !v.is_finite()) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "answerability weights must be nonnegative and sum to 1, got {w:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnswerabilityComponents {
    pub named_entities: f64,
    pub important_words: f64,
    pub function_words: f64,
    pub question_type: f64,
}

#[derive(Default)]
struct Split<'a> {
    entities: Vec<&'a str>,
    important: Vec<&'a str>,
    function: Vec<&'a str>,
    qtype: Option<&'a str>,
}

fn split<'a>(tokens: &'a [String], lex: &NeLexicon) -> Split<'a> {
    let mut s = Split::default();
    for t in tokens {
        let t = t.as_str();
        if is_punct(t) {
            continue;
        }
        if WH_WORDS.contains(&t) {
            if s.qtype.is_none() {
                s.qtype = Some(t);
            }
        } else if is_number(t) || lex.contains(t) {
            s.entities.push(t);
        } else if FUNCTION_WORDS.contains(&t) {
            s.function.push(t);
        } else {
            s.important.push(t);
        }
    }
    if s.qtype.is_none() {
        s.qtype = tokens
            .iter()
            .map(String::as_str)
            .find(|t| !is_punct(t))
            .filter(|t| AUXILIARIES.contains(t));
    }
    s
}

/// Multiset F1; two empty sets match perfectly.
fn multiset_f1(a: &[&str], b: &[&str]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for &t in b {
        *counts.entry(t).or_insert(0) += 1;
    }
    let mut common = 0;
    for &t in a {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let p = common as f64 / a.len() as f64;
    let r = common as f64 / b.len() as f64;
    2.0 * p * r / (p + r)
}

/// Returns `(Σ weight_k · component_k, components)` for lowercased token
/// sequences.
pub fn answerability_score(
    cand: &[String],
    reference: &[String],
    lex: &NeLexicon,
    w: &AnswerabilityWeights,
) -> (f64, AnswerabilityComponents) {
    let c = split(cand, lex);
    let r = split(reference, lex);
    let comp = AnswerabilityComponents {
        named_entities: multiset_f1(&c.entities, &r.entities),
        important_words: multiset_f1(&c.important, &r.important),
        function_words: multiset_f1(&c.function, &r.function),
        question_type: if c.qtype == r.qtype { 1.0 } else { 0.0 },
    };
    let score = w.named_entities * comp.named_entities
        + w.important_words * comp.important_words
        + w.function_words * comp.function_words
        + w.question_type * comp.question_type;
    (score, comp)
}
