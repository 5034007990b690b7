use std::collections::HashMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::Example;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SOS: usize = 2;
pub const EOS: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];
pub const DEFAULT_VOCAB_CAP: usize = 30_000;

/// Token/id mapping with four reserved ids (PAD, UNK, SOS, EOS) first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds from non-reserved tokens in id order.
    pub fn from_tokens<I: IntoIterator<Item = String>>(words: I) -> Self {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, usize> =
            tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        for w in words {
            if index.contains_key(&w) {
                continue;
            }
            index.insert(w.clone(), tokens.len());
            tokens.push(w);
        }
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Id of `token`, or UNK.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Non-reserved tokens in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    /// File form: one token per line, line number = id - 4.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for w in self.words() {
            s.push_str(w);
            s.push('\n');
        }
        s
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_tokens(
            text.lines().filter(|l| !l.is_empty()).map(str::to_string),
        ))
    }
}

/// Counts passage and question tokens and keeps the `cap` most frequent,
/// ties broken lexicographically.
pub fn build_vocab(examples: &[Example], cap: usize) -> Result<Vocabulary> {
    if cap == 0 {
        return Err(Error::usage("vocabulary cap must be at least 1"));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for ex in examples {
        for t in ex.passage.iter().chain(&ex.question) {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut entries: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|(t, _)| !RESERVED.contains(t))
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    entries.truncate(cap);
    Ok(Vocabulary::from_tokens(
        entries.into_iter().map(|(t, _)| t.to_string()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(passage: &str, question: &str) -> Example {
        Example::from_text("x", passage, question, passage.split(' ').next().unwrap(), Some(0))
            .unwrap()
    }

    #[test]
    fn frequency_order() {
        let v = build_vocab(&[ex("a a b", "b ?")], 10).unwrap();
        // a:2, b:2 → tie, lexicographic; then "?"
        assert!(v.id("a") < v.id("b"));
        let v = build_vocab(&[ex("a a b", "a")], 10).unwrap();
        assert!(v.id("a") < v.id("b"));
        assert_eq!(v.id("a"), 4);
    }

    #[test]
    fn lexicographic_tie_break_under_cap() {
        let v = build_vocab(&[ex("dog cat", "cat dog")], 1).unwrap();
        assert!(v.contains("cat"));
        assert!(!v.contains("dog"));
        assert_eq!(v.id("dog"), UNK);
        assert_eq!(v.len(), 5);
    }

    #[test]
    fn deterministic_and_file_round_trip() {
        let exs = [ex("the cat sat on the mat", "where did the cat sit ?")];
        let a = build_vocab(&exs, 100).unwrap();
        let b = build_vocab(&exs, 100).unwrap();
        assert_eq!(a, b);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        a.save(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), "the");
        let c = Vocabulary::load(&p).unwrap();
        assert_eq!(a, c);
        assert_eq!(a.hash(), c.hash());
    }

    #[test]
    fn default_cap() {
        assert_eq!(DEFAULT_VOCAB_CAP, 30_000);
    }
}
