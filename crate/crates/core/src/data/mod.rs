//! Corpora, vocabulary and batching.

pub mod batch;
pub mod chars;
pub mod squad;
pub mod tagging;
pub mod tokenize;
pub mod toy;
pub mod vocab;

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use batch::{encode_example, make_batches, Batch, BatchStats, EncodedExample, Limits};
pub use tagging::{tag_answer, AnswerTags, Tag};
pub use tokenize::{tokenize, tokenize_lower, tokenize_raw};
pub use toy::{make_toy_corpus, ToySizes, ToySpec};
pub use vocab::{build_vocab, Vocabulary, EOS, PAD, SOS, UNK};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub len: usize,
}

impl Span {
    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

/// One (passage, answer, question) triple.
///
/// Token fields are lowercased; the `raw_*` fields keep the original casing
/// and are used for rule-based named-entity detection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub passage: Vec<String>,
    pub answer: Vec<String>,
    pub answer_span: Option<Span>,
    pub question: Vec<String>,
    pub raw_passage: Vec<String>,
    pub raw_question: Vec<String>,
    /// Truncated question template a synthetic example was completed from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_prefix: Option<Vec<String>>,
}

impl Example {
    pub fn new(
        id: impl Into<String>,
        raw_passage: Vec<String>,
        answer: Vec<String>,
        answer_span: Option<Span>,
        raw_question: Vec<String>,
    ) -> Result<Self> {
        let ex = Self {
            id: id.into(),
            passage: raw_passage.iter().map(|t| t.to_lowercase()).collect(),
            answer: answer.iter().map(|t| t.to_lowercase()).collect(),
            answer_span,
            question: raw_question.iter().map(|t| t.to_lowercase()).collect(),
            raw_passage,
            raw_question,
            template_prefix: None,
        };
        ex.validate()?;
        Ok(ex)
    }

    /// Tokenizes the three texts; `answer_start_token` marks the span.
    pub fn from_text(
        id: &str,
        passage: &str,
        question: &str,
        answer: &str,
        answer_start_token: Option<usize>,
    ) -> Result<Self> {
        let ans = tokenize_lower(answer);
        let span = answer_start_token.map(|start| Span {
            start,
            len: ans.len(),
        });
        Self::new(id, tokenize_raw(passage), ans, span, tokenize_raw(question))
    }

    pub fn validate(&self) -> Result<()> {
        if self.passage.is_empty() || self.answer.is_empty() || self.question.is_empty() {
            return Err(Error::data(format!("example {} has an empty field", self.id)));
        }
        if self.raw_passage.len() != self.passage.len()
            || self.raw_question.len() != self.question.len()
        {
            return Err(Error::data(format!("example {}: raw/lowercase length mismatch", self.id)));
        }
        if let Some(s) = self.answer_span {
            if s.len == 0 || s.end() > self.passage.len() {
                return Err(Error::data(format!(
                    "example {}: answer span {}..{} out of bounds for passage of {}",
                    self.id,
                    s.start,
                    s.end(),
                    self.passage.len()
                )));
            }
            if self.passage[s.start..s.end()] != self.answer[..] {
                return Err(Error::data(format!(
                    "example {}: span tokens do not match the answer",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorpusSplit {
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
    pub test: Vec<Example>,
    pub provenance: String,
}

impl CorpusSplit {
    /// Checks that no id appears in two splits.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for ex in self.train.iter().chain(&self.validation).chain(&self.test) {
            if !seen.insert(ex.id.as_str()) {
                return Err(Error::data(format!("id {} appears in more than one split", ex.id)));
            }
        }
        Ok(())
    }

    /// Holds out the last `fraction` of a seeded shuffle of `examples` for
    /// validation.
    pub fn from_train(examples: Vec<Example>, fraction: f64, seed: u64, provenance: &str) -> Self {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut ex = examples;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        ex.shuffle(&mut rng);
        let n_val = ((ex.len() as f64) * fraction).round() as usize;
        let validation = ex.split_off(ex.len() - n_val.min(ex.len()));
        Self {
            train: ex,
            validation,
            test: Vec::new(),
            provenance: provenance.to_string(),
        }
    }
}

/// JSON-lines record of the corpus file format.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub passage: String,
    pub answer: String,
    pub answer_start_token: Option<usize>,
    pub answer_len: Option<usize>,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_prefix: Option<String>,
}

impl From<&Example> for CorpusRecord {
    fn from(ex: &Example) -> Self {
        Self {
            id: ex.id.clone(),
            passage: ex.raw_passage.join(" "),
            answer: ex.answer.join(" "),
            answer_start_token: ex.answer_span.map(|s| s.start),
            answer_len: ex.answer_span.map(|s| s.len),
            question: ex.raw_question.join(" "),
            template_prefix: ex.template_prefix.as_ref().map(|t| t.join(" ")),
        }
    }
}

impl CorpusRecord {
    pub fn into_example(self) -> Result<Example> {
        let mut ex = Example::from_text(
            &self.id,
            &self.passage,
            &self.question,
            &self.answer,
            self.answer_start_token,
        )?;
        if let (Some(s), Some(n)) = (ex.answer_span, self.answer_len) {
            if s.len != n {
                return Err(Error::data(format!("example {}: answer_len mismatch", self.id)));
            }
        }
        ex.template_prefix = self.template_prefix.map(|t| tokenize_lower(&t));
        Ok(ex)
    }
}

pub fn write_jsonl(examples: &[Example], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for ex in examples {
        let line = serde_json::to_string(&CorpusRecord::from(ex)).map_err(|e| Error::json(path, e))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Example>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord = serde_json::from_str(&line).map_err(|e| Error::json(path, e))?;
        out.push(rec.into_example()?);
    }
    Ok(out)
}
