//! Readers for SQuAD v1.1 and HotpotQA JSON.

use std::path::Path;

use serde::Deserialize;

use crate::data::tokenize::{tokenize, tokenize_lower, tokenize_raw};
use crate::data::{Example, Span};
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct SquadFile {
    data: Vec<SquadArticle>,
}

#[derive(Deserialize)]
struct SquadArticle {
    paragraphs: Vec<SquadParagraph>,
}

#[derive(Deserialize)]
struct SquadParagraph {
    context: String,
    qas: Vec<SquadQa>,
}

#[derive(Deserialize)]
struct SquadQa {
    id: String,
    question: String,
    answers: Vec<SquadAnswer>,
}

#[derive(Deserialize)]
struct SquadAnswer {
    text: String,
    answer_start: usize,
}

#[derive(Clone, Debug, Default)]
pub struct LoadReport {
    pub examples: Vec<Example>,
    /// Answers whose character offsets did not fall on token boundaries.
    pub skipped: usize,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// One example per question, using its first answer. Answers that do not
/// align with token boundaries are skipped and counted.
pub fn load_squad_json(path: &Path) -> Result<LoadReport> {
    let text = read(path)?;
    parse_squad(&text).map_err(|e| match e {
        Error::Json { source, .. } => Error::json(path, source),
        other => other,
    })
}

pub fn parse_squad(text: &str) -> Result<LoadReport> {
    let file: SquadFile = serde_json::from_str(text).map_err(|e| Error::json("<squad>", e))?;
    let mut report = LoadReport::default();
    for article in file.data {
        for para in article.paragraphs {
            let toks = tokenize(&para.context);
            let raw: Vec<String> = toks.iter().map(|t| t.raw.clone()).collect();
            for qa in para.qas {
                let Some(ans) = qa.answers.first() else {
                    report.skipped += 1;
                    continue;
                };
                let start_char = ans.answer_start;
                let end_char = start_char + ans.text.chars().count();
                let first = toks.iter().position(|t| t.start == start_char);
                let last = toks.iter().position(|t| t.end == end_char);
                let answer = tokenize_lower(&ans.text);
                let span = match (first, last) {
                    (Some(a), Some(b)) if b >= a && b - a + 1 == answer.len() => Span {
                        start: a,
                        len: b - a + 1,
                    },
                    _ => {
                        log::warn!("skipping {}: answer offset not on a token boundary", qa.id);
                        report.skipped += 1;
                        continue;
                    }
                };
                match Example::new(
                    qa.id.clone(),
                    raw.clone(),
                    answer,
                    Some(span),
                    tokenize_raw(&qa.question),
                ) {
                    Ok(ex) => report.examples.push(ex),
                    Err(e) => {
                        log::warn!("skipping {}: {e}", qa.id);
                        report.skipped += 1;
                    }
                }
            }
        }
    }
    Ok(report)
}

#[derive(Deserialize)]
struct HotpotRecord {
    #[serde(rename = "_id")]
    id: String,
    question: String,
    answer: String,
    supporting_facts: Vec<(String, usize)>,
    context: Vec<(String, Vec<String>)>,
}

/// HotpotQA: the passage is the supporting-fact sentences concatenated in
/// document order. Yes/no answers, and answers not found verbatim in that
/// passage, become non-span examples.
pub fn load_hotpot_json(path: &Path) -> Result<LoadReport> {
    let text = read(path)?;
    let records: Vec<HotpotRecord> = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    let mut report = LoadReport::default();
    for r in records {
        let mut sentences = Vec::new();
        for (title, sents) in &r.context {
            for (k, s) in sents.iter().enumerate() {
                if r.supporting_facts.iter().any(|(t, i)| t == title && *i == k) {
                    sentences.push(s.as_str());
                }
            }
        }
        let passage = tokenize_raw(&sentences.join(" "));
        let answer = tokenize_lower(&r.answer);
        if passage.is_empty() || answer.is_empty() {
            report.skipped += 1;
            continue;
        }
        let lower: Vec<String> = passage.iter().map(|t| t.to_lowercase()).collect();
        let is_yes_no = matches!(answer.as_slice(), [a] if a == "yes" || a == "no");
        let span = if is_yes_no {
            None
        } else {
            lower
                .windows(answer.len())
                .position(|w| w == answer.as_slice())
                .map(|start| Span {
                    start,
                    len: answer.len(),
                })
        };
        match Example::new(r.id.clone(), passage, answer, span, tokenize_raw(&r.question)) {
            Ok(ex) => report.examples.push(ex),
            Err(e) => {
                log::warn!("skipping {}: {e}", r.id);
                report.skipped += 1;
            }
        }
    }
    Ok(report)
}
