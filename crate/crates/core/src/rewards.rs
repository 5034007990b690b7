//! Sequence-level rewards in [0, 1] for fine-tuning.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::{answerability_score, bleu_n, originality, AnswerabilityWeights, NeLexicon};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RewardKind {
    Fluency,
    Answerability,
    Originality,
}

impl RewardKind {
    pub fn name(&self) -> &'static str {
        match self {
            RewardKind::Fluency => "fluency",
            RewardKind::Answerability => "answerability",
            RewardKind::Originality => "originality",
        }
    }
}

impl FromStr for RewardKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fluency" => Ok(RewardKind::Fluency),
            "answerability" => Ok(RewardKind::Answerability),
            "originality" => Ok(RewardKind::Originality),
            other => Err(Error::config(format!(
                "unknown reward {other:?} (expected fluency, answerability or originality)"
            ))),
        }
    }
}

/// Smoothed sentence BLEU-4 against the reference.
pub fn reward_fluency(cand: &[String], reference: &[String]) -> f64 {
    bleu_n(cand, &[reference.to_vec()], 4, true)
}

pub fn reward_answerability(
    cand: &[String],
    reference: &[String],
    lex: &NeLexicon,
    weights: &AnswerabilityWeights,
) -> f64 {
    answerability_score(cand, reference, lex, weights).0
}

/// High when the candidate does not reuse passage n-grams.
pub fn reward_originality(cand: &[String], passage: &[String]) -> f64 {
    originality(cand, passage)
}

/// Everything a reward may look at besides the candidate.
pub struct RewardContext<'a> {
    pub reference: &'a [String],
    pub passage: &'a [String],
    pub lexicon: &'a NeLexicon,
}

#[derive(Clone, Debug)]
pub struct RewardFn {
    pub kind: RewardKind,
    pub weights: AnswerabilityWeights,
}

impl RewardFn {
    pub fn new(kind: RewardKind) -> Self {
        Self {
            kind,
            weights: AnswerabilityWeights::default(),
        }
    }

    pub fn score(&self, cand: &[String], ctx: &RewardContext) -> f64 {
        match self.kind {
            RewardKind::Fluency => reward_fluency(cand, ctx.reference),
            RewardKind::Answerability => {
                reward_answerability(cand, ctx.reference, ctx.lexicon, &self.weights)
            }
            RewardKind::Originality => reward_originality(cand, ctx.passage),
        }
    }
}
