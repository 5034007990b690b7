//! Evaluation metrics and the corpus-level analyses.

pub mod answerability;
pub mod bleu;
pub mod rouge;

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::tokenize::{tokenize_lower, tokenize_raw};
use crate::error::{Error, Result};

pub use answerability::{answerability_score, AnswerabilityComponents, AnswerabilityWeights, NeLexicon};
pub use bleu::{bleu_from_stats, bleu_n, bleu_stats, corpus_bleu, BleuStats};
pub use rouge::{lcs_len, rouge_l, rouge_l_beta};

pub const DEFAULT_DELTA: f64 = 0.5;

/// `δ · answerability + (1 − δ) · BLEU-4` (sentence level, smoothed).
pub fn qbleu4(
    cand: &[String],
    reference: &[String],
    lex: &NeLexicon,
    weights: &AnswerabilityWeights,
    delta: f64,
) -> f64 {
    let ans = answerability_score(cand, reference, lex, weights).0;
    let b = bleu_n(cand, &[reference.to_vec()], 4, true);
    delta * ans + (1.0 - delta) * b
}

/// Unsmoothed BLEU-2 precision of `tokens` against `passage`, without the
/// brevity penalty (a question is always much shorter than its passage).
pub fn passage_overlap(tokens: &[String], passage: &[String]) -> f64 {
    if tokens.is_empty() || passage.is_empty() {
        return 0.0;
    }
    bleu_from_stats(&bleu_stats(tokens, &[passage.to_vec()]), 2, false, false)
}

/// `1 − passage_overlap`, floored at 0.
pub fn originality(cand: &[String], passage: &[String]) -> f64 {
    (1.0 - passage_overlap(cand, passage)).max(0.0)
}

/// One line of a pairs file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub candidate: String,
    pub references: Vec<String>,
    #[serde(default)]
    pub passage: String,
}

#[derive(Clone, Debug, Default)]
pub struct EvalConfig {
    pub delta: f64,
    pub weights: AnswerabilityWeights,
    /// Extra entities added to every record's lexicon.
    pub gazetteer: NeLexicon,
}

impl EvalConfig {
    pub fn new() -> Self {
        Self {
            delta: DEFAULT_DELTA,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::config(format!("delta must be in [0, 1], got {}", self.delta)));
        }
        self.weights.validate()
    }
}

/// Lowercased tokens and entity lexicon of one record.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub id: String,
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
    pub passage: Vec<String>,
    pub lexicon: NeLexicon,
}

impl Prepared {
    pub fn new(rec: &EvalRecord, gazetteer: &NeLexicon) -> Self {
        let raw: Vec<String> = std::iter::once(rec.passage.as_str())
            .chain(rec.references.iter().map(String::as_str))
            .flat_map(tokenize_raw)
            .collect();
        let mut lexicon = NeLexicon::from_raw(raw.iter().map(String::as_str));
        lexicon.extend(gazetteer);
        Self {
            id: rec.id.clone(),
            candidate: tokenize_lower(&rec.candidate),
            references: rec.references.iter().map(|r| tokenize_lower(r)).collect(),
            passage: tokenize_lower(&rec.passage),
            lexicon,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleScores {
    pub id: String,
    /// Smoothed sentence BLEU-1..4.
    pub bleu: [f64; 4],
    pub rouge_l: f64,
    pub answerability: f64,
    pub components: AnswerabilityComponents,
    pub qbleu4: f64,
}

pub fn score_example(p: &Prepared, cfg: &EvalConfig) -> ExampleScores {
    let first = p.references.first().cloned().unwrap_or_default();
    let mut bleu = [0.0; 4];
    for (n, b) in bleu.iter_mut().enumerate() {
        *b = bleu_n(&p.candidate, &p.references, n + 1, true);
    }
    let rouge = p
        .references
        .iter()
        .map(|r| rouge_l(&p.candidate, r))
        .fold(0.0, f64::max);
    let (ans, components) = answerability_score(&p.candidate, &first, &p.lexicon, &cfg.weights);
    ExampleScores {
        id: p.id.clone(),
        bleu,
        rouge_l: rouge,
        answerability: ans,
        components,
        qbleu4: cfg.delta * ans + (1.0 - cfg.delta) * bleu[3],
    }
}

/// Corpus BLEU from pooled statistics; every other value is a mean of
/// per-example scores. Values are fractions in [0, 1].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub count: usize,
    pub skipped: usize,
    pub bleu: [f64; 4],
    pub rouge_l: f64,
    pub answerability: f64,
    pub components: AnswerabilityComponents,
    pub qbleu4: f64,
    pub per_example: Vec<ExampleScores>,
}

impl MetricReport {
    /// Corpus values scaled by 100, as printed by the command line.
    pub fn summary_percent(&self) -> serde_json::Value {
        let p = |v: f64| v * 100.0;
        serde_json::json!({
            "count": self.count,
            "skipped": self.skipped,
            "bleu1": p(self.bleu[0]),
            "bleu2": p(self.bleu[1]),
            "bleu3": p(self.bleu[2]),
            "bleu4": p(self.bleu[3]),
            "rouge_l": p(self.rouge_l),
            "answerability": p(self.answerability),
            "named_entities": p(self.components.named_entities),
            "important_words": p(self.components.important_words),
            "function_words": p(self.components.function_words),
            "question_type": p(self.components.question_type),
            "qbleu4": p(self.qbleu4),
        })
    }
}

pub fn evaluate_prepared(items: &[Prepared], cfg: &EvalConfig) -> MetricReport {
    let mut r = MetricReport {
        count: items.len(),
        ..Default::default()
    };
    if items.is_empty() {
        return r;
    }
    let mut stats = BleuStats::default();
    for p in items {
        stats.add(&bleu_stats(&p.candidate, &p.references));
        r.per_example.push(score_example(p, cfg));
    }
    for n in 0..4 {
        r.bleu[n] = bleu_from_stats(&stats, n + 1, false, true);
    }
    let n = items.len() as f64;
    let mean = |f: &dyn Fn(&ExampleScores) -> f64| r.per_example.iter().map(f).sum::<f64>() / n;
    r.rouge_l = mean(&|e| e.rouge_l);
    r.answerability = mean(&|e| e.answerability);
    r.qbleu4 = mean(&|e| e.qbleu4);
    r.components = AnswerabilityComponents {
        named_entities: mean(&|e| e.components.named_entities),
        important_words: mean(&|e| e.components.important_words),
        function_words: mean(&|e| e.components.function_words),
        question_type: mean(&|e| e.components.question_type),
    };
    r
}

pub fn evaluate_records(records: &[EvalRecord], cfg: &EvalConfig) -> MetricReport {
    let items: Vec<Prepared> = records.iter().map(|r| Prepared::new(r, &cfg.gazetteer)).collect();
    evaluate_prepared(&items, cfg)
}

/// Reads a pairs file; malformed lines are skipped and counted.
pub fn read_pairs(path: &Path) -> Result<(Vec<EvalRecord>, usize)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut skipped = 0;
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<EvalRecord>(&line) {
            Ok(r) if !r.references.is_empty() => out.push(r),
            Ok(_) => {
                log::warn!("{}:{}: record without references", path.display(), n + 1);
                skipped += 1;
            }
            Err(e) => {
                log::warn!("{}:{}: {e}", path.display(), n + 1);
                skipped += 1;
            }
        }
    }
    Ok((out, skipped))
}

pub fn corpus_evaluate(path: &Path, cfg: &EvalConfig) -> Result<MetricReport> {
    cfg.validate()?;
    let (records, skipped) = read_pairs(path)?;
    let mut r = evaluate_records(&records, cfg);
    r.skipped = skipped;
    Ok(r)
}

/// Mean QBLEU-4 over the first `N` examples after sorting by how much the
/// reference copies the passage (ascending, ties by id). `N` is clamped to the
/// corpus size.
pub fn originality_curve(items: &[Prepared], grid: &[usize], cfg: &EvalConfig) -> Vec<(usize, f64)> {
    let mut keyed: Vec<(f64, &Prepared)> = items
        .iter()
        .map(|p| {
            let r = p.references.first().map(Vec::as_slice).unwrap_or(&[]);
            (passage_overlap(r, &p.passage), p)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)));
    let scores: Vec<f64> = keyed.iter().map(|(_, p)| score_example(p, cfg).qbleu4).collect();
    grid.iter()
        .map(|&n| {
            let n = n.min(scores.len());
            let q = if n == 0 {
                0.0
            } else {
                scores[..n].iter().sum::<f64>() / n as f64
            };
            (n, q)
        })
        .collect()
}

pub fn curve_csv(rows: &[(usize, f64)]) -> String {
    let mut s = String::from("n,qbleu4\n");
    for (n, q) in rows {
        s.push_str(&format!("{n},{q:.6}\n"));
    }
    s
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LengthHistogram {
    pub counts: BTreeMap<usize, usize>,
    pub mean: f64,
}

/// Token-length histogram per decoder tag.
pub fn length_distribution<'a, I>(outputs: I) -> BTreeMap<String, LengthHistogram>
where
    I: IntoIterator<Item = (&'a str, usize)>,
{
    let mut out: BTreeMap<String, LengthHistogram> = BTreeMap::new();
    for (tag, len) in outputs {
        *out.entry(tag.to_string())
            .or_default()
            .counts
            .entry(len)
            .or_insert(0) += 1;
    }
    for h in out.values_mut() {
        let n: usize = h.counts.values().sum();
        let total: usize = h.counts.iter().map(|(l, c)| l * c).sum();
        h.mean = total as f64 / n as f64;
    }
    out
}

pub fn histogram_csv(h: &BTreeMap<String, LengthHistogram>) -> String {
    let mut s = String::from("decoder,length,count,mean\n");
    for (tag, hist) in h {
        for (len, count) in &hist.counts {
            s.push_str(&format!("{tag},{len},{count},{:.6}\n", hist.mean));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn rec(id: &str, cand: &str, reference: &str, passage: &str) -> EvalRecord {
        EvalRecord {
            id: id.into(),
            candidate: cand.into(),
            references: vec![reference.into()],
            passage: passage.into(),
        }
    }

    #[test]
    fn qbleu_degenerate_mixes() {
        let lex = NeLexicon::default();
        let w = AnswerabilityWeights::default();
        let (c, r) = (t("who built the red mill ?"), t("who painted the red mill ?"));
        let b = bleu_n(&c, std::slice::from_ref(&r), 4, true);
        let a = answerability_score(&c, &r, &lex, &w).0;
        assert_eq!(qbleu4(&c, &r, &lex, &w, 0.0), b);
        assert_eq!(qbleu4(&c, &r, &lex, &w, 1.0), a);
        for d in [0.0, 0.3, 1.0] {
            assert!((qbleu4(&r, &r, &lex, &w, d) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn originality_fixtures() {
        let p = t("alice painted the red barn in paris .");
        assert_eq!(originality(&t("the red barn"), &p), 0.0);
        assert_eq!(originality(&t("who wrote it"), &p), 1.0);
        // unigrams 2/4, bigrams 1/3 -> 1 - sqrt(1/6)
        let v = originality(&t("the red car sold"), &p);
        assert!((v - (1.0 - (1.0f64 / 6.0).sqrt())).abs() < 1e-12);
    }

    #[test]
    fn perfect_candidates_score_one() {
        let rs = vec![
            rec("a", "who painted the barn ?", "Who painted the barn ?", "Alice painted the barn ."),
            rec("b", "where is oslo ?", "Where is Oslo ?", "Oslo is in Norway ."),
        ];
        let r = evaluate_records(&rs, &EvalConfig::new());
        for v in r.bleu {
            assert!((v - 1.0).abs() < 1e-12);
        }
        assert_eq!(r.rouge_l, 1.0);
        assert_eq!(r.answerability, 1.0);
        assert_eq!(r.qbleu4, 1.0);
        assert_eq!(r.summary_percent()["bleu4"], 100.0);
    }

    #[test]
    fn empty_input_is_empty_report() {
        let r = evaluate_records(&[], &EvalConfig::new());
        assert_eq!(r.count, 0);
        assert!(r.per_example.is_empty());
    }

    #[test]
    fn malformed_lines_are_counted() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pairs.jsonl");
        let good = serde_json::to_string(&rec("a", "x y", "x y", "x y z")).unwrap();
        std::fs::write(&p, format!("{good}\nnot json\n{{\"id\":\"b\"}}\n")).unwrap();
        let r = corpus_evaluate(&p, &EvalConfig::new()).unwrap();
        assert_eq!(r.count, 1);
        assert_eq!(r.skipped, 2);
    }

    #[test]
    fn originality_curve_two_examples() {
        let cfg = EvalConfig::new();
        // reference of "b" copies its passage more than that of "a"
        let rs = [rec("b", "what is x ?", "x y z", "x y z w"),
            rec("a", "q r", "q r", "s t")];
        let items: Vec<Prepared> = rs.iter().map(|r| Prepared::new(r, &cfg.gazetteer)).collect();
        let curve = originality_curve(&items, &[1, 2, 5], &cfg);
        let qa = score_example(&items[1], &cfg).qbleu4;
        let qb = score_example(&items[0], &cfg).qbleu4;
        assert_eq!(qa, 1.0);
        assert_eq!(curve[0], (1, qa));
        assert_eq!(curve[1], (2, (qa + qb) / 2.0));
        assert_eq!(curve[2], (2, (qa + qb) / 2.0));
        let mut rev = items.clone();
        rev.reverse();
        assert_eq!(originality_curve(&rev, &[1, 2, 5], &cfg), curve);
        let full = evaluate_prepared(&items, &cfg).qbleu4;
        assert!((curve[1].1 - full).abs() < 1e-12);
        assert_eq!(curve_csv(&curve).lines().count(), 4);
    }

    #[test]
    fn length_histogram() {
        let h = length_distribution([("refinement", 7)]);
        assert_eq!(h["refinement"].counts, BTreeMap::from([(7, 1)]));
        assert_eq!(h["refinement"].mean, 7.0);
        let a = length_distribution([("p", 3), ("p", 5)]);
        let b = length_distribution([("p", 5), ("p", 3)]);
        assert_eq!(a, b);
        assert_eq!(histogram_csv(&a), "decoder,length,count,mean\np,3,1,4.000000\np,5,1,4.000000\n");
    }
}
