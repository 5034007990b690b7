//! Commands over generated outputs: evaluate and analyze.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand, ValueEnum};
use refnet::data::read_jsonl;
use refnet::dump::{AttentionDump, AttentionMatrix};
use refnet::metrics::{
    curve_csv, evaluate_records, histogram_csv, length_distribution, originality_curve, read_pairs,
    EvalConfig, EvalRecord, NeLexicon, Prepared,
};
use refnet::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::CmdResult;

/// One line written by `generate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draft: Option<String>,
    pub question: String,
    pub logprob: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Curve {
    /// Mean QBLEU-4 over the N least-copying references.
    Originality,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Hist {
    /// Token lengths of drafts and refined questions.
    Length,
}

/// Where candidates and references come from.
#[derive(Args, Debug, Clone)]
pub struct Inputs {
    /// JSON lines of {id, candidate, references, passage}.
    #[arg(long, conflicts_with_all = ["generated", "refs"])]
    pub pairs: Option<PathBuf>,
    /// Output of `generate`.
    #[arg(long, requires = "refs")]
    pub generated: Option<PathBuf>,
    /// Corpus JSON lines holding the reference questions and passages.
    #[arg(long, requires = "generated")]
    pub refs: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    /// Print this analysis as CSV instead of the report.
    #[arg(long, value_enum, conflicts_with = "hist")]
    pub curve: Option<Curve>,
    /// Grid of N values for the curve.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "10,20,50,100,200,500,1000"
    )]
    pub grid: Vec<usize>,
    /// Print this histogram as CSV instead of the report.
    #[arg(long, value_enum)]
    pub hist: Option<Hist>,
    /// Answerability weight in QBLEU.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Extra named entities, one per line.
    #[arg(long)]
    pub gazetteer: Option<PathBuf>,
    /// Include per-example scores in the report.
    #[arg(long)]
    pub per_example: bool,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[command(subcommand)]
    pub what: Analysis,
}

#[derive(Subcommand, Debug)]
pub enum Analysis {
    /// QBLEU-4 against the N least-copying references, as CSV.
    Curve {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "10,20,50,100,200,500,1000"
        )]
        grid: Vec<usize>,
    },
    /// Length histogram of drafts and refined questions, as CSV.
    Lengths {
        /// Output of `generate --emit-draft`.
        #[arg(long)]
        generated: PathBuf,
    },
    /// Per-matrix sharpness summary of an attention dump, as CSV.
    Attention {
        /// Output of `generate --dump-attention`.
        #[arg(long)]
        dump: PathBuf,
    },
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::json(path, e))?);
    }
    Ok(out)
}

pub fn read_generated(path: &Path) -> Result<Vec<GeneratedRecord>> {
    let recs: Vec<GeneratedRecord> = read_lines(path)?;
    let mut seen = HashSet::new();
    for r in &recs {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::data(format!(
                "{}: duplicate id {}",
                path.display(),
                r.id
            )));
        }
    }
    Ok(recs)
}

fn id_list(ids: &[&str]) -> String {
    const SHOWN: usize = 20;
    let mut s = ids
        .iter()
        .take(SHOWN)
        .copied()
        .collect::<Vec<_>>()
        .join(", ");
    if ids.len() > SHOWN {
        s.push_str(&format!(", ... and {} more", ids.len() - SHOWN));
    }
    s
}

/// Joins generated questions with corpus references by id; both sides must
/// hold the same ids.
pub fn join_by_id(generated: &[GeneratedRecord], refs_path: &Path) -> Result<Vec<EvalRecord>> {
    let refs = read_jsonl(refs_path)?;
    let by_id: HashMap<&str, _> = refs.iter().map(|e| (e.id.as_str(), e)).collect();
    let gen_ids: HashSet<&str> = generated.iter().map(|g| g.id.as_str()).collect();
    let mut no_ref: Vec<&str> = generated
        .iter()
        .map(|g| g.id.as_str())
        .filter(|id| !by_id.contains_key(id))
        .collect();
    let mut no_gen: Vec<&str> = refs
        .iter()
        .map(|e| e.id.as_str())
        .filter(|id| !gen_ids.contains(id))
        .collect();
    if !no_ref.is_empty() || !no_gen.is_empty() {
        no_ref.sort_unstable();
        no_gen.sort_unstable();
        let mut msg = String::from("ids do not match");
        if !no_ref.is_empty() {
            msg.push_str(&format!("; missing from references: {}", id_list(&no_ref)));
        }
        if !no_gen.is_empty() {
            msg.push_str(&format!("; missing from generated: {}", id_list(&no_gen)));
        }
        return Err(Error::data(msg));
    }
    Ok(generated
        .iter()
        .map(|g| {
            let e = by_id[g.id.as_str()];
            EvalRecord {
                id: g.id.clone(),
                candidate: g.question.clone(),
                references: vec![e.raw_question.join(" ")],
                passage: e.raw_passage.join(" "),
            }
        })
        .collect())
}

fn load_records(inputs: &Inputs) -> Result<(Vec<EvalRecord>, usize)> {
    match (&inputs.pairs, &inputs.generated, &inputs.refs) {
        (Some(p), _, _) => read_pairs(p),
        (None, Some(g), Some(r)) => Ok((join_by_id(&read_generated(g)?, r)?, 0)),
        _ => Err(Error::usage("give --pairs, or --generated with --refs")),
    }
}

fn eval_config(args: &EvaluateArgs) -> Result<EvalConfig> {
    let mut cfg = EvalConfig::new();
    if let Some(d) = args.delta {
        cfg.delta = d;
    }
    if let Some(path) = &args.gazetteer {
        let mut lex = NeLexicon::default();
        lex.add_gazetteer(path)?;
        cfg.gazetteer = lex;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn curve(records: &[EvalRecord], grid: &[usize], cfg: &EvalConfig) -> Result<String> {
    if grid.is_empty() || grid.contains(&0) {
        return Err(Error::config("curve grid needs positive sizes"));
    }
    let items: Vec<Prepared> = records
        .iter()
        .map(|r| Prepared::new(r, &cfg.gazetteer))
        .collect();
    Ok(curve_csv(&originality_curve(&items, grid, cfg)))
}

/// Length histogram CSV of generated drafts and questions.
pub fn lengths_csv(generated: &[GeneratedRecord]) -> Result<String> {
    let mut rows = Vec::with_capacity(2 * generated.len());
    for g in generated {
        let draft = g.draft.as_deref().ok_or_else(|| {
            Error::data(format!(
                "record {} has no draft; generate with --emit-draft",
                g.id
            ))
        })?;
        rows.push(("preliminary", draft.split_whitespace().count()));
        rows.push(("refinement", g.question.split_whitespace().count()));
    }
    Ok(histogram_csv(&length_distribution(rows)))
}

pub fn evaluate(args: &EvaluateArgs) -> CmdResult {
    let cfg = eval_config(args)?;
    if args.hist.is_some() {
        let path = args
            .inputs
            .generated
            .as_ref()
            .ok_or_else(|| Error::usage("--hist needs --generated"))?;
        let generated = read_generated(path)?;
        if let Some(r) = &args.inputs.refs {
            join_by_id(&generated, r)?;
        }
        print!("{}", lengths_csv(&generated)?);
        return Ok(());
    }
    let (records, skipped) = load_records(&args.inputs)?;
    if args.curve.is_some() {
        print!("{}", curve(&records, &args.grid, &cfg)?);
        return Ok(());
    }
    let mut report = evaluate_records(&records, &cfg);
    report.skipped = skipped;
    let mut out = report.summary_percent();
    if args.per_example {
        out["per_example"] = serde_json::to_value(&report.per_example).expect("scores serialize");
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&out).expect("report serializes")
    );
    Ok(())
}

fn entropy(row: &[f64]) -> f64 {
    -row.iter()
        .filter(|&&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

fn matrix_row(id: &str, name: &str, m: &AttentionMatrix) -> String {
    let n = m.weights.len().max(1) as f64;
    let max = m
        .weights
        .iter()
        .map(|r| r.iter().copied().fold(0.0, f64::max))
        .sum::<f64>()
        / n;
    let ent = m.weights.iter().map(|r| entropy(r)).sum::<f64>() / n;
    format!(
        "{id},{name},{},{},{max:.6},{ent:.6}\n",
        m.rows.len(),
        m.cols.len()
    )
}

pub fn attention_csv(dumps: &[AttentionDump]) -> String {
    let mut s = String::from("id,matrix,rows,cols,mean_max_weight,mean_entropy\n");
    for d in dumps {
        s.push_str(&matrix_row(&d.id, "a1", &d.a1));
        s.push_str(&matrix_row(&d.id, "a2", &d.a2));
        if let Some(a3) = &d.a3 {
            s.push_str(&matrix_row(&d.id, "a3", a3));
        }
    }
    s
}

pub fn analyze(args: &AnalyzeArgs) -> CmdResult {
    let csv = match &args.what {
        Analysis::Curve { inputs, grid } => {
            let (records, _) = load_records(inputs)?;
            curve(&records, grid, &EvalConfig::new())?
        }
        Analysis::Lengths { generated } => lengths_csv(&read_generated(generated)?)?,
        Analysis::Attention { dump } => attention_csv(&read_lines(dump)?),
    };
    print!("{csv}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gen(id: &str, draft: Option<&str>, q: &str) -> GeneratedRecord {
        GeneratedRecord {
            id: id.into(),
            draft: draft.map(String::from),
            question: q.into(),
            logprob: -1.0,
        }
    }

    #[test]
    fn lengths_need_drafts() {
        let csv = lengths_csv(&[gen("a", Some("who saw"), "who saw it ?")]).unwrap();
        assert_eq!(
            csv,
            "decoder,length,count,mean\npreliminary,2,1,2.000000\nrefinement,4,1,4.000000\n"
        );
        assert!(matches!(
            lengths_csv(&[gen("a", None, "q")]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn id_mismatch_lists_missing_ids() {
        let dir = tempfile::tempdir().unwrap();
        let refs = dir.path().join("refs.jsonl");
        let ex =
            refnet::data::Example::from_text("r1", "Bob saw it .", "who saw it ?", "Bob", Some(0))
                .unwrap();
        refnet::data::write_jsonl(&[ex], &refs).unwrap();
        let err = join_by_id(&[gen("g1", None, "who ?")], &refs).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Data(_)));
        assert!(msg.contains("missing from references: g1"), "{msg}");
        assert!(msg.contains("missing from generated: r1"), "{msg}");
        let ok = join_by_id(&[gen("r1", None, "who saw it ?")], &refs).unwrap();
        assert_eq!(ok[0].references, vec!["who saw it ?".to_string()]);
        assert_eq!(ok[0].passage, "Bob saw it .");
    }

    #[test]
    fn entropy_of_uniform_row() {
        assert!((entropy(&[0.25; 4]) - 4f64.ln()).abs() < 1e-12);
        assert_eq!(entropy(&[1.0, 0.0]), 0.0);
    }
}
