//! Commands that build or use a model: train, finetune, generate.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use refnet::checkpoint::Checkpoint;
use refnet::data::{
    build_vocab, encode_example, make_toy_corpus, read_jsonl, write_jsonl, CorpusSplit, Example,
    ToySizes, Vocabulary,
};
use refnet::dump::attention_dump;
use refnet::rewards::RewardKind;
use refnet::search::{generate as decode, strip_eos, GenerateOptions, DEFAULT_BEAM};
use refnet::training::{finetune_reward, fit, prepare, TrainConfig};
use refnet::{Error, RefNet, Result};
use serde::Serialize;

use crate::analyze::GeneratedRecord;
use crate::config::RunConfig;
use crate::{CmdResult, ConfigArgs};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DataFormat {
    /// One corpus record per line.
    Jsonl,
    Squad,
    Hotpot,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Training corpus; 10% (validation_fraction) is held out for validation.
    #[arg(long, conflicts_with = "toy")]
    pub data: Option<PathBuf>,
    /// Corpus format; guessed from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<DataFormat>,
    /// Synthetic corpus: copy-span, copy-span-oov, corrupt-draft or counting.
    #[arg(long)]
    pub toy: Option<String>,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// fluency, answerability or originality.
    #[arg(long)]
    pub reward: String,
    #[arg(long, default_value_t = 3)]
    pub epochs: usize,
    /// Training corpus (JSON lines); defaults to the run directory's copy.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output checkpoint; defaults to checkpoints/finetune-<reward>.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Corpus JSON-lines file.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BEAM)]
    pub beam: usize,
    /// Include the preliminary decoder's draft.
    #[arg(long)]
    pub emit_draft: bool,
    /// Write attention matrices as JSON lines to this file.
    #[arg(long)]
    pub dump_attention: Option<PathBuf>,
    /// Vocabulary file; defaults to vocab.txt of the checkpoint's run.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Output file instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Rank beam results by raw log-probability.
    #[arg(long)]
    pub no_length_norm: bool,
}

/// Fixed layout of a run directory.
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    fn create(root: &Path) -> Result<Self> {
        for sub in ["checkpoints", "outputs", "data"] {
            let p = root.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    /// The run a checkpoint under `<run>/checkpoints/` belongs to.
    fn of_checkpoint(path: &Path) -> Self {
        let dir = path.parent().unwrap_or(Path::new("."));
        let root = if dir.file_name().is_some_and(|n| n == "checkpoints") {
            dir.parent().unwrap_or(Path::new(".")).to_path_buf()
        } else {
            dir.to_path_buf()
        };
        Self { root }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.resolved")
    }

    pub fn vocab(&self) -> PathBuf {
        self.root.join("vocab.txt")
    }

    pub fn log(&self) -> PathBuf {
        self.root.join("log.jsonl")
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{name}.json"))
    }

    pub fn split(&self, name: &str) -> PathBuf {
        self.root.join("data").join(format!("{name}.jsonl"))
    }
}

fn append_log(path: &Path, record: &impl Serialize) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let line = serde_json::to_string(record).map_err(|e| Error::json(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Defaults, then REFNET_SEED, then the config file, then flags.
fn resolve(mut cfg: RunConfig, args: &ConfigArgs, env_seed: bool) -> Result<RunConfig> {
    if env_seed {
        if let Ok(s) = std::env::var("REFNET_SEED") {
            cfg.set("seed", &s)
                .map_err(|_| Error::config(format!("REFNET_SEED must be an integer, got {s:?}")))?;
        }
    }
    if let Some(path) = &args.config {
        cfg.apply_file(path)?;
    }
    cfg.apply_overrides(&args.overrides)?;
    if let Some(seed) = args.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    Ok(cfg)
}

fn load_examples(path: &Path, format: Option<DataFormat>) -> Result<Vec<Example>> {
    let format = format.unwrap_or_else(|| match path.extension().and_then(|e| e.to_str()) {
        Some("json") => DataFormat::Squad,
        _ => DataFormat::Jsonl,
    });
    match format {
        DataFormat::Jsonl => read_jsonl(path),
        DataFormat::Squad | DataFormat::Hotpot => {
            let report = if format == DataFormat::Squad {
                refnet::data::squad::load_squad_json(path)?
            } else {
                refnet::data::squad::load_hotpot_json(path)?
            };
            if report.skipped > 0 {
                log::warn!(
                    "{}: {} answers not aligned to tokens were skipped",
                    path.display(),
                    report.skipped
                );
            }
            Ok(report.examples)
        }
    }
}

#[derive(Serialize)]
struct TrainLogLine<'a> {
    phase: &'a str,
    epoch: usize,
    train_loss: f64,
    val_bleu4: f64,
    wall_ms: u64,
}

pub fn train(args: &TrainArgs) -> CmdResult {
    if args.data.is_none() && args.toy.is_none() {
        return Err(Error::usage("one of --data or --toy is required").into());
    }
    let mut cfg = resolve(RunConfig::defaults(args.toy.is_some()), &args.cfg, true)?;
    if let Some(e) = args.epochs {
        cfg.set("epochs", &e.to_string())?;
    }
    if let Some(lr) = args.lr {
        cfg.set("lr", &lr.to_string())?;
    }
    cfg.validate()?;
    let seed = cfg.seed();
    let split = match (&args.toy, &args.data) {
        (Some(spec), _) => {
            let sizes = ToySizes::new(
                cfg.usize("toy_train"),
                cfg.usize("toy_validation"),
                cfg.usize("toy_test"),
            );
            make_toy_corpus(spec, sizes, seed)?
        }
        (None, Some(path)) => {
            let examples = load_examples(path, args.format)?;
            CorpusSplit::from_train(
                examples,
                cfg.f64("validation_fraction"),
                seed,
                &path.display().to_string(),
            )
        }
        (None, None) => unreachable!(),
    };
    split.check_disjoint()?;
    let run = RunDir::create(&args.out)?;
    write_file(&run.config(), &cfg.to_text())?;
    write_jsonl(&split.train, &run.split("train"))?;
    write_jsonl(&split.validation, &run.split("validation"))?;
    write_jsonl(&split.test, &run.split("test"))?;
    let vocab = build_vocab(&split.train, cfg.usize("vocab_cap"))?;
    vocab.save(&run.vocab())?;
    log::info!(
        "{} train / {} validation / {} test examples, vocabulary {}",
        split.train.len(),
        split.validation.len(),
        split.test.len(),
        vocab.len()
    );

    let tcfg = cfg.train()?;
    let mut model = RefNet::new(cfg.model(vocab.len())?, seed)?;
    let glove = cfg.str("glove");
    if !glove.is_empty() {
        let tables = model.encoder.tables.clone();
        let n = tables.load_pretrained(&mut model.params, &vocab, Path::new(glove))?;
        log::info!("{n} pretrained word vectors loaded and frozen");
    }
    let train_items = prepare(&split.train, &vocab, &tcfg.limits)?;
    let val_items = prepare(&split.validation, &vocab, &tcfg.limits)?;
    write_file(&run.log(), "")?;
    let log_path = run.log();
    let mut log_err = None;
    let result = fit(&mut model, &vocab, &train_items, &val_items, &tcfg, |e| {
        let line = TrainLogLine {
            phase: "train",
            epoch: e.epoch,
            train_loss: e.train_loss,
            val_bleu4: e.val_bleu4,
            wall_ms: e.wall_ms,
        };
        if let Err(err) = append_log(&log_path, &line) {
            log_err.get_or_insert(err);
        }
    })?;
    if let Some(e) = log_err {
        return Err(e.into());
    }
    let mut ck = Checkpoint::from_model(&model, &vocab.hash());
    ck.train_config = serde_json::to_value(&tcfg).expect("train config serializes");
    ck.epoch = result.best_epoch;
    ck.val_bleu4 = result.best_val_bleu4;
    let path = run.checkpoint("best");
    ck.save(&path)?;
    println!(
        "{}",
        serde_json::json!({
            "checkpoint": path,
            "best_epoch": result.best_epoch,
            "best_val_bleu4": result.best_val_bleu4,
            "param_hash": ck.param_hash(),
        })
    );
    Ok(())
}

fn load_model(path: &Path, vocab: &Vocabulary) -> Result<(Checkpoint, RefNet)> {
    let ck = Checkpoint::load(path)?;
    if ck.vocab_hash != vocab.hash() {
        return Err(Error::data(format!(
            "vocabulary hash {} does not match checkpoint {} ({})",
            vocab.hash(),
            ck.vocab_hash,
            path.display()
        )));
    }
    let model = ck.into_model()?;
    Ok((ck, model))
}

#[derive(Serialize)]
struct RewardLogLine<'a> {
    phase: &'a str,
    reward: &'a str,
    epoch: usize,
    mean_reward: f64,
    mean_baseline: f64,
    val_bleu4: f64,
    wall_ms: u64,
}

pub fn finetune(args: &FinetuneArgs) -> CmdResult {
    let kind: RewardKind = args.reward.parse()?;
    let run = RunDir::of_checkpoint(&args.checkpoint);
    let mut base = RunConfig::defaults(false);
    if run.config().exists() {
        base.apply_file(&run.config())?;
    } else {
        log::warn!(
            "{} not found; using default configuration",
            run.config().display()
        );
    }
    let mut cfg = resolve(base, &args.cfg, false)?;
    cfg.set("reward", kind.name())?;
    cfg.set("reward_epochs", &args.epochs.to_string())?;
    cfg.validate()?;
    let tcfg = cfg.train()?;

    let vocab = Vocabulary::load(&run.vocab())?;
    let (ck, mut model) = load_model(&args.checkpoint, &vocab)?;
    let train_path = args.data.clone().unwrap_or_else(|| run.split("train"));
    let train_items = prepare(&read_jsonl(&train_path)?, &vocab, &tcfg.limits)?;
    let val_path = run.split("validation");
    let val_items = if args.data.is_none() && val_path.exists() {
        prepare(&read_jsonl(&val_path)?, &vocab, &tcfg.limits)?
    } else {
        Vec::new()
    };
    let log_path = run.log();
    let mut log_err = None;
    let logs = finetune_reward(&mut model, &vocab, &train_items, &val_items, &tcfg, |l| {
        let line = RewardLogLine {
            phase: "finetune",
            reward: kind.name(),
            epoch: l.epoch,
            mean_reward: l.mean_reward,
            mean_baseline: l.mean_baseline,
            val_bleu4: l.val_bleu4,
            wall_ms: l.wall_ms,
        };
        if let Err(err) = append_log(&log_path, &line) {
            log_err.get_or_insert(err);
        }
    })?;
    if let Some(e) = log_err {
        return Err(e.into());
    }
    let mut out = Checkpoint::from_model(&model, &ck.vocab_hash);
    out.train_config = serde_json::to_value(&tcfg).expect("train config serializes");
    out.epoch = ck.epoch;
    out.val_bleu4 = logs.last().map_or(ck.val_bleu4, |l| l.val_bleu4);
    out.reward = Some(kind.name().to_string());
    let path = args
        .out
        .clone()
        .unwrap_or_else(|| run.checkpoint(&format!("finetune-{}", kind.name())));
    out.save(&path)?;
    println!(
        "{}",
        serde_json::json!({
            "checkpoint": path,
            "reward": kind.name(),
            "epochs": logs.len(),
            "mean_reward": logs.last().map(|l| l.mean_reward),
            "param_hash": out.param_hash(),
        })
    );
    Ok(())
}

pub fn generate(args: &GenerateArgs) -> CmdResult {
    if args.beam == 0 {
        return Err(Error::config("--beam must be positive").into());
    }
    let run = RunDir::of_checkpoint(&args.checkpoint);
    let vocab = Vocabulary::load(&args.vocab.clone().unwrap_or_else(|| run.vocab()))?;
    let (ck, model) = load_model(&args.checkpoint, &vocab)?;
    let mut limits = serde_json::from_value::<TrainConfig>(ck.train_config.clone())
        .map(|t| t.limits)
        .unwrap_or_default();
    limits.max_question = usize::MAX;
    let opts = GenerateOptions {
        beam: args.beam,
        max_len: args.max_len.unwrap_or(model.config.max_decode_len),
        length_norm: !args.no_length_norm,
    };
    let examples = read_jsonl(&args.input)?;
    let mut out: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Error::io(p, e))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    };
    let out_name = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("<stdout>"));
    let mut dump: Option<BufWriter<File>> = match &args.dump_attention {
        Some(p) => Some(BufWriter::new(
            File::create(p).map_err(|e| Error::io(p, e))?,
        )),
        None => None,
    };
    for e in &examples {
        let (ex, _) = encode_example(e, &vocab, &limits)?.expect("question length is unbounded");
        let g = decode(&model, &ex, &opts)?;
        let rec = GeneratedRecord {
            id: ex.id.clone(),
            draft: args
                .emit_draft
                .then(|| ex.detokenize(&vocab, strip_eos(&g.draft.tokens)).join(" ")),
            question: ex.detokenize(&vocab, strip_eos(&g.question)).join(" "),
            logprob: g.logprob,
        };
        let line = serde_json::to_string(&rec).expect("record serializes");
        writeln!(out, "{line}").map_err(|e| Error::io(&out_name, e))?;
        if let (Some(w), Some(p)) = (dump.as_mut(), &args.dump_attention) {
            let d = attention_dump(&model, &vocab, &ex, &g)?;
            let line = serde_json::to_string(&d).expect("dump serializes");
            writeln!(w, "{line}").map_err(|e| Error::io(p, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(&out_name, e))?;
    if let (Some(mut w), Some(p)) = (dump, &args.dump_attention) {
        w.flush().map_err(|e| Error::io(p, e))?;
    }
    log::info!("{} questions generated", examples.len());
    Ok(())
}
