//! `refnet`: train, fine-tune, generate, evaluate, analyze and self-check.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric abort, 4 self-check failure. Data goes to stdout, diagnostics
//! to stderr.

mod analyze;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};
use refnet::Error;

#[derive(Parser, Debug)]
#[command(
    name = "refnet",
    version,
    about = "Two-pass answer-aware question generation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by commands that resolve a run configuration.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed; falls back to the config file, then REFNET_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override a config key (repeatable), e.g. `--set lr=0.001`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Joint MLE training of both decoders.
    Train(run::TrainArgs),
    /// REINFORCE fine-tuning of the refinement decoder.
    Finetune(run::FinetuneArgs),
    /// Decode questions for a corpus file.
    Generate(run::GenerateArgs),
    /// Score generated questions against references.
    Evaluate(analyze::EvaluateArgs),
    /// CSV analyses of generated outputs and attention dumps.
    Analyze(analyze::AnalyzeArgs),
    /// Gradient, distribution and checkpoint invariants on a tiny model.
    Selfcheck(SelfcheckArgs),
}

#[derive(Args, Debug)]
struct SelfcheckArgs {
    /// Randomized forward steps in the distribution sweep.
    #[arg(long, default_value_t = 10_000)]
    sweep_steps: usize,
    /// Corrupts a backward rule to show the gradient check catches it.
    #[arg(long, hide = true)]
    inject_fault: bool,
}

/// Outcome of a command that did not succeed.
#[derive(Debug)]
pub enum Failure {
    Lib(Error),
    /// A named self-check invariant failed.
    Selfcheck(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

pub type CmdResult = std::result::Result<(), Failure>;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::Config(_) => 1,
        Error::Data(_) | Error::Io { .. } | Error::Json { .. } => 2,
        Error::NonFinite { .. } | Error::Shape { .. } => 3,
    }
}

/// Usage text of one subcommand, for errors raised after parsing.
pub fn usage(name: &str) -> String {
    let mut cmd = Cli::command();
    cmd.build();
    match cmd.find_subcommand_mut(name) {
        Some(sub) => sub.render_usage().to_string(),
        None => cmd.render_usage().to_string(),
    }
}

fn selfcheck(args: &SelfcheckArgs) -> CmdResult {
    refnet::tape::set_fault_injection(args.inject_fault);
    let outcomes = refnet::selfcheck::run_all(args.sweep_steps);
    refnet::tape::set_fault_injection(false);
    let mut failed = None;
    for o in &outcomes {
        println!(
            "{} {}: {}",
            if o.passed { "ok" } else { "FAIL" },
            o.name,
            o.detail
        );
        if !o.passed && failed.is_none() {
            failed = Some(o.name.to_string());
        }
    }
    match failed {
        Some(name) => Err(Failure::Selfcheck(name)),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Train(a) => run::train(a),
        Command::Finetune(a) => run::finetune(a),
        Command::Generate(a) => run::generate(a),
        Command::Evaluate(a) => analyze::evaluate(a),
        Command::Analyze(a) => analyze::analyze(a),
        Command::Selfcheck(a) => selfcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            if let Error::Usage(_) = e {
                let name = match &cli.command {
                    Command::Train(_) => "train",
                    Command::Finetune(_) => "finetune",
                    Command::Generate(_) => "generate",
                    Command::Evaluate(_) => "evaluate",
                    Command::Analyze(_) => "analyze",
                    Command::Selfcheck(_) => "selfcheck",
                };
                eprintln!("{}", usage(name));
            }
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Selfcheck(name)) => {
            eprintln!("selfcheck failed: {name}");
            ExitCode::from(4)
        }
    }
}
