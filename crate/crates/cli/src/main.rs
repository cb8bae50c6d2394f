//! `compass-audit`: staged command-line driver for the bias-scoring pipeline.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use compass_audit_core::backends::{BackendKind, Role};
use compass_audit_core::Weights;

#[derive(Parser, Debug)]
#[command(name = "compass-audit", version, about = "Score language-model responses for political bias")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Collect responses from the configured chat-completion providers.
    Collect {
        #[command(flatten)]
        common: Common,
        /// Prompts file (defaults to the config's prompts).
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// Responses file to append to (defaults to <output_dir>/responses.jsonl).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Only collect from this provider model id.
        #[arg(long)]
        provider: Option<String>,
    },
    /// Score every response and write one score line per response.
    Score {
        #[command(flatten)]
        common: Common,
        /// Extra response files added to the configured ones.
        #[arg(long = "in")]
        input: Vec<PathBuf>,
        /// Scores file (defaults to <output_dir>/scores.jsonl).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a scores file per model.
    Aggregate {
        #[command(flatten)]
        common: Common,
        /// Scores file (defaults to <output_dir>/scores.jsonl).
        #[arg(long = "in", alias = "scores")]
        input: Option<PathBuf>,
        /// Summaries file (defaults to <output_dir>/summaries.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render tables, plots, and a markdown summary.
    Report {
        #[command(flatten)]
        common: Common,
        /// Summaries file (defaults to <output_dir>/summaries.json).
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// Scores file used for per-response compass points.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Report directory (defaults to <output_dir>/report).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check partisanship calibration and corpus integrity.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Extra response files added to the configured ones.
        #[arg(long = "in")]
        input: Vec<PathBuf>,
    },
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Composite weights: partisanship,topicality,sentiment,objectivity.
    #[arg(long, value_parser = Weights::parse_list)]
    pub weights: Option<Weights>,
    /// Backend kind for one role, e.g. `sentiment=reference`. Repeatable.
    #[arg(long = "backend", value_parser = parse_backend_override)]
    pub backends: Vec<(Role, BackendKind)>,
    /// Worker threads for scoring.
    #[arg(long)]
    pub parallelism: Option<usize>,
}

fn parse_backend_override(raw: &str) -> Result<(Role, BackendKind), String> {
    let (role, kind) = raw.split_once('=').ok_or_else(|| format!("expected <role>=<kind>, got {raw:?}"))?;
    Ok((role.trim().parse()?, kind.trim().parse()?))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Collect { common, input, out, provider } => commands::collect(&common, input, out, provider),
        Command::Score { common, input, out } => commands::score(&common, &input, out),
        Command::Aggregate { common, input, out } => commands::aggregate(&common, input, out),
        Command::Report { common, input, scores, out } => commands::report(&common, input, scores, out),
        Command::Validate { common, input } => commands::validate(&common, &input),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.kind.code())
        }
    }
}
