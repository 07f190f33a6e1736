//! `editflow`: extract commits, recover edit-order graphs, tune the
//! recovery prompt, simulate recommenders and report on the traces.
//!
//! Exit codes: 0 success, 1 a configured threshold was missed, 2 usage or
//! configuration error, 3 an external dependency (git, model endpoint, SUT)
//! failed.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::Value;

mod config;
mod error;
mod extract;
mod filter;
mod graph;
mod report;
mod simulate;
mod store;
mod tune;

use config::HarnessConfig;
use error::CliError;

#[derive(Parser)]
#[command(name = "editflow", version, about = "Flow-aware evaluation harness for next-edit recommenders")]
struct Cli {
    /// Harness configuration file (TOML).
    #[arg(short, long, global = true, default_value = "editflow.toml")]
    config: PathBuf,
    /// Print a JSON document instead of text.
    #[arg(long, global = true)]
    json: bool,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cache the commits of a revision range that pass the selection criteria.
    Extract {
        #[arg(long)]
        repo: Option<PathBuf>,
        /// Revision range, e.g. `v1.0..main`.
        #[arg(long)]
        range: Option<String>,
    },
    /// Label every hunk pair of each cached commit and build its flow graph.
    InferGraph {
        /// Prompt file; defaults to the configured prompt.
        #[arg(long)]
        prompt: Option<PathBuf>,
    },
    /// Tune the order-recovery prompt on annotated commits.
    Tune {
        /// Glob of annotation files.
        #[arg(long)]
        annotations: Option<String>,
    },
    /// Replay each cached commit against a recommender.
    Simulate {
        /// SUT name from the `[sut.<name>]` registry.
        #[arg(long)]
        sut: String,
        /// Post-process each batch with the flow filter.
        #[arg(long)]
        with_filter: bool,
        /// Use ground-truth annotations (glob) instead of inferred graphs.
        #[arg(long)]
        annotations: Option<String>,
        /// Filter prompt file; defaults to the configured prompt.
        #[arg(long)]
        prompt: Option<PathBuf>,
    },
    /// Aggregate traces into report.json and report.txt.
    Report {
        /// Glob of trace files; defaults to every trace in the output directory.
        #[arg(long)]
        traces: Option<String>,
    },
    /// Filter a single recommendation batch document.
    Filter {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        prompt: Option<PathBuf>,
    },
}

/// What a command prints, and the failure it ends with, if any. Commands
/// that leave usable artifacts behind still report them when they fail.
pub struct Outcome {
    text: Option<String>,
    json: Value,
    failure: Option<CliError>,
}

impl Outcome {
    pub fn ok(text: impl Into<String>, json: Value) -> Self {
        Self {
            text: Some(text.into()),
            json,
            failure: None,
        }
    }

    /// Always printed as JSON.
    pub fn raw(json: Value) -> Self {
        Self {
            text: None,
            json,
            failure: None,
        }
    }

    pub fn fail(mut self, e: CliError) -> Self {
        self.failure = Some(e);
        self
    }
}

fn dispatch(cli: &Cli) -> Result<Outcome, CliError> {
    let cfg = HarnessConfig::load(&cli.config)?;
    let force = cli.force;
    match &cli.command {
        Command::Extract { repo, range } => extract::run(&cfg, repo.clone(), range.clone(), force),
        Command::InferGraph { prompt } => graph::run(&cfg, prompt.as_deref(), force),
        Command::Tune { annotations } => tune::run(&cfg, annotations.clone(), force),
        Command::Simulate {
            sut,
            with_filter,
            annotations,
            prompt,
        } => simulate::run(
            &cfg,
            simulate::SimulateArgs {
                sut,
                with_filter: *with_filter,
                annotations: annotations.as_deref(),
                prompt: prompt.as_deref(),
                force,
            },
        ),
        Command::Report { traces } => report::run(&cfg, traces.clone()),
        Command::Filter { input, output, prompt } => {
            filter::run(&cfg, input.as_deref(), output.as_deref(), prompt.as_deref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match dispatch(&cli) {
        Ok(o) => o,
        Err(e) => {
            if cli.json {
                println!("{}", serde_json::json!({"error": e.to_string(), "exit_code": e.kind.code()}));
            }
            eprintln!("editflow: {e}");
            return ExitCode::from(e.kind.code());
        }
    };
    match (&outcome.text, cli.json) {
        (Some(t), false) => println!("{t}"),
        _ => {
            let mut doc = outcome.json;
            if let (Some(f), Value::Object(m)) = (&outcome.failure, &mut doc) {
                m.insert("error".into(), Value::String(f.to_string()));
                m.insert("exit_code".into(), Value::from(f.kind.code()));
            }
            println!("{}", serde_json::to_string_pretty(&doc).expect("serializable"));
        }
    }
    match outcome.failure {
        Some(f) => {
            eprintln!("editflow: {f}");
            ExitCode::from(f.kind.code())
        }
        None => ExitCode::from(0),
    }
}

