use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

const LONG_VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    "\ncore: kgrag-core ",
    env!("CARGO_PKG_VERSION"),
    "\nrelation filter, stopwords and term lists bundled at build time"
);

/// Causal knowledge graphs from ranked abstracts, graph-grounded MCQ probes,
/// and KG-RAG evaluation.
#[derive(Parser, Debug)]
#[command(name = "kgrag", version, long_version = LONG_VERSION, propagate_version = true)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GlobalOpts {
    /// Pipeline config (flat TOML); flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Log provider request and response bodies (credentials redacted).
    #[arg(long, global = true)]
    pub trace: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Filter and rank abstracts by causal/phenotype/biomarker relevance.
    Rank(commands::RankArgs),
    /// Run the three-stage LLM triple extraction over documents.
    Extract(commands::ExtractArgs),
    /// Clean, canonicalize and assemble extracted triples into a graph.
    BuildKg(commands::BuildKgArgs),
    /// Union several graphs in canonical space.
    MergeKg(commands::MergeKgArgs),
    /// Screen causal triples shared by two graphs.
    Intersect(commands::IntersectArgs),
    /// Generate a seeded MCQ probe set.
    GenProbes(commands::GenProbesArgs),
    /// Check a probe set against its source graph.
    ValidateProbes(commands::ValidateProbesArgs),
    /// Run the model × probe × system × temperature grid.
    RunEval(commands::RunEvalArgs),
    /// Score a run journal and write report.md / report.csv.
    Analyze(commands::AnalyzeArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match commands::dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(1)
        }
    }
}
