//! `structkit`: corpus → knowledge structures → training data → evaluation.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 ingest,
//! 3 structure, 4 build-scpt, 5 build-ssft, 6 evaluate, 7 fit-scaling.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Failure;
use crate::config::StructureMode;

#[derive(Parser, Debug)]
#[command(name = "structkit", version, about = "Structure-aware training data pipeline")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GlobalArgs {
    /// Pipeline config (TOML). Flags override its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Use recorded transcripts plus the extractive responder instead of a
    /// remote model, and TF-IDF embeddings.
    #[arg(long, global = true)]
    pub offline: bool,
    /// Transcript directory for --offline runs.
    #[arg(long, global = true)]
    pub mock_dir: Option<PathBuf>,
    /// Write prompts that had no transcript to this directory.
    #[arg(long, global = true)]
    pub record_prompts: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Load documents, pack chunks and request chunk titles.
    Ingest {
        #[arg(long)]
        corpus: Vec<PathBuf>,
        #[arg(long)]
        budget: Option<usize>,
        /// unicode_words or bytes_div4
        #[arg(long)]
        tokenizer: Option<String>,
        #[arg(long)]
        language: Option<String>,
    },
    /// Build one knowledge structure per document (prompted) or one over
    /// the whole corpus (clustering).
    Structure {
        #[arg(long, value_enum)]
        mode: Option<StructureMode>,
    },
    /// Emit mindmap-conditioned pretraining records and the manifest.
    BuildScpt {
        #[arg(long)]
        epochs: Option<usize>,
        /// full or path_local
        #[arg(long)]
        scope: Option<String>,
        #[arg(long)]
        template_pool: Option<PathBuf>,
    },
    /// Synthesize QA samples along knowledge paths.
    BuildSsft {
        /// Number of bundles to draw.
        #[arg(long, conflicts_with_all = ["coverage", "augment"])]
        count: Option<usize>,
        /// Draw until every leaf is covered.
        #[arg(long)]
        coverage: bool,
        /// Random draws allowed before covering the rest directly.
        #[arg(long, default_value_t = 10_000)]
        cap: usize,
        /// Explain existing QA pairs (JSON Lines of {id, question, answer})
        /// instead of synthesizing new ones.
        #[arg(long, conflicts_with = "coverage")]
        augment: Option<PathBuf>,
        /// Test items (JSON Lines of {id, question, answer}) for the leakage filter.
        #[arg(long)]
        test_set: Option<PathBuf>,
        #[arg(long)]
        multi_choice: bool,
        #[arg(long)]
        max_branches: Option<usize>,
    },
    /// Score responses against references.
    Evaluate {
        /// JSON Lines of {id, response, reference, options?, gold?}.
        #[arg(long, conflicts_with_all = ["responses", "references"])]
        items: Option<PathBuf>,
        /// JSON Lines of {id, response}.
        #[arg(long, requires = "references")]
        responses: Option<PathBuf>,
        /// JSON Lines of {id, reference, options?, gold?}.
        #[arg(long, requires = "responses")]
        references: Option<PathBuf>,
        /// Comma-separated: recall, f1, rouge_l, exact_match, mindmap_recall.
        #[arg(long, value_delimiter = ',')]
        metrics: Vec<String>,
        /// unicode or cjk
        #[arg(long)]
        language: Option<String>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Fit p = a·ln²r + b·ln r + c to (ratio, performance) points, or
    /// evaluate a published curve.
    FitScaling {
        /// JSON ([{r, p}] or JSON Lines) or two whitespace-separated columns.
        #[arg(long, conflicts_with = "reference")]
        points: Option<PathBuf>,
        /// vanilla or structure_aware
        #[arg(long)]
        reference: Option<String>,
        /// Ratios to evaluate the curve at.
        #[arg(long, value_delimiter = ',')]
        at: Vec<f64>,
    },
    /// Print node counts of the built structures.
    Stats {
        /// Structure files; defaults to the output directory's structures.
        structures: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(&cli.global, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}
