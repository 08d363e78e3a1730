//! Thin CLI over the pipeline module. Each subcommand takes a TOML config
//! file; exit codes are 0 on success, 1 on validation failures, 2 on
//! transport failures and aborted runs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;

use gavel::pipeline::{
    cmd_distill, cmd_export_sft, cmd_ingest, cmd_matrix_run, cmd_report, DistillSpec, ExportSpec,
    IngestSpec, PipelineError, ReportSpec, RunSpec,
};

#[derive(Parser)]
#[command(
    name = "gavel",
    version,
    about = "Bar-exam question answering evaluation harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load, validate, de-duplicate, and leakage-check corpora; write
    /// canonical files and print the per-domain distribution.
    Ingest {
        #[arg(long)]
        config: PathBuf,
    },
    /// Restructure raw explanations with a teacher backend.
    Distill {
        #[arg(long)]
        config: PathBuf,
    },
    /// Sample per domain and export prompt/completion training pairs.
    ExportSft {
        #[arg(long)]
        config: PathBuf,
    },
    /// Expand the configuration matrix and evaluate every cell.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Aggregate finished runs into report tables and plots.
    Report {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load_spec<T: DeserializeOwned>(path: &PathBuf) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Ingest { config } => {
            let spec: IngestSpec = load_spec(&config)?;
            let summary = cmd_ingest(&spec)?;
            println!(
                "train: kept {} (removed {} duplicates) -> {}",
                summary.train_kept,
                summary.train_removed,
                summary.train_path.display()
            );
            println!(
                "test:  kept {} (removed {} duplicates) -> {}",
                summary.test_kept,
                summary.test_removed,
                summary.test_path.display()
            );
            println!("no train/test overlap\n");
            print!("{}", summary.distribution_table());
        }
        Command::Distill { config } => {
            let spec: DistillSpec = load_spec(&config)?;
            let summary = cmd_distill(&spec)?;
            println!(
                "distilled {} records ({} failures, {} already done) -> {}",
                summary.distilled,
                summary.failed,
                summary.skipped_already_done,
                spec.out_corpus.display()
            );
            println!("failure report: {}", spec.failure_report.display());
        }
        Command::ExportSft { config } => {
            let spec: ExportSpec = load_spec(&config)?;
            let count = cmd_export_sft(&spec)?;
            println!("wrote {count} training pairs -> {}", spec.out.display());
        }
        Command::Run { config } => {
            let spec: RunSpec = load_spec(&config)?;
            let manifests = cmd_matrix_run(&spec)?;
            for manifest in &manifests {
                println!(
                    "run {} [{} n={} {}] {} ({}/{})",
                    manifest.run_id,
                    manifest.model_id,
                    manifest.train_sample_size,
                    manifest.config.short_code(),
                    manifest.status,
                    manifest.questions_answered,
                    manifest.questions_total
                );
            }
            println!("{} runs in {}", manifests.len(), spec.out_dir.display());
        }
        Command::Report { config } => {
            let spec: ReportSpec = load_spec(&config)?;
            let files = cmd_report(&spec)?;
            for file in &files {
                println!("wrote {}", file.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
