//! `qadistill <stage> --config <path>`: staged pipeline runner.
//!
//! Exit codes: 0 on success, 1 on stage failure (with a one-line JSON error
//! report on stderr), 2 on bad usage or invalid config.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use qadistill::pipeline::{run_stage, validate_config, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StageArg {
    Ingest,
    GenQuestions,
    SampleQuestions,
    GenAnswers,
    OptimizePrompt,
    Judge,
    Evaluate,
    Export,
    /// Run every stage in pipeline order.
    All,
}

impl StageArg {
    fn stages(self) -> Vec<Stage> {
        match self {
            StageArg::Ingest => vec![Stage::Ingest],
            StageArg::GenQuestions => vec![Stage::GenQuestions],
            StageArg::SampleQuestions => vec![Stage::SampleQuestions],
            StageArg::GenAnswers => vec![Stage::GenAnswers],
            StageArg::OptimizePrompt => vec![Stage::OptimizePrompt],
            StageArg::Judge => vec![Stage::Judge],
            StageArg::Evaluate => vec![Stage::Evaluate],
            StageArg::Export => vec![Stage::Export],
            // The optimized prompt must exist before corpus answers are
            // generated, so optimize-prompt runs ahead of gen-answers.
            StageArg::All => vec![
                Stage::Ingest,
                Stage::GenQuestions,
                Stage::SampleQuestions,
                Stage::OptimizePrompt,
                Stage::GenAnswers,
                Stage::Judge,
                Stage::Evaluate,
                Stage::Export,
            ],
        }
    }
}

/// Distill a course textbook into a QA fine-tuning corpus.
#[derive(Debug, Parser)]
#[command(name = "qadistill", version, about)]
struct Cli {
    /// Pipeline stage to run.
    #[arg(value_enum)]
    stage: StageArg,

    /// Path to the pipeline TOML config.
    #[arg(long)]
    config: PathBuf,

    /// Print the planned LLM request count and exit without side effects.
    #[arg(long)]
    dry_run: bool,

    /// Skip stages whose outputs already exist.
    #[arg(long)]
    resume: bool,

    /// Override the work directory from the config.
    #[arg(long)]
    work_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();

    let (mut config, warnings) = match validate_config(&cli.config) {
        Ok(parsed) => parsed,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    for warning in &warnings {
        log::warn!("{}", warning.0);
    }
    if let Some(work_dir) = cli.work_dir {
        config.paths.work_dir = work_dir;
    }

    for stage in cli.stage.stages() {
        match run_stage(stage, &config, cli.dry_run, cli.resume) {
            Ok(report) if report.dry_run => {
                println!(
                    "{}: planned {} LLM requests (dry run)",
                    stage, report.planned_requests
                );
            }
            Ok(report) if report.skipped => {
                println!("{stage}: outputs up to date, skipped");
            }
            Ok(report) => {
                println!("{}: done ({} outputs)", stage, report.outputs.len());
            }
            Err(e) => {
                let report = serde_json::json!({
                    "stage": stage.name(),
                    "error": e.to_string(),
                });
                eprintln!("{report}");
                return ExitCode::from(1);
            }
        }
    }
    ExitCode::SUCCESS
}
