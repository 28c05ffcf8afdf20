//! `dirscribe`: transcribe historical city-directory pages with a
//! multimodal model, post-correct baseline OCR, extract structured entries,
//! and score every stage against the ground truth.

mod config;
mod cost;
mod evals;
mod runs;
mod tasks;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};
use dirscribe_core::corpus::{self, CorpusManifest, DirectoryEntry, DirectoryId};
use dirscribe_core::pipeline::NerMode;

use config::RunConfig;
use evals::OcrCandidate;
use runs::CassetteSpec;
use tasks::NerSource;

#[derive(Parser)]
#[command(
    name = "dirscribe",
    version,
    about = "Transcribe, correct, and extract historical city directories"
)]
struct Cli {
    /// Run configuration file
    #[arg(long, global = true, default_value = "dirscribe.toml", value_name = "PATH")]
    config: PathBuf,
    /// Process only the named directory (repeatable)
    #[arg(long = "directory", global = true, value_name = "CITY-YEAR")]
    directories: Vec<String>,
    /// Override the configured output root
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// record:PATH captures provider exchanges; replay:PATH runs offline
    #[arg(long, global = true, value_name = "record|replay:PATH")]
    cassette: Option<CassetteSpec>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Transcribe page images to text
    Ocr,
    /// Correct a baseline transcription alongside the page image
    Postcorrect {
        /// Baseline name from the manifest (e.g. transkribus)
        #[arg(long)]
        baseline: String,
    },
    /// Extract structured entries to CSV
    Ner {
        /// Input mode: gt-text, ocr-text, or image
        #[arg(long)]
        mode: NerMode,
        /// In ocr-text mode, read the named baseline transcription
        #[arg(long)]
        baseline: Option<String>,
        /// In ocr-text mode, read final.txt files from a prior task directory
        #[arg(long, value_name = "TASK_DIR")]
        from_run: Option<PathBuf>,
    },
    /// Score transcriptions against the ground-truth text
    EvalOcr {
        /// Task directory of a prior ocr/postcorrect run
        #[arg(long, value_name = "TASK_DIR")]
        run: Option<PathBuf>,
        /// Score a manifest baseline instead of a run
        #[arg(long, conflicts_with = "run")]
        baseline: Option<String>,
    },
    /// Score extracted datasets against the ground-truth CSVs
    EvalNer {
        /// Task directory of a prior ner run
        #[arg(long, value_name = "TASK_DIR")]
        run: PathBuf,
        /// Override the configured fuzzy-match threshold
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Summarize timing and token cost from a run's provenance logs
    Cost {
        /// Run directory (or any tree containing provenance logs)
        #[arg(long, value_name = "RUN_DIR")]
        run: PathBuf,
    },
}

/// Everything a command needs: the loaded config, the validated manifest,
/// and the directories selected by `--directory` filters (manifest order).
pub struct Ctx<'a> {
    pub config: &'a RunConfig,
    pub manifest: &'a CorpusManifest,
    pub selected: Vec<&'a DirectoryEntry>,
    pub cassette: Option<&'a CassetteSpec>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = config::load(&cli.config)?;
    if let Some(out) = cli.out {
        config.out = out;
    }
    let manifest = corpus::load_manifest(&config.manifest)?;
    let selected = select_directories(&manifest, &cli.directories)?;
    let ctx = Ctx {
        config: &config,
        manifest: &manifest,
        selected,
        cassette: cli.cassette.as_ref(),
    };

    match cli.command {
        Command::Ocr => tasks::cmd_ocr(&ctx),
        Command::Postcorrect { baseline } => tasks::cmd_postcorrect(&ctx, &baseline),
        Command::Ner { mode, baseline, from_run } => {
            let source = ner_source(mode, baseline, from_run)?;
            tasks::cmd_ner(&ctx, mode, &source)
        }
        Command::EvalOcr { run, baseline } => {
            let candidate = match (run, baseline) {
                (Some(run), None) => OcrCandidate::Run(run),
                (None, Some(baseline)) => OcrCandidate::Baseline(baseline),
                _ => bail!("eval-ocr needs exactly one of --run or --baseline"),
            };
            evals::cmd_eval_ocr(&ctx, &candidate)
        }
        Command::EvalNer { run, threshold } => evals::cmd_eval_ner(&ctx, &run, threshold),
        Command::Cost { run } => cost::cmd_cost(&config, &run),
    }
}

fn ner_source(
    mode: NerMode,
    baseline: Option<String>,
    from_run: Option<PathBuf>,
) -> Result<NerSource> {
    match mode {
        NerMode::OcrTextToCsv => match (baseline, from_run) {
            (Some(name), None) => Ok(NerSource::Baseline(name)),
            (None, Some(run)) => Ok(NerSource::FromRun(run)),
            _ => bail!("ocr-text mode needs exactly one of --baseline or --from-run"),
        },
        NerMode::GtTextToCsv | NerMode::ImageToCsv => {
            if baseline.is_some() || from_run.is_some() {
                bail!("{mode} mode reads its input from the manifest; drop --baseline/--from-run");
            }
            Ok(NerSource::Implicit)
        }
    }
}

/// Resolves `--directory` filters against the manifest, keeping manifest
/// order. No filters selects everything.
fn select_directories<'a>(
    manifest: &'a CorpusManifest,
    filters: &[String],
) -> Result<Vec<&'a DirectoryEntry>> {
    if filters.is_empty() {
        return Ok(manifest.directories.iter().collect());
    }
    let mut wanted = Vec::new();
    for filter in filters {
        let id: DirectoryId = filter.parse()?;
        manifest.directory(&id)?;
        if !wanted.contains(&id) {
            wanted.push(id);
        }
    }
    Ok(manifest.directories.iter().filter(|entry| wanted.contains(&entry.id)).collect())
}
