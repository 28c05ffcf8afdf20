//! The evaluation commands. Both read previously written artifacts, compare
//! them against the ground truth, and emit a human table plus a
//! machine-readable report; a missing candidate degrades to a warning.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dirscribe_core::corpus::{self, join_page_texts, CorpusError, ProvenanceTag, TaskKind};
use dirscribe_core::dataset::csv_to_dataset;
use dirscribe_core::nereval::{
    self, layout_table, render_cell_diff, render_directory_table, render_variable_table,
    DirectoryNerReport, NerAggregate,
};
use dirscribe_core::textmetrics::{
    aggregate_rates, error_rates, AggregateRates, ErrorRates, MetricsError, NormalizationMode,
};
use serde::Serialize;

use crate::config::check_threshold;
use crate::runs::task_dir;
use crate::tasks::run_label;
use crate::Ctx;

/// What a transcription evaluation scores: a prior run's task directory or
/// a baseline named in the manifest.
pub enum OcrCandidate {
    Run(PathBuf),
    Baseline(String),
}

impl OcrCandidate {
    fn label(&self) -> String {
        match self {
            OcrCandidate::Run(path) => run_label(path),
            OcrCandidate::Baseline(name) => name.clone(),
        }
    }
}

const MISSING: &str = "-";

fn percent(value: f64) -> String {
    format!("{:.2}", value * 100.0)
}

#[derive(Serialize)]
struct RatesRecord {
    cer: f64,
    wer: f64,
    detail: ErrorRates,
}

impl From<ErrorRates> for RatesRecord {
    fn from(detail: ErrorRates) -> Self {
        RatesRecord { cer: detail.cer(), wer: detail.wer(), detail }
    }
}

#[derive(Serialize)]
struct OcrDirectoryRecord {
    directory: String,
    normalized: RatesRecord,
    non_normalized: RatesRecord,
}

#[derive(Serialize)]
struct AggregateRecord {
    micro_cer: f64,
    micro_wer: f64,
    macro_cer: f64,
    macro_wer: f64,
    detail: AggregateRates,
}

impl From<AggregateRates> for AggregateRecord {
    fn from(detail: AggregateRates) -> Self {
        AggregateRecord {
            micro_cer: detail.micro.cer(),
            micro_wer: detail.micro.wer(),
            macro_cer: detail.macro_cer,
            macro_wer: detail.macro_wer,
            detail,
        }
    }
}

#[derive(Serialize)]
struct OcrReport {
    candidate: String,
    directories: Vec<OcrDirectoryRecord>,
    skipped: Vec<String>,
    normalized_aggregate: Option<AggregateRecord>,
    non_normalized_aggregate: Option<AggregateRecord>,
}

pub fn cmd_eval_ocr(ctx: &Ctx, candidate: &OcrCandidate) -> Result<()> {
    let label = candidate.label();
    let mut rows = Vec::new();
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    let mut normalized_entries = Vec::new();
    let mut non_normalized_entries = Vec::new();

    for entry in &ctx.selected {
        let id = entry.id.to_string();
        let gt = corpus::load_ground_truth_text(ctx.manifest, &entry.id)?;
        let Some(text) = candidate_text(ctx, candidate, &id)? else {
            eprintln!("warning: {id}: no candidate transcription; marked \"{MISSING}\"");
            rows.push(missing_row(&id));
            skipped.push(id);
            continue;
        };

        let scored = NormalizationMode::ALL
            .map(|mode| error_rates(&gt.transcription.text, &text, mode));
        let [normalized, non_normalized] = match scored {
            [Ok(normalized), Ok(non_normalized)] => [normalized, non_normalized],
            _ => {
                // the reference normalizes to nothing; rates are undefined
                eprintln!(
                    "warning: {id}: {}; marked \"{MISSING}\"",
                    MetricsError::EmptyGroundTruth
                );
                rows.push(missing_row(&id));
                skipped.push(id);
                continue;
            }
        };

        rows.push(vec![
            id.clone(),
            percent(normalized.cer()),
            percent(normalized.wer()),
            percent(non_normalized.cer()),
            percent(non_normalized.wer()),
        ]);
        normalized_entries.push(normalized.clone());
        non_normalized_entries.push(non_normalized.clone());
        records.push(OcrDirectoryRecord {
            directory: id,
            normalized: normalized.into(),
            non_normalized: non_normalized.into(),
        });
    }

    let normalized_aggregate = pool(&normalized_entries)?;
    let non_normalized_aggregate = pool(&non_normalized_entries)?;
    if let (Some(normalized), Some(non_normalized)) =
        (&normalized_aggregate, &non_normalized_aggregate)
    {
        rows.push(vec![
            "Full Sample (micro)".to_string(),
            percent(normalized.micro.cer()),
            percent(normalized.micro.wer()),
            percent(non_normalized.micro.cer()),
            percent(non_normalized.micro.wer()),
        ]);
        rows.push(vec![
            "Full Sample (macro)".to_string(),
            percent(normalized.macro_cer),
            percent(normalized.macro_wer),
            percent(non_normalized.macro_cer),
            percent(non_normalized.macro_wer),
        ]);
    }

    let mut text = format!("Transcription evaluation, candidate: {label}\n\n");
    text.push_str(&layout_table(
        &[
            "Directory",
            "CER % (normalized)",
            "WER % (normalized)",
            "CER % (non-normalized)",
            "WER % (non-normalized)",
        ],
        &rows,
    ));
    for id in &skipped {
        text.push_str(&format!("skipped: {id} (no scorable candidate)\n"));
    }

    let report = OcrReport {
        candidate: label.clone(),
        directories: records,
        skipped,
        normalized_aggregate: normalized_aggregate.map(Into::into),
        non_normalized_aggregate: non_normalized_aggregate.map(Into::into),
    };
    let out_dir = task_dir(ctx.config, &format!("eval-ocr-{label}"));
    write_report(&out_dir, &text, &report)?;
    print!("{text}");
    Ok(())
}

fn candidate_text(ctx: &Ctx, candidate: &OcrCandidate, id: &str) -> Result<Option<String>> {
    match candidate {
        OcrCandidate::Run(run_dir) => {
            let path = run_dir.join(id).join("final.txt");
            if !path.is_file() {
                return Ok(None);
            }
            fs::read_to_string(&path)
                .map(Some)
                .with_context(|| format!("cannot read {}", path.display()))
        }
        OcrCandidate::Baseline(name) => {
            let entry = ctx.selected.iter().find(|e| e.id.to_string() == id).expect("selected");
            match corpus::load_baseline_pages(ctx.manifest, &entry.id, name) {
                Ok(pages) => Ok(Some(join_page_texts(pages.iter().map(|t| t.text.as_str())))),
                Err(CorpusError::MissingBaseline { .. }) => Ok(None),
                Err(err) => Err(err.into()),
            }
        }
    }
}

fn missing_row(id: &str) -> Vec<String> {
    let mut row = vec![id.to_string()];
    row.extend(std::iter::repeat(MISSING.to_string()).take(4));
    row
}

fn pool(entries: &[ErrorRates]) -> Result<Option<AggregateRates>> {
    if entries.is_empty() {
        return Ok(None);
    }
    Ok(Some(aggregate_rates(entries)?))
}

#[derive(Serialize)]
struct NerReport<'a> {
    candidate: String,
    threshold: f64,
    directories: &'a [DirectoryNerReport],
    aggregate: Option<&'a NerAggregate>,
    skipped: &'a [String],
}

pub fn cmd_eval_ner(ctx: &Ctx, run_dir: &Path, threshold: Option<f64>) -> Result<()> {
    let threshold = threshold.unwrap_or(ctx.config.threshold);
    check_threshold(threshold)?;
    let label = run_label(run_dir);

    let mut reports = Vec::new();
    let mut skipped = Vec::new();
    for entry in &ctx.selected {
        let truth_bytes = fs::read(&entry.gt_csv)
            .with_context(|| format!("cannot read {}", entry.gt_csv.display()))?;
        let truth = csv_to_dataset(
            &truth_bytes,
            entry.id.clone(),
            ProvenanceTag::ground_truth(TaskKind::NerImage),
        )
        .with_context(|| format!("ground-truth dataset {}", entry.gt_csv.display()))?;

        let candidate_path = run_dir.join(entry.id.to_string()).join("final.csv");
        if !candidate_path.is_file() {
            eprintln!(
                "warning: {}: no candidate dataset at {}; skipped",
                entry.id,
                candidate_path.display()
            );
            skipped.push(entry.id.to_string());
            continue;
        }
        let candidate_bytes = fs::read(&candidate_path)
            .with_context(|| format!("cannot read {}", candidate_path.display()))?;
        let candidate = csv_to_dataset(
            &candidate_bytes,
            entry.id.clone(),
            ProvenanceTag::baseline(label.clone(), TaskKind::NerImage),
        )
        .with_context(|| format!("candidate dataset {}", candidate_path.display()))?;

        reports.push(nereval::evaluate_directory(&candidate, &truth, threshold));
    }

    let mut all_gated = None;
    let pooled = if reports.is_empty() {
        eprintln!("warning: nothing evaluated");
        None
    } else {
        match nereval::aggregate(&reports) {
            Ok(pooled) => Some(pooled),
            Err(err) => {
                all_gated = Some(err);
                None
            }
        }
    };

    let mut text = format!(
        "Entity-extraction evaluation, candidate: {label}, fuzzy threshold: {threshold:.2}\n\n"
    );
    text.push_str(&render_directory_table(&reports, pooled.as_ref()));
    text.push_str("\nPer-variable rates (strict %/fuzzy %)\n");
    text.push_str(&render_variable_table(&reports, pooled.as_ref()));
    for id in &skipped {
        text.push_str(&format!("skipped: {id} (no candidate dataset)\n"));
    }

    let report = NerReport {
        candidate: label.clone(),
        threshold,
        directories: &reports,
        aggregate: pooled.as_ref(),
        skipped: &skipped,
    };
    let out_dir = task_dir(ctx.config, &format!("eval-ner-{label}"));
    write_report(&out_dir, &text, &report)?;
    let diff_path = out_dir.join("cell_diff.txt");
    fs::write(&diff_path, render_cell_diff(&reports))
        .with_context(|| format!("cannot write {}", diff_path.display()))?;
    print!("{text}");

    match all_gated {
        Some(err) => Err(err.into()),
        None => Ok(()),
    }
}

fn write_report(out_dir: &Path, text: &str, report: &impl Serialize) -> Result<()> {
    fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;
    let text_path = out_dir.join("report.txt");
    fs::write(&text_path, text)
        .with_context(|| format!("cannot write {}", text_path.display()))?;
    let mut json = serde_json::to_string_pretty(report).expect("reports serialize");
    json.push('\n');
    let json_path = out_dir.join("report.json");
    fs::write(&json_path, json)
        .with_context(|| format!("cannot write {}", json_path.display()))
}
