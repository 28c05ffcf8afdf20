//! The generation commands: transcription, post-correction, and entity
//! extraction. Each processes the selected directories independently,
//! collects per-directory failures, and exits nonzero if any occurred.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dirscribe_core::corpus::{
    self, join_page_texts, DirectoryEntry, ProvenanceTag, TaskKind, Transcription,
    TranscriptionScope,
};
use dirscribe_core::pipeline::{
    dataset_to_csv, run_ner, run_ocr, run_post_correction, NerInput, NerMode, PageStore,
};

use crate::runs::{build_provider, print_request_timings, task_dir, write_provenance};
use crate::Ctx;

/// Where the ocr-text extraction mode reads its input transcription from.
pub enum NerSource {
    /// The mode's natural input (page images or ground-truth text).
    Implicit,
    /// A named baseline from the manifest, joined over its pages.
    Baseline(String),
    /// A prior run's task directory containing `<directory>/final.txt`.
    FromRun(PathBuf),
}

pub fn cmd_ocr(ctx: &Ctx) -> Result<()> {
    let provider = build_provider(ctx.config, ctx.cassette)?;
    let task_root = task_dir(ctx.config, "ocr");

    for_each_directory(ctx, "ocr", |entry| {
        let pages = corpus::load_pages(ctx.manifest, &entry.id)?;
        let out_dir = task_root.join(entry.id.to_string());
        let store = PageStore::open(out_dir.join("pages"))?;
        let run = run_ocr(
            provider.as_ref(),
            &ctx.config.model,
            &ctx.config.templates.ocr,
            &pages,
            Some(&store),
        )?;
        print_request_timings(&entry.id, &run.requests);
        write_text(&out_dir.join("final.txt"), &run.transcription.text)?;
        write_provenance(
            &out_dir.join("provenance.log"),
            &entry.id,
            "ocr",
            &run.transcription.provenance,
            &run.requests,
        )
    })
}

pub fn cmd_postcorrect(ctx: &Ctx, baseline: &str) -> Result<()> {
    let provider = build_provider(ctx.config, ctx.cassette)?;
    let task_root = task_dir(ctx.config, "postcorrect");

    for_each_directory(ctx, "postcorrect", |entry| {
        let pages = corpus::load_pages(ctx.manifest, &entry.id)?;
        let noisy = corpus::load_baseline_pages(ctx.manifest, &entry.id, baseline)?;
        let out_dir = task_root.join(entry.id.to_string());
        let store = PageStore::open(out_dir.join("pages"))?;
        let run = run_post_correction(
            provider.as_ref(),
            &ctx.config.model,
            &ctx.config.templates.postcorrect,
            &pages,
            &noisy,
            Some(&store),
        )?;
        print_request_timings(&entry.id, &run.requests);
        write_text(&out_dir.join("final.txt"), &run.transcription.text)?;
        write_provenance(
            &out_dir.join("provenance.log"),
            &entry.id,
            "postcorrect",
            &run.transcription.provenance,
            &run.requests,
        )
    })
}

pub fn cmd_ner(ctx: &Ctx, mode: NerMode, source: &NerSource) -> Result<()> {
    let provider = build_provider(ctx.config, ctx.cassette)?;
    let task_label = format!("ner-{mode}");
    let task_root = task_dir(ctx.config, &task_label);
    let template = match mode {
        NerMode::ImageToCsv => &ctx.config.templates.ner_image,
        NerMode::GtTextToCsv | NerMode::OcrTextToCsv => &ctx.config.templates.ner_text,
    };

    for_each_directory(ctx, &task_label, |entry| {
        let out_dir = task_root.join(entry.id.to_string());
        let store = PageStore::open(out_dir.join("pages"))?;

        // keep the inputs alive for the duration of the run
        let pages;
        let text;
        let input = match (mode, source) {
            (NerMode::ImageToCsv, NerSource::Implicit) => {
                pages = corpus::load_pages(ctx.manifest, &entry.id)?;
                NerInput::Pages(&pages)
            }
            (NerMode::GtTextToCsv, NerSource::Implicit) => {
                let gt = corpus::load_ground_truth_text(ctx.manifest, &entry.id)?;
                if gt.empty_warning {
                    eprintln!("warning: {}: ground-truth text is empty", entry.id);
                }
                text = gt.transcription;
                NerInput::Text(&text)
            }
            (NerMode::OcrTextToCsv, NerSource::Baseline(name)) => {
                let noisy = corpus::load_baseline_pages(ctx.manifest, &entry.id, name)?;
                text = Transcription {
                    directory: entry.id.clone(),
                    scope: TranscriptionScope::WholeDirectory,
                    text: join_page_texts(noisy.iter().map(|t| t.text.as_str())),
                    provenance: ProvenanceTag::baseline(name, TaskKind::Ocr),
                };
                NerInput::Text(&text)
            }
            (NerMode::OcrTextToCsv, NerSource::FromRun(run_dir)) => {
                let path = run_dir.join(entry.id.to_string()).join("final.txt");
                let content = fs::read_to_string(&path)
                    .with_context(|| format!("cannot read {}", path.display()))?;
                text = Transcription {
                    directory: entry.id.clone(),
                    scope: TranscriptionScope::WholeDirectory,
                    text: content,
                    provenance: ProvenanceTag::baseline(run_label(run_dir), TaskKind::Ocr),
                };
                NerInput::Text(&text)
            }
            _ => bail!("mode {mode} does not take this input source"),
        };

        let run = run_ner(provider.as_ref(), &ctx.config.model, template, mode, input, Some(&store))?;
        print_request_timings(&entry.id, &run.requests);
        if run.empty_warning {
            eprintln!("warning: {}: extraction produced no entries", entry.id);
        }
        fs::write(out_dir.join("final.csv"), dataset_to_csv(&run.dataset))
            .with_context(|| format!("cannot write {}", out_dir.join("final.csv").display()))?;
        write_provenance(
            &out_dir.join("provenance.log"),
            &entry.id,
            &task_label,
            &run.dataset.provenance,
            &run.requests,
        )
    })
}

pub fn run_label(run_dir: &Path) -> String {
    run_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".to_string())
}

fn for_each_directory(
    ctx: &Ctx,
    task: &str,
    mut process: impl FnMut(&DirectoryEntry) -> Result<()>,
) -> Result<()> {
    let mut failed = 0usize;
    for entry in &ctx.selected {
        match process(entry) {
            Ok(()) => println!("{task}: {} done", entry.id),
            Err(err) => {
                eprintln!("{task}: {} failed: {err:#}", entry.id);
                failed += 1;
            }
        }
    }
    if failed > 0 {
        bail!("{failed} of {} directories failed", ctx.selected.len());
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}
