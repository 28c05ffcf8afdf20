//! Timing and price summary over a run tree: walks every provenance log
//! under the given root and reports seconds per page and dollars per
//! thousand pages, per model.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dirscribe_core::llmclient::cost_from_totals;
use dirscribe_core::nereval::layout_table;

use crate::config::RunConfig;
use crate::runs::{read_provenance, LogLine};

#[derive(Default)]
struct Totals {
    pages: u64,
    requests: u64,
    seconds: f64,
    input_tokens: u64,
    output_tokens: u64,
}

pub fn cmd_cost(config: &RunConfig, run_dir: &Path) -> Result<()> {
    let mut logs = Vec::new();
    collect_provenance_logs(run_dir, &mut logs)?;
    logs.sort();
    if logs.is_empty() {
        bail!("no provenance logs under {}", run_dir.display());
    }

    let mut per_model: BTreeMap<String, Totals> = BTreeMap::new();
    for path in &logs {
        for line in read_provenance(path)? {
            let LogLine::Request {
                page, model, elapsed_seconds, input_tokens, output_tokens, ..
            } = line
            else {
                continue;
            };
            let totals = per_model.entry(model).or_default();
            totals.requests += 1;
            if page.is_some() {
                totals.pages += 1;
            }
            totals.seconds += elapsed_seconds;
            totals.input_tokens += input_tokens;
            totals.output_tokens += output_tokens;
        }
    }
    if per_model.is_empty() {
        bail!("no request records in the provenance logs under {}", run_dir.display());
    }

    let mut rows = Vec::new();
    for (model, totals) in &per_model {
        if totals.pages == 0 {
            eprintln!("warning: {model}: no per-page requests; cannot compute per-page cost");
            continue;
        }
        let report = cost_from_totals(
            totals.pages,
            totals.seconds,
            totals.input_tokens,
            totals.output_tokens,
            config.provider.price_per_million_input_tokens,
            config.provider.price_per_million_output_tokens,
        )?;
        rows.push(vec![
            model.clone(),
            report.pages.to_string(),
            format!("{:.2}", report.total_seconds),
            format!("{:.2}", report.seconds_per_page),
            format!("${:.2}", report.dollars_per_1000_pages),
        ]);
    }
    if rows.is_empty() {
        bail!("no per-page requests recorded under {}", run_dir.display());
    }

    print!(
        "{}",
        layout_table(&["Model", "Pages", "Total s", "s/page", "$/1,000 pages"], &rows)
    );
    Ok(())
}

fn collect_provenance_logs(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir)
        .with_context(|| format!("cannot read directory {}", dir.display()))?;
    for entry in entries {
        let path = entry.with_context(|| format!("cannot list {}", dir.display()))?.path();
        if path.is_dir() {
            collect_provenance_logs(&path, found)?;
        } else if path.file_name().is_some_and(|n| n == "provenance.log") {
            found.push(path);
        }
    }
    Ok(())
}
