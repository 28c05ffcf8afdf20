//! Cell-level scoring of a generated entry dataset against ground truth:
//! strict equality and Jaro-Winkler fuzzy matching over normalized cells,
//! a row-count gate per directory, and cell-weighted aggregation across
//! directories, plus renderers for the evaluation reports.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::DirectoryId;
use crate::dataset::{EntryDataset, Variable};
use crate::textmetrics::jaro_winkler;

#[derive(Debug, Error)]
pub enum NerEvalError {
    #[error("no evaluable directories: all {gated} were gated out by the row-count check")]
    NoEvaluableDirectories { gated: usize },
}

/// The outcome of comparing one generated cell against its ground-truth
/// counterpart. Cells are stored post-normalization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellVerdict {
    pub row: usize,
    pub column: Variable,
    pub generated: Option<String>,
    pub truth: Option<String>,
    pub strict: bool,
    pub fuzzy: bool,
    pub similarity: f64,
}

/// Match tallies over a set of cells. Rates fall out as matches over cells;
/// an empty tally counts as fully matched so that scoring a dataset against
/// itself is 100% even when the dataset has no rows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MatchCounts {
    pub cells: u64,
    pub strict: u64,
    pub fuzzy: u64,
}

impl MatchCounts {
    fn observe(&mut self, verdict: &CellVerdict) {
        self.cells += 1;
        self.strict += u64::from(verdict.strict);
        self.fuzzy += u64::from(verdict.fuzzy);
    }

    fn absorb(&mut self, other: MatchCounts) {
        self.cells += other.cells;
        self.strict += other.strict;
        self.fuzzy += other.fuzzy;
    }

    pub fn strict_rate(&self) -> f64 {
        rate(self.strict, self.cells)
    }

    pub fn fuzzy_rate(&self) -> f64 {
        rate(self.fuzzy, self.cells)
    }
}

fn rate(matched: u64, cells: u64) -> f64 {
    if cells == 0 {
        1.0
    } else {
        matched as f64 / cells as f64
    }
}

/// Per-directory evaluation result. A gated directory carries no counts or
/// verdicts; its cell count is still reported so tables can show the size
/// of what was excluded.
#[derive(Debug, Clone, Serialize)]
pub struct DirectoryNerReport {
    pub directory: DirectoryId,
    pub gated_out: bool,
    pub generated_rows: usize,
    pub truth_rows: usize,
    pub counts: Option<MatchCounts>,
    pub per_variable: BTreeMap<Variable, MatchCounts>,
    #[serde(skip)]
    pub verdicts: Vec<CellVerdict>,
}

impl DirectoryNerReport {
    /// Four cells per ground-truth row, gated or not.
    pub fn cell_count(&self) -> usize {
        4 * self.truth_rows
    }
}

/// Cell-weighted tallies over every directory that passed the gate.
#[derive(Debug, Clone, Serialize)]
pub struct NerAggregate {
    pub included: Vec<DirectoryId>,
    pub gated: Vec<DirectoryId>,
    pub counts: MatchCounts,
    pub per_variable: BTreeMap<Variable, MatchCounts>,
}

/// Canonical cell form before comparison: trim, lowercase, and treat an
/// empty result as an absent value, unifying JSON null with the empty CSV
/// cell.
pub fn normalize_cell(value: Option<&str>) -> Option<String> {
    let trimmed = value?.trim();
    if trimmed.is_empty() {
        None
    } else {
        Some(trimmed.to_lowercase())
    }
}

/// Scores one normalized cell pair. Strict is exact equality (two absent
/// cells agree); fuzzy additionally accepts similarity at or above the
/// threshold; an absent cell never fuzzy-matches a present one.
pub fn compare_cell(
    row: usize,
    column: Variable,
    generated: Option<&str>,
    truth: Option<&str>,
    threshold: f64,
) -> CellVerdict {
    let (strict, fuzzy, similarity) = match (generated, truth) {
        (None, None) => (true, true, 1.0),
        (Some(g), Some(t)) => {
            let similarity = jaro_winkler(g, t);
            let strict = g == t;
            (strict, strict || similarity >= threshold, similarity)
        }
        _ => (false, false, 0.0),
    };
    CellVerdict {
        row,
        column,
        generated: generated.map(str::to_string),
        truth: truth.map(str::to_string),
        strict,
        fuzzy,
        similarity,
    }
}

/// The pass@1 gate: a directory is excluded when the generated dataset does
/// not have the ground truth's row count. No row alignment is attempted.
pub fn gate_row_count(generated: &EntryDataset, truth: &EntryDataset) -> bool {
    generated.records.len() != truth.records.len()
}

/// Compares two datasets row by row, cell by cell. Rows are matched by
/// position; the row-count gate is the only guard against misalignment.
pub fn evaluate_directory(
    generated: &EntryDataset,
    truth: &EntryDataset,
    threshold: f64,
) -> DirectoryNerReport {
    debug_assert_eq!(
        generated.directory, truth.directory,
        "datasets under comparison must describe one directory"
    );
    let directory = truth.directory.clone();
    let generated_rows = generated.records.len();
    let truth_rows = truth.records.len();

    if gate_row_count(generated, truth) {
        return DirectoryNerReport {
            directory,
            gated_out: true,
            generated_rows,
            truth_rows,
            counts: None,
            per_variable: BTreeMap::new(),
            verdicts: Vec::new(),
        };
    }

    let mut counts = MatchCounts::default();
    let mut per_variable: BTreeMap<Variable, MatchCounts> =
        Variable::ALL.iter().map(|v| (*v, MatchCounts::default())).collect();
    let mut verdicts = Vec::with_capacity(4 * truth_rows);
    for (row, (generated_record, truth_record)) in
        generated.records.iter().zip(&truth.records).enumerate()
    {
        for column in Variable::ALL {
            let generated_cell = normalize_cell(generated_record.get(column));
            let truth_cell = normalize_cell(truth_record.get(column));
            let verdict = compare_cell(
                row,
                column,
                generated_cell.as_deref(),
                truth_cell.as_deref(),
                threshold,
            );
            counts.observe(&verdict);
            per_variable.get_mut(&column).expect("all variables seeded").observe(&verdict);
            verdicts.push(verdict);
        }
    }

    DirectoryNerReport {
        directory,
        gated_out: false,
        generated_rows,
        truth_rows,
        counts: Some(counts),
        per_variable,
        verdicts,
    }
}

/// Pools per-directory tallies, cell-weighted, over the non-gated reports.
pub fn aggregate(reports: &[DirectoryNerReport]) -> Result<NerAggregate, NerEvalError> {
    let mut included = Vec::new();
    let mut gated = Vec::new();
    let mut counts = MatchCounts::default();
    let mut per_variable: BTreeMap<Variable, MatchCounts> =
        Variable::ALL.iter().map(|v| (*v, MatchCounts::default())).collect();

    for report in reports {
        if report.gated_out {
            gated.push(report.directory.clone());
            continue;
        }
        included.push(report.directory.clone());
        counts.absorb(report.counts.unwrap_or_default());
        for (variable, tally) in &report.per_variable {
            per_variable.get_mut(variable).expect("all variables seeded").absorb(*tally);
        }
    }

    if included.is_empty() {
        return Err(NerEvalError::NoEvaluableDirectories { gated: gated.len() });
    }
    Ok(NerAggregate { included, gated, counts, per_variable })
}

const GATED_CELL: &str = "-";

fn percent(rate: f64) -> String {
    format!("{:.2}", rate * 100.0)
}

/// Lays out rows under a header; the first column is left-aligned, the rest
/// right-aligned. Purely a function of its inputs, so reports re-render
/// byte-identically. Shared by every tabular report in the toolkit.
pub fn layout_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let columns = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let mut emit = |cells: &[String]| {
        for (i, cell) in cells.iter().enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            let pad = widths[i] - cell.chars().count();
            if i == 0 {
                out.push_str(cell);
                if i + 1 < columns {
                    out.push_str(&" ".repeat(pad));
                }
            } else {
                out.push_str(&" ".repeat(pad));
                out.push_str(cell);
            }
        }
        while out.ends_with(' ') {
            out.pop();
        }
        out.push('\n');
    };
    emit(&header.iter().map(|h| h.to_string()).collect::<Vec<_>>());
    for row in rows {
        emit(row);
    }
    out
}

/// One row per directory with its cell count and overall rates, gated rates
/// as "-", and a trailing full-sample row when an aggregate exists.
pub fn render_directory_table(
    reports: &[DirectoryNerReport],
    aggregate: Option<&NerAggregate>,
) -> String {
    let mut rows = Vec::new();
    for report in reports {
        let (strict, fuzzy) = match &report.counts {
            Some(counts) => (percent(counts.strict_rate()), percent(counts.fuzzy_rate())),
            None => (GATED_CELL.to_string(), GATED_CELL.to_string()),
        };
        rows.push(vec![
            report.directory.to_string(),
            format!("{}/{}", report.generated_rows, report.truth_rows),
            report.cell_count().to_string(),
            strict,
            fuzzy,
        ]);
    }
    if let Some(aggregate) = aggregate {
        rows.push(vec![
            "Full Sample".to_string(),
            format!("({} of {} directories)", aggregate.included.len(), reports.len()),
            aggregate.counts.cells.to_string(),
            percent(aggregate.counts.strict_rate()),
            percent(aggregate.counts.fuzzy_rate()),
        ]);
    }
    layout_table(&["Directory", "Rows (gen/gt)", "Cells", "Strict %", "Fuzzy %"], &rows)
}

/// One row per directory with a strict/fuzzy pair per variable.
pub fn render_variable_table(
    reports: &[DirectoryNerReport],
    aggregate: Option<&NerAggregate>,
) -> String {
    let pair = |tally: &MatchCounts| {
        format!("{}/{}", percent(tally.strict_rate()), percent(tally.fuzzy_rate()))
    };
    let variable_cells = |per_variable: &BTreeMap<Variable, MatchCounts>| -> Vec<String> {
        Variable::ALL
            .iter()
            .map(|v| per_variable.get(v).map(|t| pair(t)).unwrap_or_else(|| GATED_CELL.to_string()))
            .collect()
    };

    let mut rows = Vec::new();
    for report in reports {
        let mut row = vec![report.directory.to_string()];
        if report.gated_out {
            row.extend(std::iter::repeat(GATED_CELL.to_string()).take(4));
        } else {
            row.extend(variable_cells(&report.per_variable));
        }
        rows.push(row);
    }
    if let Some(aggregate) = aggregate {
        let mut row = vec!["Full Sample".to_string()];
        row.extend(variable_cells(&aggregate.per_variable));
        rows.push(row);
    }

    let header: Vec<&str> = std::iter::once("Directory (strict %/fuzzy %)")
        .chain(Variable::ALL.iter().map(|v| v.key()))
        .collect();
    layout_table(&header, &rows)
}

/// Every non-strict cell, generated value first, ground truth after the
/// slash. Gated directories contribute a single explanatory line.
pub fn render_cell_diff(reports: &[DirectoryNerReport]) -> String {
    let show = |cell: &Option<String>| match cell {
        Some(text) => text.clone(),
        None => "(null)".to_string(),
    };
    let mut out = String::new();
    for report in reports {
        if report.gated_out {
            out.push_str(&format!(
                "{}: gated out ({} generated rows vs {} ground-truth rows)\n",
                report.directory, report.generated_rows, report.truth_rows
            ));
            continue;
        }
        for verdict in &report.verdicts {
            if verdict.strict {
                continue;
            }
            let kind = if verdict.fuzzy { "fuzzy" } else { "miss" };
            out.push_str(&format!(
                "{} row {} {}: {} / {} (gt) [{kind}]\n",
                report.directory,
                verdict.row,
                verdict.column,
                show(&verdict.generated),
                show(&verdict.truth),
            ));
        }
    }
    out
}
