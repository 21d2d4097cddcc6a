//! Accuracy tables in markdown, CSV and JSON.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::TaskKind;
use crate::detector::Mode;
use crate::metrics::EvalReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Md,
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "md" | "markdown" => Ok(Format::Md),
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format {other:?}")),
        }
    }
}

/// Column of a comparison table, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ColumnKey {
    Mode(Mode),
    Task(TaskKind),
}

impl fmt::Display for ColumnKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnKey::Mode(m) => write!(f, "{m}"),
            ColumnKey::Task(t) => write!(f, "{t}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    /// `None` renders as "-".
    pub cells: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub caption: String,
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
}

impl ComparisonTable {
    /// Checks that every row has one cell per column.
    pub fn is_rectangular(&self) -> bool {
        self.rows.iter().all(|r| r.cells.len() == self.columns.len())
    }

    pub fn cell(&self, row: &str, column: &str) -> Option<f64> {
        let c = self.columns.iter().position(|x| x == column)?;
        self.rows.iter().find(|r| r.label == row)?.cells[c]
    }

    pub fn with_caption(mut self, caption: impl Into<String>) -> Self {
        self.caption = caption.into();
        self
    }
}

fn fmt_cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6}"),
        None => "-".to_string(),
    }
}

pub fn render(table: &ComparisonTable, format: Format) -> String {
    match format {
        Format::Md => render_md(table),
        Format::Csv => render_csv(table),
        Format::Json => {
            let mut s = serde_json::to_string_pretty(table).expect("tables always serialize");
            s.push('\n');
            s
        }
    }
}

fn render_md(table: &ComparisonTable) -> String {
    let mut out = String::new();
    if !table.caption.is_empty() {
        out.push_str(&format!("**{}**\n\n", table.caption));
    }
    out.push_str("| Model |");
    for c in &table.columns {
        out.push_str(&format!(" {c} |"));
    }
    out.push_str("\n|---|");
    for _ in &table.columns {
        out.push_str("---|");
    }
    out.push('\n');
    for row in &table.rows {
        out.push_str(&format!("| {} |", row.label));
        for cell in &row.cells {
            out.push_str(&format!(" {} |", fmt_cell(*cell)));
        }
        out.push('\n');
    }
    out
}

/// Each column appears twice: six-decimal text, then the raw value.
fn render_csv(table: &ComparisonTable) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["model".to_string()];
    for c in &table.columns {
        header.push(c.clone());
        header.push(format!("{c}_raw"));
    }
    w.write_record(&header).expect("in-memory write");
    for row in &table.rows {
        let mut rec = vec![row.label.clone()];
        for cell in &row.cells {
            rec.push(fmt_cell(*cell));
            rec.push(cell.map(|v| v.to_string()).unwrap_or_default());
        }
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

/// Builds a table from accuracy cells keyed by (row label, column).
pub fn table_from_cells(cells: &BTreeMap<(String, ColumnKey), f64>) -> ComparisonTable {
    let mut columns: Vec<ColumnKey> = cells.keys().map(|(_, c)| *c).collect();
    columns.sort();
    columns.dedup();
    let mut rows: Vec<&String> = cells.keys().map(|(r, _)| r).collect();
    rows.dedup();

    let caption = if columns.iter().all(|c| matches!(c, ColumnKey::Mode(_))) {
        "Evaluation on (Uni vs Bi) directional entailment"
    } else if columns.iter().all(|c| matches!(c, ColumnKey::Task(_))) {
        "Evaluation on individual tasks"
    } else {
        "Evaluation"
    };
    ComparisonTable {
        caption: caption.to_string(),
        columns: columns.iter().map(ToString::to_string).collect(),
        rows: rows
            .into_iter()
            .map(|r| TableRow {
                label: r.clone(),
                cells: columns
                    .iter()
                    .map(|c| cells.get(&(r.clone(), *c)).copied())
                    .collect(),
            })
            .collect(),
    }
}

/// One row per backend, one column per mode or task present in `reports`.
/// Cells take the overall accuracy of the matching report.
pub fn build_comparison(reports: &BTreeMap<(String, ColumnKey), EvalReport>) -> ComparisonTable {
    let cells = reports
        .iter()
        .map(|(k, r)| (k.clone(), r.accuracy()))
        .collect();
    table_from_cells(&cells)
}

/// Per-task accuracy of one report as a single-row table over DM, MT, PG.
pub fn per_task_table(row_label: &str, report: &EvalReport) -> ComparisonTable {
    let mut cells = BTreeMap::new();
    for task in TaskKind::ALL {
        if let Some(b) = report.per_task.get(&task) {
            cells.insert((row_label.to_string(), ColumnKey::Task(task)), b.accuracy);
        }
    }
    let mut table = table_from_cells(&cells);
    for task in TaskKind::ALL {
        if !table.columns.contains(&task.to_string()) {
            let at = TaskKind::ALL
                .iter()
                .filter(|t| **t < task && table.columns.contains(&t.to_string()))
                .count();
            table.columns.insert(at, task.to_string());
            for row in &mut table.rows {
                row.cells.insert(at, None);
            }
        }
    }
    table.caption = "Evaluation on individual tasks".to_string();
    table
}
