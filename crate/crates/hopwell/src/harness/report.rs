//! Report rendering: machine-readable JSON, an aligned text table in the
//! tuning-table column order, and CSV.

use std::path::{Path, PathBuf};

use super::{write_atomic, ExperimentReport, PipelineError};

const COLUMNS: [&str; 8] = [
    "# Wells",
    "Epochs",
    "Filters",
    "lambda",
    "beta",
    "Accuracy",
    "Min distance",
    "Mean Distance",
];

fn row_cells(report: &ExperimentReport) -> [String; 8] {
    [
        report.num_wells.to_string(),
        report.config.epochs.to_string(),
        report.config.arch.to_string(),
        format_param(report.config.lambda),
        format_param(report.config.beta),
        format!("{:.2}%", report.test_accuracy * 100.0),
        format!("{:.4}", report.well_min_distance),
        format!("{:.4}", report.well_mean_distance),
    ]
}

fn format_param(v: f64) -> String {
    // trims trailing zeros so 0.0100 prints as 0.01
    let s = format!("{v}");
    if s.len() <= 8 {
        s
    } else {
        format!("{v:.6}")
    }
}

/// Rows sorted by (#wells, epochs), matching the tuning-table presentation
/// (stable within ties).
fn sorted(reports: &[ExperimentReport]) -> Vec<&ExperimentReport> {
    let mut rows: Vec<&ExperimentReport> = reports.iter().collect();
    rows.sort_by_key(|r| (r.num_wells, r.config.epochs));
    rows
}

/// Renders an aligned text table of one or more reports.
pub fn render_table(reports: &[ExperimentReport]) -> String {
    let rows: Vec<[String; 8]> = sorted(reports).into_iter().map(row_cells).collect();
    let mut widths: Vec<usize> = COLUMNS.iter().map(|c| c.chars().count()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row.iter()) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |cells: &[String], widths: &[usize], out: &mut String| {
        let padded: Vec<String> = cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{:>width$}", c, width = w))
            .collect();
        out.push_str(&padded.join(" | "));
        out.push('\n');
    };
    let header: Vec<String> = COLUMNS.iter().map(|s| s.to_string()).collect();
    line(&header, &widths, &mut out);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&rule.join("-+-"));
    out.push('\n');
    for row in &rows {
        line(row, &widths, &mut out);
    }
    out
}

fn render_csv(reports: &[ExperimentReport]) -> String {
    let mut out = String::new();
    out.push_str(&COLUMNS.join(","));
    out.push('\n');
    for row in sorted(reports).into_iter().map(row_cells) {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub struct EmittedPaths {
    pub json: PathBuf,
    pub table: PathBuf,
    pub csv: PathBuf,
}

/// Writes `<basename>.json` (full reports), `<basename>.txt` (aligned
/// table) and `<basename>.csv` under `out_dir`.
pub fn emit_report(
    reports: &[ExperimentReport],
    out_dir: &Path,
    basename: &str,
) -> Result<EmittedPaths, PipelineError> {
    if reports.is_empty() {
        return Err(PipelineError::Config("no reports to emit".into()));
    }
    let json = out_dir.join(format!("{basename}.json"));
    let table = out_dir.join(format!("{basename}.txt"));
    let csv = out_dir.join(format!("{basename}.csv"));
    write_atomic(&json, serde_json::to_string_pretty(reports)?.as_bytes())?;
    write_atomic(&table, render_table(reports).as_bytes())?;
    write_atomic(&csv, render_csv(reports).as_bytes())?;
    Ok(EmittedPaths { json, table, csv })
}
