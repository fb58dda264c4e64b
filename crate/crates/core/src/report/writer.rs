//! Deterministic file emission for report bundles. Floats are written with
//! Rust's shortest round-trip formatting; maps are ordered; nothing
//! time-dependent enters any file, so identical inputs give identical
//! bytes.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{AnalysisError, Error, Result};
use crate::grid::GridTable;

/// A rectangular text table written as CSV.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(
            &self
                .columns
                .iter()
                .map(|c| csv_field(c))
                .collect::<Vec<_>>()
                .join(","),
        );
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.iter().map(|f| csv_field(f)).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }

    /// Space-aligned text rendering.
    pub fn to_text(&self) -> String {
        let mut widths: Vec<usize> = self.columns.iter().map(|c| c.len()).collect();
        for row in &self.rows {
            for (i, field) in row.iter().enumerate() {
                widths[i] = widths[i].max(field.len());
            }
        }
        let mut out = String::new();
        let render = |fields: &[String], out: &mut String| {
            let line: Vec<String> = fields
                .iter()
                .enumerate()
                .map(|(i, f)| format!("{f:<width$}", width = widths[i]))
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        };
        render(&self.columns, &mut out);
        render(
            &widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>(),
            &mut out,
        );
        for row in &self.rows {
            render(row, &mut out);
        }
        out
    }

    /// JSON array of objects keyed by column name (all values as strings).
    pub fn to_json(&self) -> String {
        let rows: Vec<std::collections::BTreeMap<&str, &str>> = self
            .rows
            .iter()
            .map(|row| {
                self.columns
                    .iter()
                    .map(|c| c.as_str())
                    .zip(row.iter().map(|f| f.as_str()))
                    .collect()
            })
            .collect();
        let mut text = serde_json::to_string_pretty(&rows).expect("string map serializes");
        text.push('\n');
        text
    }
}

/// Shortest round-trip float formatting; infinities spelled out.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v}")
    }
}

fn csv_field(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

pub fn write_csv(dir: &Path, filename: &str, table: &Table) -> Result<String> {
    let path = dir.join(filename);
    fs::write(&path, table.to_csv()).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(filename.to_string())
}

pub fn write_json<T: Serialize>(dir: &Path, filename: &str, value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(filename, e))?;
    text.push('\n');
    let path = dir.join(filename);
    fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(filename.to_string())
}

/// A cell singled out in a heatmap: the per-grid best or a designated
/// anchor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatmapMark {
    pub row_label: String,
    pub col_label: String,
    /// Raw metric value at the cell.
    pub value: f64,
    /// Percent above the grid best (uncapped).
    pub pct_above_best: f64,
}

/// Percent-above-best matrix over a 2-D grid, ready for any plotting tool.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatmapData {
    pub metric: String,
    pub row_factor: String,
    pub col_factor: String,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    /// `100 * (v - best) / best`, capped at `cap_pct`; `null` for missing
    /// cells.
    pub matrix: Vec<Vec<Option<f64>>>,
    pub cap_pct: f64,
    pub best: HeatmapMark,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anchor: Option<HeatmapMark>,
}

impl HeatmapData {
    pub fn to_table(&self) -> Table {
        let mut columns = vec![format!("{}\\{}", self.row_factor, self.col_factor)];
        columns.extend(self.col_labels.iter().cloned());
        let mut table = Table {
            columns,
            rows: Vec::new(),
        };
        for (r, row_label) in self.row_labels.iter().enumerate() {
            let mut row = vec![row_label.clone()];
            for c in 0..self.col_labels.len() {
                row.push(match self.matrix[r][c] {
                    Some(v) => num(v),
                    None => String::new(),
                });
            }
            table.push(row);
        }
        table
    }
}

/// Builds the percent-above-best matrix for a 2-D grid, capping displayed
/// values at `cap_pct` and annotating the best cell plus an optional anchor
/// cell (given by level labels).
pub fn heatmap_data(
    grid: &GridTable,
    cap_pct: f64,
    anchor: Option<(&str, &str)>,
) -> Result<HeatmapData, AnalysisError> {
    if grid.factors().len() != 2 {
        return Err(AnalysisError::NotTwoDimensional {
            dims: grid.factors().len(),
        });
    }
    let best_value = grid.min_value().ok_or(AnalysisError::EmptySelection)?;
    if best_value <= 0.0 {
        return Err(AnalysisError::Other(format!(
            "percent-above-best needs a positive best value, got {best_value}"
        )));
    }
    let pct = |v: f64| 100.0 * (v - best_value) / best_value;

    let rows = grid.factors()[0].levels.len();
    let cols = grid.factors()[1].levels.len();
    let mut matrix = vec![vec![None; cols]; rows];
    let mut best_idx = None;
    for (idx, v) in grid.cells() {
        matrix[idx[0]][idx[1]] = Some(pct(v).min(cap_pct));
        if v == best_value && best_idx.is_none() {
            best_idx = Some((idx[0], idx[1]));
        }
    }
    let (br, bc) = best_idx.expect("best cell exists");
    let best = HeatmapMark {
        row_label: grid.factors()[0].levels[br].clone(),
        col_label: grid.factors()[1].levels[bc].clone(),
        value: best_value,
        pct_above_best: 0.0,
    };

    let anchor = match anchor {
        None => None,
        Some((row_label, col_label)) => {
            let r = grid.factors()[0]
                .levels
                .iter()
                .position(|l| l == row_label)
                .ok_or_else(|| AnalysisError::Other(format!(
                    "anchor row {row_label:?} is not a level of {}",
                    grid.factors()[0].name
                )))?;
            let c = grid.factors()[1]
                .levels
                .iter()
                .position(|l| l == col_label)
                .ok_or_else(|| AnalysisError::Other(format!(
                    "anchor column {col_label:?} is not a level of {}",
                    grid.factors()[1].name
                )))?;
            let value = grid
                .value(&[r, c])
                .ok_or(AnalysisError::AnchorMissing { anchor: vec![r, c] })?;
            Some(HeatmapMark {
                row_label: row_label.to_string(),
                col_label: col_label.to_string(),
                value,
                pct_above_best: pct(value),
            })
        }
    };

    Ok(HeatmapData {
        metric: grid.metric_name().to_string(),
        row_factor: grid.factors()[0].name.clone(),
        col_factor: grid.factors()[1].name.clone(),
        row_labels: grid.factors()[0].levels.clone(),
        col_labels: grid.factors()[1].levels.clone(),
        matrix,
        cap_pct,
        best,
        anchor,
    })
}
