//! Plain-text renderings of library reports: aligned columns, one item per line.

use std::fmt::Write;

use fieldsync_core::geo::{Anomaly, CellCounts, CellIndex, Deficit, GridSpec};
use fieldsync_core::model::RecordId;
use fieldsync_core::sync::FreshnessState;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct StatusRow {
    pub id: RecordId,
    pub state: Option<FreshnessState>,
    pub color: char,
}

pub fn status(rows: &[StatusRow]) -> String {
    let w = rows
        .iter()
        .map(|r| r.id.to_string().len())
        .max()
        .unwrap_or(0)
        .max("ID".len());
    let mut out = format!("{:<w$}  {:<11}  COLOR\n", "ID", "STATE");
    for r in rows {
        let state = r.state.map_or("?", |s| s.as_str());
        writeln!(out, "{:<w$}  {:<11}  {}", r.id.to_string(), state, r.color).unwrap();
    }
    out
}

/// Counts matrix, north row first, so it reads like a map.
pub fn coverage(counts: &CellCounts, grid: &GridSpec) -> String {
    let widest = counts.counts.iter().flatten().max().copied().unwrap_or(0).to_string().len();
    let w = widest.max(format!("c{}", grid.cols.saturating_sub(1)).len());
    let rw = format!("r{}", grid.rows.saturating_sub(1)).len();
    let mut out = format!(
        "grid {}x{}, cell {} m, target {}\n",
        grid.rows, grid.cols, grid.cell_size_m, grid.target_per_cell
    );
    write!(out, "{:rw$}", "").unwrap();
    for c in 0..counts.cols {
        write!(out, " {:>w$}", format!("c{c}")).unwrap();
    }
    out.push('\n');
    for r in (0..counts.rows).rev() {
        write!(out, "{:<rw$}", format!("r{r}")).unwrap();
        for n in &counts.counts[r] {
            write!(out, " {n:>w$}").unwrap();
        }
        out.push('\n');
    }
    writeln!(out, "total {}", counts.total()).unwrap();
    writeln!(out, "out_of_bounds {}", counts.out_of_bounds).unwrap();
    out
}

pub fn missing(cells: &[CellIndex], total: usize) -> String {
    let mut out = String::from("ROW  COL\n");
    for c in cells {
        writeln!(out, "{:>3}  {:>3}", c.row, c.col).unwrap();
    }
    writeln!(out, "{} of {} cells empty", cells.len(), total).unwrap();
    out
}

pub fn under_sampled(deficits: &[Deficit]) -> String {
    let mut out = String::from("ROW  COL  DEFICIT\n");
    for d in deficits {
        writeln!(out, "{:>3}  {:>3}  {:>7}", d.cell.row, d.cell.col, d.deficit).unwrap();
    }
    out
}

pub fn anomalies(found: &[Anomaly]) -> String {
    let w = found
        .iter()
        .map(|a| a.id.to_string().len())
        .max()
        .unwrap_or(0)
        .max("ID".len());
    let mut out = format!("{:<w$}  ROBUST_Z\n", "ID");
    for a in found {
        writeln!(out, "{:<w$}  {:>8.3}", a.id.to_string(), a.robust_z).unwrap();
    }
    out
}
