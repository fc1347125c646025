//! Stratified-sampling grid analytics: projection, binning, coverage gaps,
//! per-cell history and robust outlier flags.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{FieldKind, Record, RecordId, Schema};

/// Meters per degree of latitude in the local equirectangular frame.
pub const METERS_PER_DEGREE: f64 = 111_320.0;
/// Largest grid side the local planar projection is trusted for.
pub const MAX_EXTENT_M: f64 = 20_000.0;
/// Scales MAD to a standard deviation under normality.
pub const MAD_CONSISTENCY: f64 = 1.4826;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("UnknownField {0}")]
    UnknownField(String),
    #[error("NonNumericField {0}")]
    NonNumericField(String),
    #[error("invalid anomaly parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Southwest corner.
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub cell_size_m: f64,
    pub rows: usize,
    pub cols: usize,
    /// Per-cell sampling quota.
    pub target_per_cell: u32,
}

impl GridSpec {
    pub fn check(&self) -> Result<(), GeoError> {
        let bad = |m: &str| Err(GeoError::InvalidGrid(m.to_string()));
        if !(self.origin_lat.abs() < 90.0) || !(self.origin_lon.abs() <= 180.0) {
            return bad("origin outside valid coordinates");
        }
        if !(self.cell_size_m > 0.0) || !self.cell_size_m.is_finite() {
            return bad("cell_size_m must be > 0");
        }
        if self.rows == 0 || self.cols == 0 {
            return bad("rows and cols must be >= 1");
        }
        if self.target_per_cell == 0 {
            return bad("target_per_cell must be >= 1");
        }
        if self.cell_size_m * self.rows as f64 > MAX_EXTENT_M
            || self.cell_size_m * self.cols as f64 > MAX_EXTENT_M
        {
            return bad("grid extent exceeds 20 km per side");
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.rows * self.cols
    }

    /// All cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = CellIndex> + '_ {
        (0..self.rows).flat_map(move |row| (0..self.cols).map(move |col| CellIndex { row, col }))
    }

    /// Inverse of [`local_project`].
    pub fn unproject(&self, x_m: f64, y_m: f64) -> (f64, f64) {
        let lat = self.origin_lat + y_m / METERS_PER_DEGREE;
        let lon = self.origin_lon + x_m / (METERS_PER_DEGREE * self.origin_lat.to_radians().cos());
        (lat, lon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellIndex {
    pub row: usize,
    pub col: usize,
}

impl CellIndex {
    pub fn new(row: usize, col: usize) -> Self {
        CellIndex { row, col }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellLookup {
    Cell(CellIndex),
    OutOfBounds,
}

/// Equirectangular projection to meters east (x) and north (y) of the grid origin.
pub fn local_project(lat: f64, lon: f64, grid: &GridSpec) -> (f64, f64) {
    let x = (lon - grid.origin_lon) * METERS_PER_DEGREE * grid.origin_lat.to_radians().cos();
    let y = (lat - grid.origin_lat) * METERS_PER_DEGREE;
    (x, y)
}

/// Cell containing a planar point; cells are half-open on their max edges.
pub fn cell_of_point(x: f64, y: f64, grid: &GridSpec) -> CellLookup {
    let row = (y / grid.cell_size_m).floor();
    let col = (x / grid.cell_size_m).floor();
    if row >= 0.0 && col >= 0.0 && row < grid.rows as f64 && col < grid.cols as f64 {
        CellLookup::Cell(CellIndex::new(row as usize, col as usize))
    } else {
        CellLookup::OutOfBounds
    }
}

pub fn cell_of(record: &Record, grid: &GridSpec) -> CellLookup {
    let (x, y) = local_project(record.lat, record.lon, grid);
    cell_of_point(x, y, grid)
}

/// Per-cell occupancy; `counts[row][col]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCounts {
    pub rows: usize,
    pub cols: usize,
    pub counts: Vec<Vec<u64>>,
    pub out_of_bounds: u64,
}

impl CellCounts {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CellCounts {
            rows,
            cols,
            counts: vec![vec![0; cols]; rows],
            out_of_bounds: 0,
        }
    }

    pub fn get(&self, cell: CellIndex) -> u64 {
        self.counts[cell.row][cell.col]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum::<u64>() + self.out_of_bounds
    }

    fn cells(&self) -> impl Iterator<Item = (CellIndex, u64)> + '_ {
        self.counts.iter().enumerate().flat_map(|(row, line)| {
            line.iter()
                .enumerate()
                .map(move |(col, n)| (CellIndex::new(row, col), *n))
        })
    }
}

pub fn coverage<'a>(records: impl IntoIterator<Item = &'a Record>, grid: &GridSpec) -> CellCounts {
    let mut counts = CellCounts::zeros(grid.rows, grid.cols);
    for r in records {
        match cell_of(r, grid) {
            CellLookup::Cell(c) => counts.counts[c.row][c.col] += 1,
            CellLookup::OutOfBounds => counts.out_of_bounds += 1,
        }
    }
    counts
}

/// Cells with no records, row-major.
pub fn missing_cells(counts: &CellCounts) -> Vec<CellIndex> {
    counts.cells().filter(|(_, n)| *n == 0).map(|(c, _)| c).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deficit {
    pub cell: CellIndex,
    pub deficit: u64,
}

/// Cells below the sampling quota and how many records each still needs, row-major.
pub fn under_sampled_cells(counts: &CellCounts, grid: &GridSpec) -> Vec<Deficit> {
    let target = u64::from(grid.target_per_cell);
    counts
        .cells()
        .filter(|(_, n)| *n < target)
        .map(|(cell, n)| Deficit {
            cell,
            deficit: target - n,
        })
        .collect()
}

/// Newest-first stack of the records in one cell. Ties on timestamp go to the smaller id.
pub fn cell_history<'a>(
    records: impl IntoIterator<Item = &'a Record>,
    cell: CellIndex,
    grid: &GridSpec,
) -> Vec<&'a Record> {
    let mut hits: Vec<&Record> = records
        .into_iter()
        .filter(|r| cell_of(r, grid) == CellLookup::Cell(cell))
        .collect();
    hits.sort_by(|a, b| b.ts.cmp(&a.ts).then_with(|| a.id.cmp(&b.id)));
    hits
}

/// Normalized heat per cell: count over the maximum count.
pub fn heatmap_bins(counts: &CellCounts) -> Vec<Vec<f64>> {
    let max = counts.counts.iter().flatten().copied().max().unwrap_or(0);
    counts
        .counts
        .iter()
        .map(|line| {
            line.iter()
                .map(|&n| if max == 0 { 0.0 } else { n as f64 / max as f64 })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyParams {
    pub field: String,
    pub z_threshold: f64,
}

impl AnomalyParams {
    pub fn new(field: impl Into<String>) -> Self {
        AnomalyParams {
            field: field.into(),
            z_threshold: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anomaly {
    pub id: RecordId,
    pub robust_z: f64,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

/// Robust z of `value` against a sample: |v - median| / (1.4826 * MAD).
///
/// A zero MAD falls back to the mean absolute deviation around the median;
/// `None` when both are zero.
pub fn robust_z(value: f64, sample: &[f64]) -> Option<f64> {
    let mut work = sample.to_vec();
    let med = median(&mut work)?;
    let mut dev: Vec<f64> = sample.iter().map(|v| (v - med).abs()).collect();
    let mut spread = median(&mut dev)?;
    if spread == 0.0 {
        spread = dev.iter().sum::<f64>() / dev.len() as f64;
    }
    if spread == 0.0 {
        return None;
    }
    Some((value - med).abs() / (MAD_CONSISTENCY * spread))
}

/// Flags records whose field value is a robust outlier among the records in
/// their cell and its eight neighbors. Output follows input order.
pub fn detect_anomalies<'a>(
    records: impl IntoIterator<Item = &'a Record>,
    grid: &GridSpec,
    schema: &Schema,
    params: &AnomalyParams,
) -> Result<Vec<Anomaly>, GeoError> {
    let spec = schema
        .field(&params.field)
        .ok_or_else(|| GeoError::UnknownField(params.field.clone()))?;
    if spec.kind != FieldKind::Numeric {
        return Err(GeoError::NonNumericField(params.field.clone()));
    }
    if !(params.z_threshold > 0.0) {
        return Err(GeoError::InvalidParams("z_threshold must be > 0".into()));
    }

    let mut placed: Vec<(&Record, CellIndex, f64)> = Vec::new();
    let mut by_cell: HashMap<CellIndex, Vec<f64>> = HashMap::new();
    for r in records {
        let Some(v) = r.value(&params.field).and_then(|v| v.as_number()) else {
            continue;
        };
        if let CellLookup::Cell(c) = cell_of(r, grid) {
            placed.push((r, c, v));
            by_cell.entry(c).or_default().push(v);
        }
    }

    let mut flagged = Vec::new();
    let mut sample = Vec::new();
    for (r, cell, v) in placed {
        sample.clear();
        for row in cell.row.saturating_sub(1)..=(cell.row + 1).min(grid.rows - 1) {
            for col in cell.col.saturating_sub(1)..=(cell.col + 1).min(grid.cols - 1) {
                if let Some(vals) = by_cell.get(&CellIndex::new(row, col)) {
                    sample.extend_from_slice(vals);
                }
            }
        }
        if let Some(z) = robust_z(v, &sample) {
            if z > params.z_threshold {
                flagged.push(Anomaly {
                    id: r.id.clone(),
                    robust_z: z,
                });
            }
        }
    }
    Ok(flagged)
}
