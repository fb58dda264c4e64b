//! Dense or partial factor grids: the substrate for every variance
//! decomposition and re-centering view.
//!
//! A [`GridTable`] maps level-index tuples to one observation each. Grids
//! may be partial (missing cells are simply absent), but never hold two
//! values for one cell.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{AnalysisError, ValidationError};

/// One factor: a name and its ordered level labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factor {
    pub name: String,
    pub levels: Vec<String>,
}

impl Factor {
    pub fn new(name: impl Into<String>, levels: Vec<String>) -> Self {
        Factor {
            name: name.into(),
            levels,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CellEntry {
    idx: Vec<usize>,
    value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawGridTable {
    metric_name: String,
    factors: Vec<Factor>,
    cells: Vec<CellEntry>,
}

/// A factor grid holding at most one value per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGridTable", into = "RawGridTable")]
pub struct GridTable {
    factors: Vec<Factor>,
    cells: BTreeMap<Vec<usize>, f64>,
    metric_name: String,
}

impl TryFrom<RawGridTable> for GridTable {
    type Error = ValidationError;
    fn try_from(raw: RawGridTable) -> Result<Self, Self::Error> {
        let mut grid = GridTable::new(raw.metric_name, raw.factors)?;
        for cell in raw.cells {
            grid.insert(cell.idx, cell.value)?;
        }
        Ok(grid)
    }
}

impl From<GridTable> for RawGridTable {
    fn from(g: GridTable) -> Self {
        RawGridTable {
            metric_name: g.metric_name,
            factors: g.factors,
            cells: g
                .cells
                .into_iter()
                .map(|(idx, value)| CellEntry { idx, value })
                .collect(),
        }
    }
}

impl GridTable {
    /// Creates an empty grid over the given factors.
    pub fn new(metric_name: impl Into<String>, factors: Vec<Factor>) -> Result<Self, ValidationError> {
        let metric_name = metric_name.into();
        if factors.is_empty() {
            return Err(ValidationError::field("factors", "must be non-empty"));
        }
        for factor in &factors {
            if factor.name.is_empty() {
                return Err(ValidationError::field("factors", "factor name must be non-empty"));
            }
            if factor.levels.is_empty() {
                return Err(ValidationError::field(
                    "factors",
                    format!("factor {:?} has no levels", factor.name),
                ));
            }
            let mut seen = std::collections::BTreeSet::new();
            for level in &factor.levels {
                if !seen.insert(level) {
                    return Err(ValidationError::field(
                        "factors",
                        format!("factor {:?} repeats level {level:?}", factor.name),
                    ));
                }
            }
        }
        let mut names = std::collections::BTreeSet::new();
        for factor in &factors {
            if !names.insert(&factor.name) {
                return Err(ValidationError::field(
                    "factors",
                    format!("duplicate factor name {:?}", factor.name),
                ));
            }
        }
        Ok(GridTable {
            factors,
            cells: BTreeMap::new(),
            metric_name,
        })
    }

    /// Inserts one observation. Rejects out-of-range indices and duplicate
    /// cells.
    pub fn insert(&mut self, idx: Vec<usize>, value: f64) -> Result<(), ValidationError> {
        if idx.len() != self.factors.len() {
            return Err(ValidationError::field(
                "cells",
                format!(
                    "cell index has {} coordinates, grid has {} factors",
                    idx.len(),
                    self.factors.len()
                ),
            ));
        }
        for (coord, factor) in idx.iter().zip(&self.factors) {
            if *coord >= factor.levels.len() {
                return Err(ValidationError::field(
                    "cells",
                    format!(
                        "index {coord} out of range for factor {:?} ({} levels)",
                        factor.name,
                        factor.levels.len()
                    ),
                ));
            }
        }
        if !value.is_finite() {
            return Err(ValidationError::field("cells", format!("non-finite value {value}")));
        }
        if self.cells.contains_key(&idx) {
            return Err(ValidationError::field(
                "cells",
                format!("duplicate cell {idx:?}"),
            ));
        }
        self.cells.insert(idx, value);
        Ok(())
    }

    pub fn metric_name(&self) -> &str {
        &self.metric_name
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn factor_index(&self, name: &str) -> Result<usize, AnalysisError> {
        self.factors
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| AnalysisError::UnknownFactor {
                name: name.to_string(),
            })
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> impl Iterator<Item = (&Vec<usize>, f64)> {
        self.cells.iter().map(|(idx, v)| (idx, *v))
    }

    pub fn value(&self, idx: &[usize]) -> Option<f64> {
        self.cells.get(idx).copied()
    }

    /// Human-readable labels for a cell index.
    pub fn cell_labels(&self, idx: &[usize]) -> Vec<String> {
        idx.iter()
            .zip(&self.factors)
            .map(|(&i, f)| f.levels[i].clone())
            .collect()
    }

    /// True when every level combination holds exactly one observation.
    pub fn is_balanced(&self) -> bool {
        let full: usize = self.factors.iter().map(|f| f.levels.len()).product();
        self.cells.len() == full
    }

    /// Mean of all populated cells.
    pub fn grand_mean(&self) -> Option<f64> {
        if self.cells.is_empty() {
            return None;
        }
        Some(self.cells.values().sum::<f64>() / self.cells.len() as f64)
    }

    /// Smallest populated cell value.
    pub fn min_value(&self) -> Option<f64> {
        self.cells.values().copied().fold(None, |acc, v| {
            Some(acc.map_or(v, |m: f64| m.min(v)))
        })
    }

    /// Per-level mean over all populated cells at each level of `axis`.
    /// Levels with no data are omitted.
    pub fn marginal_means(&self, axis: usize) -> BTreeMap<usize, f64> {
        let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for (idx, value) in self.cells() {
            let entry = sums.entry(idx[axis]).or_insert((0.0, 0));
            entry.0 += value;
            entry.1 += 1;
        }
        sums.into_iter()
            .map(|(level, (sum, n))| (level, sum / n as f64))
            .collect()
    }

    /// Index tuples over every axis except `axis`, each mapped to the mean
    /// of its populated cells along `axis`.
    pub fn means_over_axis(&self, axis: usize) -> BTreeMap<Vec<usize>, f64> {
        let mut sums: BTreeMap<Vec<usize>, (f64, usize)> = BTreeMap::new();
        for (idx, value) in self.cells() {
            let key: Vec<usize> = idx
                .iter()
                .enumerate()
                .filter(|(a, _)| *a != axis)
                .map(|(_, &i)| i)
                .collect();
            let entry = sums.entry(key).or_insert((0.0, 0));
            entry.0 += value;
            entry.1 += 1;
        }
        sums.into_iter()
            .map(|(key, (sum, n))| (key, sum / n as f64))
            .collect()
    }

    /// Per-cell minimum along `axis` instead of the mean; same keying as
    /// [`means_over_axis`](Self::means_over_axis).
    pub fn min_over_axis(&self, axis: usize) -> BTreeMap<Vec<usize>, f64> {
        let mut mins: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        for (idx, value) in self.cells() {
            let key: Vec<usize> = idx
                .iter()
                .enumerate()
                .filter(|(a, _)| *a != axis)
                .map(|(_, &i)| i)
                .collect();
            mins.entry(key)
                .and_modify(|m| *m = m.min(value))
                .or_insert(value);
        }
        mins
    }

    /// Keeps only cells whose projection onto the non-`axis` coordinates is
    /// in `kept`, then prunes levels that lost all their cells. The `axis`
    /// factor is retained in full on kept cells.
    pub fn retain_cells_over_axis(
        &self,
        axis: usize,
        kept: &std::collections::BTreeSet<Vec<usize>>,
    ) -> Result<GridTable, ValidationError> {
        let retained: Vec<(Vec<usize>, f64)> = self
            .cells()
            .filter(|(idx, _)| {
                let key: Vec<usize> = idx
                    .iter()
                    .enumerate()
                    .filter(|(a, _)| *a != axis)
                    .map(|(_, &i)| i)
                    .collect();
                kept.contains(&key)
            })
            .map(|(idx, v)| (idx.clone(), v))
            .collect();
        self.rebuild_from(retained)
    }

    /// Rebuilds a grid from a subset of this grid's cells, dropping unused
    /// levels and reindexing.
    pub fn rebuild_from(&self, cells: Vec<(Vec<usize>, f64)>) -> Result<GridTable, ValidationError> {
        let mut used: Vec<std::collections::BTreeSet<usize>> =
            vec![std::collections::BTreeSet::new(); self.factors.len()];
        for (idx, _) in &cells {
            for (a, &i) in idx.iter().enumerate() {
                used[a].insert(i);
            }
        }
        let mut remap: Vec<BTreeMap<usize, usize>> = Vec::with_capacity(self.factors.len());
        let mut factors = Vec::with_capacity(self.factors.len());
        for (a, factor) in self.factors.iter().enumerate() {
            let kept: Vec<usize> = used[a].iter().copied().collect();
            let levels: Vec<String> = kept.iter().map(|&i| factor.levels[i].clone()).collect();
            remap.push(kept.iter().enumerate().map(|(new, &old)| (old, new)).collect());
            factors.push(Factor::new(factor.name.clone(), levels));
        }
        let mut grid = GridTable::new(self.metric_name.clone(), factors)?;
        for (idx, value) in cells {
            let new_idx: Vec<usize> = idx.iter().enumerate().map(|(a, i)| remap[a][i]).collect();
            grid.insert(new_idx, value)?;
        }
        Ok(grid)
    }

    /// Drops `axis`, replacing each surviving cell with the mean or
    /// minimum of its populated values along that axis.
    pub fn collapse_axis(&self, axis: usize, take_min: bool) -> Result<GridTable, ValidationError> {
        assert!(axis < self.factors.len(), "axis out of range");
        let reduced = if take_min {
            self.min_over_axis(axis)
        } else {
            self.means_over_axis(axis)
        };
        let factors: Vec<Factor> = self
            .factors
            .iter()
            .enumerate()
            .filter(|(a, _)| *a != axis)
            .map(|(_, f)| f.clone())
            .collect();
        let mut grid = GridTable::new(self.metric_name.clone(), factors)?;
        for (idx, value) in reduced {
            grid.insert(idx, value)?;
        }
        Ok(grid)
    }

    /// Collapses the named axes into one composite factor whose levels are
    /// the cartesian combinations of the constituent levels (labels joined
    /// with `/`). The composite takes the position of the first collapsed
    /// axis.
    pub fn combine_axes(&self, axes: &[usize], name: &str) -> Result<GridTable, ValidationError> {
        assert!(!axes.is_empty(), "combine_axes needs at least one axis");
        let mut sorted = axes.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), axes.len(), "combine_axes axes must be distinct");

        // Cartesian product of the collapsed axes' levels, in row-major
        // order of the axes as given.
        let level_counts: Vec<usize> = axes.iter().map(|&a| self.factors[a].levels.len()).collect();
        let total: usize = level_counts.iter().product();
        let mut combo_labels = Vec::with_capacity(total);
        for mut flat in 0..total {
            let mut parts = vec![String::new(); axes.len()];
            for k in (0..axes.len()).rev() {
                let i = flat % level_counts[k];
                flat /= level_counts[k];
                parts[k] = self.factors[axes[k]].levels[i].clone();
            }
            combo_labels.push(parts.join("/"));
        }

        let first = *axes.iter().min().unwrap();
        let mut factors = Vec::new();
        for (a, factor) in self.factors.iter().enumerate() {
            if a == first {
                factors.push(Factor::new(name, combo_labels.clone()));
            } else if !axes.contains(&a) {
                factors.push(factor.clone());
            }
        }

        let mut grid = GridTable::new(self.metric_name.clone(), factors)?;
        for (idx, value) in self.cells() {
            let mut flat = 0usize;
            for (k, &a) in axes.iter().enumerate() {
                flat = flat * level_counts[k] + idx[a];
            }
            let mut new_idx = Vec::with_capacity(grid.factors.len());
            for (a, &i) in idx.iter().enumerate() {
                if a == first {
                    new_idx.push(flat);
                } else if !axes.contains(&a) {
                    new_idx.push(i);
                }
            }
            grid.insert(new_idx, value)?;
        }
        Ok(grid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two(values: [[f64; 2]; 2]) -> GridTable {
        let mut grid = GridTable::new(
            "loss",
            vec![
                Factor::new("row", vec!["r0".into(), "r1".into()]),
                Factor::new("col", vec!["c0".into(), "c1".into()]),
            ],
        )
        .unwrap();
        for (r, row) in values.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                grid.insert(vec![r, c], *v).unwrap();
            }
        }
        grid
    }

    #[test]
    fn rejects_duplicate_cell() {
        let mut grid = two_by_two([[0.0, 1.0], [2.0, 3.0]]);
        let err = grid.insert(vec![0, 0], 9.0).unwrap_err();
        assert!(err.to_string().contains("duplicate cell"));
    }

    #[test]
    fn rejects_out_of_range_index() {
        let mut grid = two_by_two([[0.0, 1.0], [2.0, 3.0]]);
        let err = grid.insert(vec![2, 0], 9.0).unwrap_err();
        assert!(err.to_string().contains("out of range"));
    }

    #[test]
    fn balance_detection() {
        let grid = two_by_two([[0.0, 1.0], [2.0, 3.0]]);
        assert!(grid.is_balanced());
        let partial = grid
            .rebuild_from(grid.cells().take(3).map(|(i, v)| (i.clone(), v)).collect())
            .unwrap();
        assert!(!partial.is_balanced());
    }

    #[test]
    fn combine_axes_flattens_levels_row_major() {
        let mut grid = GridTable::new(
            "loss",
            vec![
                Factor::new("rmax", vec!["1".into(), "2".into()]),
                Factor::new("lambda", vec!["0.1".into(), "1.0".into()]),
                Factor::new("eta", vec!["0.001".into(), "0.01".into()]),
            ],
        )
        .unwrap();
        for r in 0..2 {
            for l in 0..2 {
                for e in 0..2 {
                    grid.insert(vec![r, l, e], (r * 4 + l * 2 + e) as f64).unwrap();
                }
            }
        }
        let combined = grid.combine_axes(&[1, 2], "hp").unwrap();
        assert_eq!(combined.factors().len(), 2);
        assert_eq!(combined.factors()[1].name, "hp");
        assert_eq!(
            combined.factors()[1].levels,
            vec!["0.1/0.001", "0.1/0.01", "1.0/0.001", "1.0/0.01"]
        );
        assert_eq!(combined.value(&[1, 2]), Some(6.0)); // rmax=2, lambda=1.0, eta=0.001
    }

    #[test]
    fn grid_round_trips_through_json() {
        let grid = two_by_two([[0.5, 1.5], [2.5, 3.5]]);
        let json = serde_json::to_string(&grid).unwrap();
        let back: GridTable = serde_json::from_str(&json).unwrap();
        assert_eq!(grid, back);
    }
}
