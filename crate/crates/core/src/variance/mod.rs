//! Variance decomposition over factor grids: classical two- and three-way
//! ANOVA on (near-)balanced designs, regression-based Type III sums of
//! squares for filtered or otherwise unbalanced grids, re-centering views,
//! and IQR outlier flagging.
//!
//! Each cell holds one observation, so a decomposition's residual confounds
//! the true interaction with noise; it is reported as a single term and
//! never split.

mod type3;

pub use type3::{anova_type3, ModelTerm};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::AnalysisError;
use crate::grid::GridTable;
use crate::model::{DecompositionMethod, VarianceDecomposition, VarianceTerm};

/// Relative floor below which a total sum of squares counts as zero.
const DEGENERATE_REL: f64 = 1e-20;

fn is_degenerate(ss_total: f64, sum_sq: f64) -> bool {
    ss_total <= DEGENERATE_REL * sum_sq.max(1.0)
}

fn finish_classical(
    mut terms: Vec<VarianceTerm>,
    ss_total: f64,
    sum_sq: f64,
    n_cells: usize,
    note: Option<String>,
) -> VarianceDecomposition {
    let degenerate = is_degenerate(ss_total, sum_sq);
    for term in &mut terms {
        term.fraction = if degenerate { 0.0 } else { term.sum_of_squares / ss_total };
    }
    VarianceDecomposition {
        terms,
        ss_total,
        method: DecompositionMethod::ClassicalBalanced,
        n_cells,
        degenerate,
        note,
    }
}

/// Classical two-way decomposition with the weighted marginal formula
/// `SS_row = sum_r n_r (mean_r - mean)^2`; the residual is defined by
/// subtraction and absorbs interaction plus noise. Missing cells are
/// tolerated; on unbalanced grids the subtraction residual can go negative,
/// which is reported via `note` rather than clamped.
pub fn anova_two_way(
    grid: &GridTable,
    row_factor: &str,
    col_factor: &str,
) -> Result<VarianceDecomposition, AnalysisError> {
    if grid.factors().len() != 2 {
        return Err(AnalysisError::Other(format!(
            "two-way decomposition needs a 2-factor grid, got {} factors (reduce or combine first)",
            grid.factors().len()
        )));
    }
    let row = grid.factor_index(row_factor)?;
    let col = grid.factor_index(col_factor)?;
    if row == col {
        return Err(AnalysisError::Other("row and column factors must differ".into()));
    }
    if grid.n_cells() < 2 {
        return Err(AnalysisError::TooFewCells);
    }

    let grand = grid.grand_mean().expect("non-empty");
    let ss_total: f64 = grid.cells().map(|(_, v)| (v - grand).powi(2)).sum();
    let sum_sq: f64 = grid.cells().map(|(_, v)| v * v).sum();

    let ss_axis = |axis: usize| -> f64 {
        let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for (idx, v) in grid.cells() {
            let e = sums.entry(idx[axis]).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
        sums.values()
            .map(|(sum, n)| {
                let mean = sum / *n as f64;
                *n as f64 * (mean - grand).powi(2)
            })
            .sum()
    };

    let ss_row = ss_axis(row);
    let ss_col = ss_axis(col);
    let ss_resid = ss_total - ss_row - ss_col;
    let note = if ss_resid < -1e-9 * ss_total.max(1.0) {
        Some(
            "negative residual: the weighted marginal partition is not exact on this partial grid; \
             prefer type3"
                .to_string(),
        )
    } else {
        None
    };

    let terms = vec![
        VarianceTerm {
            name: row_factor.to_string(),
            sum_of_squares: ss_row,
            fraction: 0.0,
        },
        VarianceTerm {
            name: col_factor.to_string(),
            sum_of_squares: ss_col,
            fraction: 0.0,
        },
        VarianceTerm {
            name: "residual".to_string(),
            sum_of_squares: ss_resid,
            fraction: 0.0,
        },
    ];
    Ok(finish_classical(terms, ss_total, sum_sq, grid.n_cells(), note))
}

/// Classical three-way decomposition on a balanced grid: three main effects
/// from marginal means, optionally all pairwise interactions from two-way
/// marginal means, residual by subtraction. Unbalanced input is rejected;
/// use [`anova_type3`] there.
pub fn anova_three_way(
    grid: &GridTable,
    factors: [&str; 3],
    include_pairwise: bool,
) -> Result<VarianceDecomposition, AnalysisError> {
    if grid.factors().len() != 3 {
        return Err(AnalysisError::Other(format!(
            "three-way decomposition needs a 3-factor grid, got {}",
            grid.factors().len()
        )));
    }
    let axes = [
        grid.factor_index(factors[0])?,
        grid.factor_index(factors[1])?,
        grid.factor_index(factors[2])?,
    ];
    if axes[0] == axes[1] || axes[0] == axes[2] || axes[1] == axes[2] {
        return Err(AnalysisError::Other("three-way factors must be distinct".into()));
    }
    if grid.n_cells() < 2 {
        return Err(AnalysisError::TooFewCells);
    }
    if !grid.is_balanced() {
        return Err(AnalysisError::Unbalanced);
    }

    let grand = grid.grand_mean().expect("non-empty");
    let ss_total: f64 = grid.cells().map(|(_, v)| (v - grand).powi(2)).sum();
    let sum_sq: f64 = grid.cells().map(|(_, v)| v * v).sum();

    // Marginal means per level along one axis, and per level-pair along two.
    let mean_1 = |axis: usize| -> BTreeMap<usize, f64> { grid.marginal_means(axis) };
    let mean_2 = |a: usize, b: usize| -> BTreeMap<(usize, usize), f64> {
        let mut sums: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
        for (idx, v) in grid.cells() {
            let e = sums.entry((idx[a], idx[b])).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
        sums.into_iter()
            .map(|(k, (s, n))| (k, s / n as f64))
            .collect()
    };

    let n_total = grid.n_cells() as f64;
    let level_count = |axis: usize| grid.factors()[axis].levels.len() as f64;

    let mut terms = Vec::new();
    let margins: Vec<BTreeMap<usize, f64>> = axes.iter().map(|&a| mean_1(a)).collect();
    for (k, &axis) in axes.iter().enumerate() {
        let per_level = n_total / level_count(axis);
        let ss: f64 = margins[k]
            .values()
            .map(|m| per_level * (m - grand).powi(2))
            .sum();
        terms.push(VarianceTerm {
            name: factors[k].to_string(),
            sum_of_squares: ss,
            fraction: 0.0,
        });
    }

    if include_pairwise {
        for (i, j) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let pair_means = mean_2(axes[i], axes[j]);
            let per_pair = n_total / (level_count(axes[i]) * level_count(axes[j]));
            let ss: f64 = pair_means
                .iter()
                .map(|(&(li, lj), m)| {
                    let dev = m - margins[i][&li] - margins[j][&lj] + grand;
                    per_pair * dev * dev
                })
                .sum();
            terms.push(VarianceTerm {
                name: format!("{}*{}", factors[i], factors[j]),
                sum_of_squares: ss,
                fraction: 0.0,
            });
        }
    }

    let explained: f64 = terms.iter().map(|t| t.sum_of_squares).sum();
    terms.push(VarianceTerm {
        name: "residual".to_string(),
        sum_of_squares: ss_total - explained,
        fraction: 0.0,
    });
    Ok(finish_classical(terms, ss_total, sum_sq, grid.n_cells(), None))
}

// ---------------------------------------------------------------------------
// Re-centering
// ---------------------------------------------------------------------------

/// How an ANOVA is restricted to an operational region of HP space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RecenterMode {
    /// Keep HP cells whose mean (over the aggregate axis) is within
    /// `tau_pct` percent of the best mean. Lower is better.
    Threshold { tau_pct: f64 },
    /// Keep the contiguous block of HP cells within Chebyshev radius
    /// `radius` of `anchor`, clipped at grid edges. `anchor` indexes the
    /// non-aggregate axes in grid order.
    Box { anchor: Vec<usize>, radius: usize },
}

/// A re-centering view: the mode plus the axis averaged over when ranking
/// HP cells (e.g. the repetition budget).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecenterSpec {
    pub mode: RecenterMode,
    pub aggregate_axis: String,
}

/// The non-aggregate axes of `grid`, in grid order.
fn hp_axes(grid: &GridTable, aggregate: usize) -> Vec<usize> {
    (0..grid.factors().len()).filter(|&a| a != aggregate).collect()
}

/// HP index tuples kept by a re-centering spec.
fn kept_hp_cells(
    grid: &GridTable,
    spec: &RecenterSpec,
) -> Result<BTreeSet<Vec<usize>>, AnalysisError> {
    let aggregate = grid.factor_index(&spec.aggregate_axis)?;
    if grid.factors().len() < 2 {
        return Err(AnalysisError::Other(
            "re-centering needs at least one HP axis besides the aggregate axis".into(),
        ));
    }
    match &spec.mode {
        RecenterMode::Threshold { tau_pct } => {
            if tau_pct.is_nan() || *tau_pct < 0.0 {
                return Err(AnalysisError::Other(format!(
                    "threshold must be >= 0, got {tau_pct}"
                )));
            }
            let means = grid.means_over_axis(aggregate);
            if means.is_empty() {
                return Err(AnalysisError::EmptySelection);
            }
            let best = means.values().copied().fold(f64::INFINITY, f64::min);
            let cutoff = if tau_pct.is_infinite() {
                f64::INFINITY
            } else {
                best * (1.0 + tau_pct / 100.0)
            };
            Ok(means
                .into_iter()
                .filter(|(_, m)| *m <= cutoff)
                .map(|(k, _)| k)
                .collect())
        }
        RecenterMode::Box { anchor, radius } => {
            let hp = hp_axes(grid, aggregate);
            if anchor.len() != hp.len() {
                return Err(AnalysisError::Other(format!(
                    "anchor has {} coordinates, grid has {} HP axes",
                    anchor.len(),
                    hp.len()
                )));
            }
            for (k, &a) in hp.iter().enumerate() {
                if anchor[k] >= grid.factors()[a].levels.len() {
                    return Err(AnalysisError::Other(format!(
                        "anchor coordinate {} out of range for factor {:?}",
                        anchor[k],
                        grid.factors()[a].name
                    )));
                }
            }
            let populated = grid.means_over_axis(aggregate);
            if !populated.contains_key(anchor) {
                return Err(AnalysisError::AnchorMissing {
                    anchor: anchor.clone(),
                });
            }
            let mut kept = BTreeSet::new();
            for (k, &a) in hp.iter().enumerate() {
                let lo = anchor[k].saturating_sub(*radius);
                let hi = (anchor[k] + radius).min(grid.factors()[a].levels.len() - 1);
                if k == 0 {
                    kept = (lo..=hi).map(|i| vec![i]).collect();
                } else {
                    kept = kept
                        .into_iter()
                        .flat_map(|base: Vec<usize>| {
                            (lo..=hi).map(move |i| {
                                let mut next = base.clone();
                                next.push(i);
                                next
                            }).collect::<Vec<_>>()
                        })
                        .collect();
                }
            }
            Ok(kept)
        }
    }
}

/// Restricts a grid to the HP cells a re-centering spec keeps, retaining
/// the aggregate axis in full and pruning levels that lost all data.
pub fn recenter(grid: &GridTable, spec: &RecenterSpec) -> Result<GridTable, AnalysisError> {
    let aggregate = grid.factor_index(&spec.aggregate_axis)?;
    let kept = kept_hp_cells(grid, spec)?;
    if kept.is_empty() {
        return Err(AnalysisError::EmptyFilteredSet);
    }
    grid.retain_cells_over_axis(aggregate, &kept)
        .map_err(|e| AnalysisError::Other(e.to_string()))
}

/// Number of distinct HP cells (tuples over the non-aggregate axes) with
/// data.
pub fn hp_cell_count(grid: &GridTable, aggregate_axis: &str) -> Result<usize, AnalysisError> {
    let aggregate = grid.factor_index(aggregate_axis)?;
    Ok(grid.means_over_axis(aggregate).len())
}

// ---------------------------------------------------------------------------
// IQR outliers
// ---------------------------------------------------------------------------

/// Which Tukey fence a flagged value violated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FenceSide {
    #[serde(rename = "lower")]
    Lower,
    #[serde(rename = "upper")]
    Upper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedCell {
    pub idx: Vec<usize>,
    pub value: f64,
    pub fence: FenceSide,
}

/// Values beyond `1.5 x IQR` of the quartiles, with the fences that caught
/// them. Quartiles use linear interpolation between order statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    pub flagged: Vec<FlaggedCell>,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub lower_fence: f64,
    pub upper_fence: f64,
}

/// Linear-interpolation quantile of a sorted slice at probability `p`.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Two-sided Tukey-fence outlier flagging over per-cell values.
pub fn iqr_outliers(values: &BTreeMap<Vec<usize>, f64>) -> Result<OutlierReport, AnalysisError> {
    if values.len() < 4 {
        return Err(AnalysisError::TooFewValues {
            needed: 4,
            got: values.len(),
        });
    }
    let mut sorted: Vec<f64> = values.values().copied().collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let lower_fence = q1 - 1.5 * iqr;
    let upper_fence = q3 + 1.5 * iqr;
    let flagged = values
        .iter()
        .filter_map(|(idx, &v)| {
            if v < lower_fence {
                Some(FlaggedCell { idx: idx.clone(), value: v, fence: FenceSide::Lower })
            } else if v > upper_fence {
                Some(FlaggedCell { idx: idx.clone(), value: v, fence: FenceSide::Upper })
            } else {
                None
            }
        })
        .collect();
    Ok(OutlierReport {
        flagged,
        q1,
        q3,
        iqr,
        lower_fence,
        upper_fence,
    })
}

/// Rescales cell values to percent above the best (lowest) value:
/// `100 * (v - best) / best`. This is the usual input to
/// [`iqr_outliers`].
pub fn percent_above_best(values: &BTreeMap<Vec<usize>, f64>) -> Result<BTreeMap<Vec<usize>, f64>, AnalysisError> {
    let best = values.values().copied().fold(f64::INFINITY, f64::min);
    if !best.is_finite() || best <= 0.0 {
        return Err(AnalysisError::Other(format!(
            "percent-above-best needs a positive best value, got {best}"
        )));
    }
    Ok(values
        .iter()
        .map(|(k, &v)| (k.clone(), 100.0 * (v - best) / best))
        .collect())
}

// ---------------------------------------------------------------------------
// Re-centering sweep
// ---------------------------------------------------------------------------

/// Decomposition applied at each step of a [`recentering_sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepDecomposition {
    /// Aggregate axis vs. a single combined HP factor.
    TwoWay,
    /// Aggregate axis and two HP axes as separate factors with all pairwise
    /// interactions.
    ThreeWay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    #[serde(with = "crate::serde_util")]
    pub tau_pct: f64,
    pub kept_hp: usize,
    pub decomposition: VarianceDecomposition,
}

/// Threshold re-centering at each `tau`, decomposing the filtered grid.
/// Falls back to type-3 regression whenever filtering leaves an unbalanced
/// grid.
pub fn recentering_sweep(
    grid: &GridTable,
    aggregate_axis: &str,
    thresholds: &[f64],
    decomposition: SweepDecomposition,
) -> Result<Vec<SweepEntry>, AnalysisError> {
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(AnalysisError::Other("thresholds must be sorted ascending".into()));
    }
    let aggregate = grid.factor_index(aggregate_axis)?;
    let mut entries = Vec::with_capacity(thresholds.len());
    for &tau in thresholds {
        let filtered = recenter(
            grid,
            &RecenterSpec {
                mode: RecenterMode::Threshold { tau_pct: tau },
                aggregate_axis: aggregate_axis.to_string(),
            },
        )?;
        let kept_hp = hp_cell_count(&filtered, aggregate_axis)?;
        let decomp = decompose_filtered(&filtered, aggregate_axis, decomposition)?;
        entries.push(SweepEntry {
            tau_pct: tau,
            kept_hp,
            decomposition: decomp,
        });
        let _ = aggregate;
    }
    Ok(entries)
}

/// Decomposes an already-filtered grid, choosing classical vs. type-3 by
/// balance.
pub fn decompose_filtered(
    filtered: &GridTable,
    aggregate_axis: &str,
    decomposition: SweepDecomposition,
) -> Result<VarianceDecomposition, AnalysisError> {
    let aggregate = filtered.factor_index(aggregate_axis)?;
    match decomposition {
        SweepDecomposition::TwoWay => {
            let two = if filtered.factors().len() == 2 {
                filtered.clone()
            } else {
                let hp = hp_axes(filtered, aggregate);
                filtered
                    .combine_axes(&hp, "hp")
                    .map_err(|e| AnalysisError::Other(e.to_string()))?
            };
            // After combining, single-cell HP levels may be absent; prune.
            let two = two
                .rebuild_from(two.cells().map(|(i, v)| (i.clone(), v)).collect())
                .map_err(|e| AnalysisError::Other(e.to_string()))?;
            let names: Vec<String> = two.factors().iter().map(|f| f.name.clone()).collect();
            let col = names.iter().find(|n| *n != aggregate_axis).unwrap().clone();
            if two.is_balanced() {
                anova_two_way(&two, aggregate_axis, &col)
            } else {
                anova_type3(
                    &two,
                    &[ModelTerm::main(aggregate_axis), ModelTerm::main(&col)],
                )
            }
        }
        SweepDecomposition::ThreeWay => {
            if filtered.factors().len() != 3 {
                return Err(AnalysisError::Other(format!(
                    "three-way sweep needs a 3-factor grid, got {}",
                    filtered.factors().len()
                )));
            }
            let names: Vec<String> = filtered.factors().iter().map(|f| f.name.clone()).collect();
            if filtered.is_balanced() {
                anova_three_way(filtered, [&names[0], &names[1], &names[2]], true)
            } else {
                let mut terms: Vec<ModelTerm> = names.iter().map(|n| ModelTerm::main(n)).collect();
                for (i, j) in [(0usize, 1usize), (0, 2), (1, 2)] {
                    terms.push(ModelTerm::interaction(&names[i], &names[j]));
                }
                anova_type3(filtered, &terms)
            }
        }
    }
}
