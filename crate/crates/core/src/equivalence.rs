//! Landscape flatness, HP-axis ranges, log-linear data-multiplier fitting
//! and inversion, and the data-axis dominance ratio.
//!
//! The data multiplier asks how much unique target-language data a
//! monolingual baseline would need to match a mixed-data run: fit
//! `y = a ln(D) + b` to the baseline sweep (natural log, `D` in tokens),
//! then invert at the target value. Inversions outside the fitted corpus
//! range are flagged as extrapolated, never rejected.

use std::collections::BTreeMap;

use crate::error::AnalysisError;
use crate::grid::GridTable;
use crate::model::{LogLinearFit, MetricDirection, MultiplierResult};

/// Smallest |slope| (nats per ln-token) an inversion will divide by.
pub const SLOPE_EPSILON: f64 = 1e-6;

/// Default reference corpus size the multiplier is expressed against.
pub const DEFAULT_REFERENCE_TOKENS: u64 = 200_000_000;

// ---------------------------------------------------------------------------
// Flatness and axis ranges
// ---------------------------------------------------------------------------

/// Counts HP cells whose mean over `aggregate_axis` lies within `tau_pct`
/// percent of the best (lowest) mean.
pub fn flatness_count(
    grid: &GridTable,
    aggregate_axis: &str,
    tau_pct: f64,
) -> Result<usize, AnalysisError> {
    let aggregate = grid.factor_index(aggregate_axis)?;
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
    Ok(means.values().filter(|m| **m <= cutoff).count())
}

/// Relative spread of the marginal means along `axis`, in percent:
/// `100 * (max - min) / min`, marginals averaged over all other factors.
pub fn axis_range(grid: &GridTable, axis: &str) -> Result<f64, AnalysisError> {
    let a = grid.factor_index(axis)?;
    let marginals = grid.marginal_means(a);
    if marginals.len() < 2 {
        return Err(AnalysisError::ShortAxis {
            name: axis.to_string(),
        });
    }
    let min = marginals.values().copied().fold(f64::INFINITY, f64::min);
    let max = marginals.values().copied().fold(f64::NEG_INFINITY, f64::max);
    if min <= 0.0 {
        return Err(AnalysisError::NonPositiveMarginal {
            name: axis.to_string(),
        });
    }
    Ok(100.0 * (max - min) / min)
}

/// One axis's share of the combined spread: `range_a / (range_a + range_b)`.
/// Degenerate (both ranges zero) shares are 0.
pub fn axis_share(range_a: f64, range_b: f64) -> f64 {
    let total = range_a + range_b;
    if total == 0.0 {
        0.0
    } else {
        range_a / total
    }
}

// ---------------------------------------------------------------------------
// Log-linear fitting and inversion
// ---------------------------------------------------------------------------

/// Ordinary least squares of `y` on `ln(D)` over `(tokens, value)` points.
///
/// Needs at least two distinct token counts. A slope that disagrees with
/// `direction` (beyond [`SLOPE_EPSILON`]) sets `direction_violated` rather
/// than failing. Two-point fits have `r_squared = 1` by construction.
pub fn fit_loglinear(
    points: &[(u64, f64)],
    direction: MetricDirection,
) -> Result<LogLinearFit, AnalysisError> {
    if points.iter().any(|(d, _)| *d == 0) {
        return Err(AnalysisError::Other("token counts must be positive".into()));
    }
    let mut distinct: Vec<u64> = points.iter().map(|(d, _)| *d).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(AnalysisError::DegenerateAbscissae);
    }

    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|(d, _)| (*d as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, y)| *y).collect();
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;

    // Two points are fit exactly; so is constant y (by the intercept).
    let r_squared = if points.len() == 2 || syy == 0.0 {
        1.0
    } else {
        let ss_res: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (y - (slope * x + intercept)).powi(2))
            .sum();
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };

    let direction_violated = match direction {
        MetricDirection::Decreasing => slope > SLOPE_EPSILON,
        MetricDirection::Increasing => slope < -SLOPE_EPSILON,
    };

    Ok(LogLinearFit {
        slope,
        intercept,
        r_squared,
        domain_min: *distinct.first().unwrap(),
        domain_max: *distinct.last().unwrap(),
        metric_direction: direction,
        direction_violated,
    })
}

/// Inverts a fit at `target`: `D_equiv = exp((target - b) / a)`, reported
/// as a multiple of `reference_tokens`. Flat fits (|a| <= epsilon) cannot
/// be inverted.
pub fn invert_multiplier(
    fit: &LogLinearFit,
    target: f64,
    reference_tokens: u64,
) -> Result<MultiplierResult, AnalysisError> {
    if fit.slope.abs() <= SLOPE_EPSILON {
        return Err(AnalysisError::FlatFit { slope: fit.slope });
    }
    let equivalent_tokens = ((target - fit.intercept) / fit.slope).exp();
    let above = equivalent_tokens > fit.domain_max as f64;
    let below = equivalent_tokens < fit.domain_min as f64;
    let extrapolation_factor = if above {
        equivalent_tokens / fit.domain_max as f64
    } else if below {
        fit.domain_min as f64 / equivalent_tokens
    } else {
        1.0
    };
    Ok(MultiplierResult {
        equivalent_tokens,
        multiplier: equivalent_tokens / reference_tokens as f64,
        reference_tokens,
        extrapolated: above || below,
        extrapolation_factor,
    })
}

// ---------------------------------------------------------------------------
// Dominance ratio
// ---------------------------------------------------------------------------

/// Effect-size comparison between the data axis and the HP axis.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DominanceResult {
    pub range_d: f64,
    pub range_hp: f64,
    /// `range_d / range_hp`; infinite when the HP range is zero, 0 when the
    /// data axis is degenerate.
    pub rho: f64,
    pub n_hp_kept: usize,
}

impl DominanceResult {
    pub fn from_ranges(range_d: f64, range_hp: f64, n_hp_kept: usize) -> Self {
        let rho = if range_d == 0.0 {
            0.0
        } else if range_hp == 0.0 {
            f64::INFINITY
        } else {
            range_d / range_hp
        };
        DominanceResult {
            range_d,
            range_hp,
            rho,
            n_hp_kept,
        }
    }
}

/// Spread of per-corpus-size best values: `max - min`.
pub fn range_over_data_axis(per_d_best: &BTreeMap<u64, f64>) -> f64 {
    if per_d_best.len() < 2 {
        return 0.0;
    }
    let min = per_d_best.values().copied().fold(f64::INFINITY, f64::min);
    let max = per_d_best.values().copied().fold(f64::NEG_INFINITY, f64::max);
    max - min
}

/// Data-axis dominance ratio.
///
/// `per_d_best` maps corpus size to the best value achieved there.
/// `hp_sweep` is the HP grid at the reference corpus size; when it carries
/// a `d_lr` axis, HP cells are ranked by their marginal mean over that axis
/// and the range is read at `reference_d_lr`, otherwise cells are ranked by
/// their own values. `threshold_pct` keeps HP cells within that percentage
/// of the best marginal mean (infinite keeps everything).
pub fn dominance_ratio(
    per_d_best: &BTreeMap<u64, f64>,
    hp_sweep: &GridTable,
    threshold_pct: f64,
    reference_d_lr: u64,
) -> Result<DominanceResult, AnalysisError> {
    if per_d_best.len() < 2 {
        // Degenerate data axis: report zero ranges rather than failing.
        return Ok(DominanceResult::from_ranges(0.0, 0.0, 0));
    }
    let range_d = range_over_data_axis(per_d_best);

    // Rank HP cells and read their values at the reference corpus size.
    let d_axis = hp_sweep.factors().iter().position(|f| f.name == "d_lr");
    let (rank_means, at_ref): (BTreeMap<Vec<usize>, f64>, BTreeMap<Vec<usize>, f64>) =
        match d_axis {
            Some(axis) => {
                let means = hp_sweep.means_over_axis(axis);
                let ref_label = reference_d_lr.to_string();
                let ref_level = hp_sweep.factors()[axis]
                    .levels
                    .iter()
                    .position(|l| *l == ref_label)
                    .ok_or_else(|| AnalysisError::Other(format!(
                        "reference corpus size {reference_d_lr} is not a level of d_lr"
                    )))?;
                let mut at_ref = BTreeMap::new();
                for (idx, v) in hp_sweep.cells() {
                    if idx[axis] == ref_level {
                        let key: Vec<usize> = idx
                            .iter()
                            .enumerate()
                            .filter(|(a, _)| *a != axis)
                            .map(|(_, &i)| i)
                            .collect();
                        at_ref.insert(key, v);
                    }
                }
                (means, at_ref)
            }
            None => {
                let cells: BTreeMap<Vec<usize>, f64> =
                    hp_sweep.cells().map(|(i, v)| (i.clone(), v)).collect();
                (cells.clone(), cells)
            }
        };
    if rank_means.is_empty() {
        return Err(AnalysisError::EmptySelection);
    }

    let best = rank_means.values().copied().fold(f64::INFINITY, f64::min);
    let cutoff = if threshold_pct.is_infinite() {
        f64::INFINITY
    } else {
        best * (1.0 + threshold_pct / 100.0)
    };
    let kept: Vec<&Vec<usize>> = rank_means
        .iter()
        .filter(|(_, m)| **m <= cutoff)
        .map(|(k, _)| k)
        .collect();
    let values: Vec<f64> = kept
        .iter()
        .filter_map(|k| at_ref.get(*k).copied())
        .collect();
    if values.is_empty() {
        return Err(AnalysisError::EmptyFilteredSet);
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(DominanceResult::from_ranges(range_d, max - min, kept.len()))
}
