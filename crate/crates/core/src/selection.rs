//! Checkpoint-selection rules and validation-loss-proxy statistics.
//!
//! A selection rule picks one checkpoint of a run: the minimum of a
//! per-language validation loss, or the peak of a benchmark accuracy. Ties
//! break toward the smallest repetition count (earlier checkpoints are
//! cheaper).
//!
//! The proxy statistics quantify how well min-loss selection tracks peak
//! accuracy across a collection of runs: Pearson correlation between the
//! two accuracy readings, RMSE and median absolute gap in percentage
//! points, and how often the peak lands strictly after the min-loss
//! checkpoint.

use crate::error::AnalysisError;
use crate::model::{ProxyStats, RunRecord, SelectionResult};

/// A checkpoint-selection rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SelectionRule {
    /// Checkpoint with the lowest `val_loss.<language>`.
    MinValLoss(String),
    /// Checkpoint with the highest `acc.<benchmark>`.
    PeakAccuracy(String),
}

impl SelectionRule {
    pub fn describe(&self) -> String {
        match self {
            SelectionRule::MinValLoss(lang) => format!("min-val-loss({lang})"),
            SelectionRule::PeakAccuracy(bench) => format!("peak-accuracy({bench})"),
        }
    }

    fn series(&self, run: &RunRecord) -> Result<Vec<f64>, AnalysisError> {
        run.checkpoints()
            .iter()
            .enumerate()
            .map(|(index, ckpt)| {
                let value = match self {
                    SelectionRule::MinValLoss(lang) => ckpt.val_loss(lang),
                    SelectionRule::PeakAccuracy(bench) => ckpt.accuracy(bench),
                };
                value.ok_or_else(|| AnalysisError::MetricAbsent {
                    metric: match self {
                        SelectionRule::MinValLoss(lang) => format!("val_loss.{lang}"),
                        SelectionRule::PeakAccuracy(bench) => format!("acc.{bench}"),
                    },
                    index,
                    run_id: run.run_id().to_string(),
                })
            })
            .collect()
    }
}

/// Picks the first checkpoint attaining the rule's optimum.
pub fn select_checkpoint(
    run: &RunRecord,
    rule: &SelectionRule,
) -> Result<SelectionResult, AnalysisError> {
    let series = rule.series(run)?;
    let mut best = 0usize;
    for (i, v) in series.iter().enumerate() {
        let better = match rule {
            SelectionRule::MinValLoss(_) => *v < series[best],
            SelectionRule::PeakAccuracy(_) => *v > series[best],
        };
        if better {
            best = i;
        }
    }
    Ok(SelectionResult {
        run_id: run.run_id().to_string(),
        rule: rule.describe(),
        checkpoint_index: best,
        r_at_selection: run.checkpoints()[best].repetition_count(),
        value_at_selection: series[best],
    })
}

/// A run's accuracy read at its min-loss checkpoint vs. its own peak.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxyGap {
    pub acc_at_min_vl: f64,
    pub peak_acc: f64,
    /// `peak_acc - acc_at_min_vl`; never negative, since the peak is taken
    /// over a set containing the min-loss checkpoint.
    pub gap: f64,
    pub minvl_index: usize,
    pub peak_index: usize,
}

/// Computes the accuracy a run loses when forced onto its min-loss
/// checkpoint.
pub fn proxy_gap(
    run: &RunRecord,
    loss_language: &str,
    accuracy_metric: &str,
) -> Result<ProxyGap, AnalysisError> {
    let at_vl = select_checkpoint(run, &SelectionRule::MinValLoss(loss_language.to_string()))?;
    let peak = select_checkpoint(run, &SelectionRule::PeakAccuracy(accuracy_metric.to_string()))?;
    let acc_at_min_vl = run.checkpoints()[at_vl.checkpoint_index]
        .accuracy(accuracy_metric)
        .expect("presence checked by peak selection");
    Ok(ProxyGap {
        acc_at_min_vl,
        peak_acc: peak.value_at_selection,
        gap: peak.value_at_selection - acc_at_min_vl,
        minvl_index: at_vl.checkpoint_index,
        peak_index: peak.checkpoint_index,
    })
}

/// Aggregates proxy gaps over a collection of runs.
///
/// `pairs` are `(acc_at_min_vl, peak_acc)` readings; `positions` the
/// corresponding `(minvl_index, peak_index)` pairs. Gap statistics are in
/// percentage points. With zero variance in either coordinate the Pearson
/// correlation is reported as `None`; the other statistics still compute.
pub fn proxy_stats(
    pairs: &[(f64, f64)],
    positions: &[(usize, usize)],
) -> Result<ProxyStats, AnalysisError> {
    if pairs.len() < 2 {
        return Err(AnalysisError::TooFewValues {
            needed: 2,
            got: pairs.len(),
        });
    }
    assert_eq!(pairs.len(), positions.len(), "pairs and positions must align");
    let n = pairs.len();

    let gaps_pct: Vec<f64> = pairs.iter().map(|(at, peak)| (peak - at) * 100.0).collect();
    let rmse_pct = (gaps_pct.iter().map(|g| g * g).sum::<f64>() / n as f64).sqrt();
    let mut abs_gaps: Vec<f64> = gaps_pct.iter().map(|g| g.abs()).collect();
    abs_gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median_abs_gap_pct = if n % 2 == 1 {
        abs_gaps[n / 2]
    } else {
        (abs_gaps[n / 2 - 1] + abs_gaps[n / 2]) / 2.0
    };

    let frac_peak_after_minvl =
        positions.iter().filter(|(mv, pk)| pk > mv).count() as f64 / n as f64;

    Ok(ProxyStats {
        pearson_r: pearson(pairs),
        rmse_pct,
        median_abs_gap_pct,
        n,
        frac_peak_after_minvl,
    })
}

/// Runs [`proxy_gap`] over every run carrying both metrics and aggregates.
pub fn proxy_stats_over_runs(
    runs: &[RunRecord],
    loss_language: &str,
    accuracy_metric: &str,
) -> Result<(ProxyStats, Vec<(String, ProxyGap)>), AnalysisError> {
    let mut gaps = Vec::new();
    for run in runs {
        let tracks = |metric: &dyn Fn(&crate::model::CheckpointMetric) -> Option<f64>| {
            run.checkpoints().iter().any(|c| metric(c).is_some())
        };
        let has_loss = tracks(&|c| c.val_loss(loss_language));
        let has_acc = tracks(&|c| c.accuracy(accuracy_metric));
        if !has_loss || !has_acc {
            continue;
        }
        gaps.push((run.run_id().to_string(), proxy_gap(run, loss_language, accuracy_metric)?));
    }
    let pairs: Vec<(f64, f64)> = gaps.iter().map(|(_, g)| (g.acc_at_min_vl, g.peak_acc)).collect();
    let positions: Vec<(usize, usize)> =
        gaps.iter().map(|(_, g)| (g.minvl_index, g.peak_index)).collect();
    let stats = proxy_stats(&pairs, &positions)?;
    Ok((stats, gaps))
}

fn pearson(pairs: &[(f64, f64)]) -> Option<f64> {
    let n = pairs.len() as f64;
    let mean_x = pairs.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y = pairs.iter().map(|(_, y)| y).sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in pairs {
        let dx = x - mean_x;
        let dy = y - mean_y;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
