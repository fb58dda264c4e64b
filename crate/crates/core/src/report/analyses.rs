//! One function per analysis kind, each writing its table (CSV + JSON) and
//! any plot-data series, returning the manifest entry that records which
//! library operation produced the numbers.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use super::config::{parse_reducer, taus_to_f64, AnalysisSpec, CollapseSpec, GridSource, RunFilter};
use super::writer::{self, num, Table};
use super::ManifestEntry;
use crate::equivalence::{self, DominanceResult};
use crate::error::{AnalysisError, Result};
use crate::grid::GridTable;
use crate::ingest::{extract_grid, CellReducer, Dataset, MetricSelector};
use crate::model::{MetricDirection, RunRecord};
use crate::mup;
use crate::selection;
use crate::variance;

pub use super::writer::heatmap_data as emit_heatmap_data;

fn need_dataset<'a>(dataset: Option<&'a Dataset>, name: &str) -> Result<&'a Dataset> {
    dataset.ok_or_else(|| {
        AnalysisError::Other(format!("analysis {name:?} needs a dataset")).into()
    })
}

fn parse_direction(text: &str) -> Result<MetricDirection, AnalysisError> {
    match text {
        "decreasing" => Ok(MetricDirection::Decreasing),
        "increasing" => Ok(MetricDirection::Increasing),
        other => Err(AnalysisError::Other(format!(
            "direction {other:?} must be decreasing or increasing"
        ))),
    }
}

/// Scales sorted by their numeric suffix (25M < 150M < 1.43B), then name.
fn sorted_scales(dataset: &Dataset) -> Vec<String> {
    let mut names: Vec<String> = dataset.scales().keys().cloned().collect();
    names.sort_by(|a, b| {
        crate::ingest::level_cmp(a, b)
    });
    names
}

fn runs_by_scale(runs: &[RunRecord]) -> BTreeMap<String, Vec<&RunRecord>> {
    let mut map: BTreeMap<String, Vec<&RunRecord>> = BTreeMap::new();
    for run in runs {
        map.entry(run.scale().to_string()).or_default().push(run);
    }
    map
}

fn reduce_one(
    run: &RunRecord,
    metric: &MetricSelector,
    reducer: &CellReducer,
) -> Result<Option<f64>, AnalysisError> {
    // One-run grids reuse the extract path for identical semantics.
    crate::ingest::reduce_run_value(run, metric, reducer)
}

pub(super) fn run_analysis(
    spec: &AnalysisSpec,
    dataset: Option<&Dataset>,
    out_dir: &Path,
) -> Result<ManifestEntry> {
    match spec {
        AnalysisSpec::Budget { name, multiplier } => {
            budget(need_dataset(dataset, name)?, name, *multiplier, out_dir)
        }
        AnalysisSpec::Hyperparameters {
            name,
            filter,
            budget_multiplier,
        } => hyperparameters(need_dataset(dataset, name)?, name, filter, *budget_multiplier, out_dir),
        AnalysisSpec::AlphaSweep {
            name,
            metric,
            reducer,
            filter,
            budget_multiplier,
        } => alpha_sweep(
            need_dataset(dataset, name)?,
            name,
            metric,
            reducer,
            filter,
            *budget_multiplier,
            out_dir,
        ),
        AnalysisSpec::Select { name, rule, filter } => {
            select(need_dataset(dataset, name)?, name, rule, filter, out_dir)
        }
        AnalysisSpec::ProxyStats {
            name,
            loss,
            accuracy,
            filter,
        } => proxy_stats(need_dataset(dataset, name)?, name, loss, accuracy, filter, out_dir),
        AnalysisSpec::Fit {
            name,
            metric,
            reducer,
            direction,
            filter,
        } => fit(need_dataset(dataset, name)?, name, metric, reducer, direction, filter, out_dir),
        AnalysisSpec::Multiplier {
            name,
            metric,
            direction,
            baseline_reducer,
            baseline_filter,
            target_reducer,
            target_filter,
            reference_tokens,
        } => multiplier(
            need_dataset(dataset, name)?,
            name,
            metric,
            direction,
            baseline_reducer,
            baseline_filter,
            target_reducer,
            target_filter,
            *reference_tokens,
            out_dir,
        ),
        AnalysisSpec::Anova {
            name,
            source,
            interactions,
        } => anova(need_dataset(dataset, name)?, name, source, *interactions, out_dir),
        AnalysisSpec::RecenterSweep {
            name,
            source,
            aggregate,
            thresholds,
            three_way,
        } => recenter_sweep(
            need_dataset(dataset, name)?,
            name,
            source,
            aggregate,
            &taus_to_f64(thresholds),
            *three_way,
            out_dir,
        ),
        AnalysisSpec::Flatness {
            name,
            source,
            aggregate,
            thresholds,
            per_scale,
        } => flatness(
            need_dataset(dataset, name)?,
            name,
            source,
            aggregate,
            &taus_to_f64(thresholds),
            *per_scale,
            out_dir,
        ),
        AnalysisSpec::AxisRange {
            name,
            source,
            axes,
            per_scale,
        } => axis_range(need_dataset(dataset, name)?, name, source, axes, *per_scale, out_dir),
        AnalysisSpec::Outliers {
            name,
            source,
            aggregate,
        } => outliers(need_dataset(dataset, name)?, name, source, aggregate, out_dir),
        AnalysisSpec::Dominance {
            name,
            metric,
            reducer,
            baseline_filter,
            hp_filter,
            thresholds,
            reference_d_lr,
            per_scale,
            range_hp,
        } => dominance(
            need_dataset(dataset, name)?,
            name,
            metric,
            reducer,
            baseline_filter,
            hp_filter.as_ref(),
            &taus_to_f64(thresholds),
            *reference_d_lr,
            *per_scale,
            range_hp.as_ref(),
            out_dir,
        ),
        AnalysisSpec::Heatmap {
            name,
            source,
            cap_pct,
            collapse,
            anchor,
        } => heatmap(
            need_dataset(dataset, name)?,
            name,
            source,
            *cap_pct,
            collapse.as_ref(),
            anchor,
            out_dir,
        ),
    }
}

fn entry(name: &str, operation: &str, outputs: Vec<String>) -> ManifestEntry {
    ManifestEntry {
        name: name.to_string(),
        operation: operation.to_string(),
        outputs,
    }
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct BudgetRow {
    scale: String,
    d_model: u32,
    m_n: f64,
    n_nonemb: u64,
    multiplier: u64,
    budget_tokens: u64,
}

fn budget(dataset: &Dataset, name: &str, multiplier: u64, out_dir: &Path) -> Result<ManifestEntry> {
    let mut rows = Vec::new();
    for scale_name in sorted_scales(dataset) {
        let scale = &dataset.scales()[&scale_name];
        rows.push(BudgetRow {
            scale: scale_name.clone(),
            d_model: scale.d_model(),
            m_n: scale.m_n(),
            n_nonemb: scale.n_nonemb(),
            multiplier,
            budget_tokens: mup::token_budget(scale, multiplier),
        });
    }
    let mut table = Table::new(&["scale", "d_model", "m_n", "n_nonemb", "multiplier", "budget_tokens"]);
    for r in &rows {
        table.push(vec![
            r.scale.clone(),
            r.d_model.to_string(),
            num(r.m_n),
            r.n_nonemb.to_string(),
            r.multiplier.to_string(),
            r.budget_tokens.to_string(),
        ]);
    }
    let outputs = vec![
        writer::write_csv(out_dir, &format!("{name}.csv"), &table)?,
        writer::write_json(out_dir, &format!("{name}.json"), &rows)?,
    ];
    Ok(entry(name, "token_budget", outputs))
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct HpRow {
    run_id: String,
    paradigm: String,
    scale: String,
    lambda: f64,
    lambda_eff: f64,
    eta: f64,
    eta_eff: f64,
    r_max: Option<u32>,
    alpha: Option<f64>,
    capped: Option<bool>,
    hr_tokens: Option<u64>,
}

fn hyperparameters(
    dataset: &Dataset,
    name: &str,
    filter: &RunFilter,
    budget_multiplier: u64,
    out_dir: &Path,
) -> Result<ManifestEntry> {
    let filtered = filter.apply(dataset)?;
    let mut rows = Vec::new();
    for run in filtered.runs() {
        let scale = filtered
            .scale(run.scale())
            .expect("dataset validation resolves scales");
        let eff = mup::rescale_hp(run.base_hp(), scale);
        let mix = run
            .r_max()
            .map(|r_max| mup::mix_budget(mup::token_budget(scale, budget_multiplier), run.d_lr(), r_max));
        rows.push(HpRow {
            run_id: run.run_id().to_string(),
            paradigm: run.paradigm().to_string(),
            scale: run.scale().to_string(),
            lambda: run.base_hp().weight_decay(),
            lambda_eff: eff.weight_decay,
            eta: run.base_hp().learning_rate(),
            eta_eff: eff.learning_rate,
            r_max: run.r_max(),
            alpha: mix.map(|m| m.alpha),
            capped: mix.map(|m| m.capped),
            hr_tokens: mix.map(|m| m.hr_tokens),
        });
    }
    rows.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    let mut table = Table::new(&[
        "run_id", "paradigm", "scale", "lambda", "lambda_eff", "eta", "eta_eff", "r_max", "alpha",
        "capped", "hr_tokens",
    ]);
    for r in &rows {
        table.push(vec![
            r.run_id.clone(),
            r.paradigm.clone(),
            r.scale.clone(),
            num(r.lambda),
            num(r.lambda_eff),
            num(r.eta),
            num(r.eta_eff),
            r.r_max.map(|v| v.to_string()).unwrap_or_default(),
            r.alpha.map(num).unwrap_or_default(),
            r.capped.map(|v| v.to_string()).unwrap_or_default(),
            r.hr_tokens.map(|v| v.to_string()).unwrap_or_default(),
        ]);
    }
    let outputs = vec![
        writer::write_csv(out_dir, &format!("{name}.csv"), &table)?,
        writer::write_json(out_dir, &format!("{name}.json"), &rows)?,
    ];
    Ok(entry(name, "rescale_hp + mix_budget", outputs))
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct AlphaSweepRow {
    scale: String,
    r_max: u32,
    alpha: f64,
    capped: bool,
    best_value: f64,
    n_runs: usize,
}

fn alpha_sweep(
    dataset: &Dataset,
    name: &str,
    metric_text: &str,
    reducer_text: &str,
    filter: &RunFilter,
    budget_multiplier: u64,
    out_dir: &Path,
) -> Result<ManifestEntry> {
    let metric = MetricSelector::parse(metric_text)?;
    let reducer = parse_reducer(reducer_text)?;
    let filtered = filter.apply(dataset)?;

    // (scale, r_max) -> best reduced value over runs at that budget
    let mut best: BTreeMap<(String, u32), (f64, usize)> = BTreeMap::new();
    for run in filtered.runs() {
        let Some(r_max) = run.r_max() else { continue };
        let Some(value) = reduce_one(run, &metric, &reducer)? else {
            continue;
        };
        let slot = best
            .entry((run.scale().to_string(), r_max))
            .or_insert((f64::INFINITY, 0));
        slot.0 = slot.0.min(value);
        slot.1 += 1;
    }
    if best.is_empty() {
        return Err(AnalysisError::EmptySelection.into());
    }

    let mut rows: Vec<AlphaSweepRow> = best
        .into_iter()
        .map(|((scale, r_max), (value, n_runs))| {
            let spec = dataset.scale(&scale).expect("scales resolve");
            let mix = mup::mix_budget(
                mup::token_budget(spec, budget_multiplier),
                filtered
                    .runs()
                    .iter()
                    .find(|r| r.scale() == scale && r.r_max() == Some(r_max))
                    .map(|r| r.d_lr())
                    .expect("run exists for key"),
                r_max,
            );
            AlphaSweepRow {
                scale,
                r_max,
                alpha: mix.alpha,
                capped: mix.capped,
                best_value: value,
                n_runs,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        crate::ingest::level_cmp(&a.scale, &b.scale)
            .then(a.alpha.partial_cmp(&b.alpha).unwrap())
            .then(a.r_max.cmp(&b.r_max))
    });

    let mut table = Table::new(&["scale", "r_max", "alpha", "capped", "best_value", "n_runs"]);
    for r in &rows {
        table.push(vec![
            r.scale.clone(),
            r.r_max.to_string(),
            num(r.alpha),
            r.capped.to_string(),
            num(r.best_value),
            r.n_runs.to_string(),
        ]);
    }

    // one (alpha, best) curve per scale, in scale order
    #[derive(Serialize)]
    struct AlphaSeries {
        scale: String,
        points: Vec<(f64, f64)>,
    }
    let mut series: Vec<AlphaSeries> = Vec::new();
    for r in &rows {
        match series.last_mut() {
            Some(s) if s.scale == r.scale => s.points.push((r.alpha, r.best_value)),
            _ => series.push(AlphaSeries {
                scale: r.scale.clone(),
                points: vec![(r.alpha, r.best_value)],
            }),
        }
    }

    let outputs = vec![
        writer::write_csv(out_dir, &format!("{name}.csv"), &table)?,
        writer::write_json(out_dir, &format!("{name}.json"), &rows)?,
        writer::write_json(out_dir, &format!("{name}_series.json"), &series)?,
    ];
    Ok(entry(name, "mix_budget + extract_grid", outputs))
}

fn parse_rule(text: &str) -> Result<selection::SelectionRule, AnalysisError> {
    if let Some(lang) = text.strip_prefix("min-vl:") {
        if !lang.is_empty() {
            return Ok(selection::SelectionRule::MinValLoss(lang.to_string()));
        }
    }
    if let Some(bench) = text.strip_prefix("peak-acc:") {
        if !bench.is_empty() {
            return Ok(selection::SelectionRule::PeakAccuracy(bench.to_string()));
        }
    }
    Err(AnalysisError::Other(format!(
        "rule {text:?} must be min-vl:<language> or peak-acc:<benchmark>"
    )))
}

fn rule_metric_present(run: &RunRecord, rule: &selection::SelectionRule) -> bool {
    run.checkpoints().iter().any(|c| match rule {
        selection::SelectionRule::MinValLoss(lang) => c.val_loss(lang).is_some(),
        selection::SelectionRule::PeakAccuracy(bench) => c.accuracy(bench).is_some(),
    })
}

fn select(
    dataset: &Dataset,
    name: &str,
    rule_text: &str,
    filter: &RunFilter,
    out_dir: &Path,
) -> Result<ManifestEntry> {
    let rule = parse_rule(rule_text)?;
    let filtered = filter.apply(dataset)?;
    let mut results = Vec::new();
    for run in filtered.runs() {
        if !rule_metric_present(run, &rule) {
            continue;
        }
        results.push(selection::select_checkpoint(run, &rule)?);
    }
    results.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    let mut table = Table::new(&["run_id", "rule", "checkpoint_index", "r", "value"]);
    for r in &results {
        table.push(vec![
            r.run_id.clone(),
            r.rule.clone(),
            r.checkpoint_index.to_string(),
            num(r.r_at_selection),
            num(r.value_at_selection),
        ]);
    }
    let outputs = vec![
        writer::write_csv(out_dir, &format!("{name}.csv"), &table)?,
        writer::write_json(out_dir, &format!("{name}.json"), &results)?,
    ];
    Ok(entry(name, "select_checkpoint", outputs))
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ProxyRow {
    scope: String,
    n: usize,
    pearson_r: Option<f64>,
    rmse_pct: f64,
    median_abs_gap_pct: f64,
    frac_peak_after_minvl: f64,
}

fn proxy_stats(
    dataset: &Dataset,
    name: &str,
    loss: &str,
    accuracy: &str,
    filter: &RunFilter,
    out_dir: &Path,
) -> Result<ManifestEntry> {
    let filtered = filter.apply(dataset)?;
    let mut rows: Vec<ProxyRow> = Vec::new();
    let grouped = runs_by_scale(filtered.runs());
    let mut scale_names: Vec<&String> = grouped.keys().collect();
    scale_names.sort_by(|a, b| crate::ingest::level_cmp(a, b));
    let mut push_stats = |scope: String, runs: Vec<RunRecord>| -> Result<()> {
        match selection::proxy_stats_over_runs(&runs, loss, accuracy) {
            Ok((stats, _)) => {
                rows.push(ProxyRow {
                    scope,
                    n: stats.n,
                    pearson_r: stats.pearson_r,
                    rmse_pct: stats.rmse_pct,
                    median_abs_gap_pct: stats.median_abs_gap_pct,
                    frac_peak_after_minvl: stats.frac_peak_after_minvl,
                });
                Ok(())
            }
            // Scales with under two usable runs simply get no row.
            Err(AnalysisError::TooFewValues { .. }) => Ok(()),
            Err(e) => Err(e.into()),
        }
    };
    for scale in scale_names {
        let runs: Vec<RunRecord> = grouped[scale].iter().map(|r| (*r).clone()).collect();
        push_stats(scale.clone(), runs)?;
    }
    push_stats("pooled".to_string(), filtered.runs().to_vec())?;

    let mut table = Table::new(&[
        "scope", "n", "pearson_r", "rmse_pct", "median_abs_gap_pct", "frac_peak_after_minvl",
    ]);
    for r in &rows {
        table.push(vec![
            r.scope.clone(),
            r.n.to_string(),
            r.pearson_r.map(num).unwrap_or_else(|| "undefined".into()),
            num(r.rmse_pct),
            num(r.median_abs_gap_pct),
            num(r.frac_peak_after_minvl),
        ]);
    }
    let outputs = vec![
        writer::write_csv(out_dir, &format!("{name}.csv"), &table)?,
        writer::write_json(out_dir, &format!("{name}.json"), &rows)?,
    ];
    Ok(entry(name, "proxy_stats", outputs))
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct FitRow {
    scale: String,
    metric: String,
    n_points: usize,
    slope: f64,
    intercept: f64,
    r_squared: f64,
    domain_min: u64,
    domain_max: u64,
    direction_violated: bool,
}

#[derive(Serialize)]
struct FitSeries {
    scale: String,
    points: Vec<(u64, f64)>,
    /// 33 log-spaced samples of the fitted line across the domain.
    line: Vec<(f64, f64)>,
}

fn baseline_points(
    runs: &[&RunRecord],
    metric: &MetricSelector,
    reducer: &CellReducer,
) -> Result<Vec<(u64, f64)>, AnalysisError> {
    let mut points = Vec::new();
    for run in runs {
        if let Some(v) = reduce_one(run, metric, reducer)? {
            points.push((run.d_lr(), v));
        }
    }
    points.sort_by_key(|(d, _)| *d);
    Ok(points)
}

fn sample_line(fit: &crate::model::LogLinearFit) -> Vec<(f64, f64)> {
    let lo = (fit.domain_min as f64).ln();
    let hi = (fit.domain_max as f64).ln();
    (0..33)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / 32.0;
            (x.exp(), fit.slope * x + fit.intercept)
        })
        .collect()
}

fn fit(
    dataset: &Dataset,
    name: &str,
    metric_text: &str,
    reducer_text: &str,
    direction_text: &str,
    filter: &RunFilter,
    out_dir: &Path,
) -> Result<ManifestEntry> {
    let metric = MetricSelector::parse(metric_text)?;
    let reducer = parse_reducer(reducer_text)?;
    let direction = parse_direction(direction_text)?;
    let filtered = filter.apply(dataset)?;
    let grouped = runs_by_scale(filtered.runs());
    let mut scale_names: Vec<&String> = grouped.keys().collect();
    scale_names.sort_by(|a, b| crate::ingest::level_cmp(a, b));

    let mut rows = Vec::new();
    let mut series = Vec::new();
    for scale in scale_names {
        let points = baseline_points(&grouped[scale], &metric, &reducer)?;
        let distinct: std::collections::BTreeSet<u64> = points.iter().map(|(d, _)| *d).collect();
        if distinct.len() < 2 {
            continue;
        }
        let fit = equivalence::fit_loglinear(&points, direction)?;
        rows.push(FitRow {
            scale: scale.clone(),
            metric: metric.name(),
            n_points: points.len(),
            slope: fit.slope,
            intercept: fit.intercept,
            r_squared: fit.r_squared,
            domain_min: fit.domain_min,
            domain_max: fit.domain_max,
            direction_violated: fit.direction_violated,
        });
        series.push(FitSeries {
            scale: scale.clone(),
            line: sample_line(&fit),
            points,
        });
    }
    if rows.is_empty() {
        return Err(AnalysisError::EmptySelection.into());
    }

    let mut table = Table::new(&[
        "scale", "metric", "n_points", "a", "b", "r_squared", "domain_min", "domain_max",
        "direction_violated",
    ]);
    for r in &rows {
        table.push(vec![
            r.scale.clone(),
            r.metric.clone(),
            r.n_points.to_string(),
            num(r.slope),
            num(r.intercept),
            num(r.r_squared),
            r.domain_min.to_string(),
            r.domain_max.to_string(),
            r.direction_violated.to_string(),
        ]);
    }
    let outputs = vec![
        writer::write_csv(out_dir, &format!("{name}.csv"), &table)?,
        writer::write_json(out_dir, &format!("{name}.json"), &rows)?,
        writer::write_json(out_dir, &format!("{name}_series.json"), &series)?,
    ];
    Ok(entry(name, "fit_loglinear", outputs))
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct MultiplierRow {
    scale: String,
    target_run: String,
    paradigm: String,
    target_value: f64,
    equivalent_tokens: f64,
    multiplier: f64,
    extrapolated: bool,
    extrapolation_factor: f64,
}

#[derive(Serialize)]
struct MultiplierSeries {
    scale: String,
    baseline_points: Vec<(u64, f64)>,
    line: Vec<(f64, f64)>,
    targets: Vec<TargetLine>,
}

#[derive(Serialize)]
struct TargetLine {
    run_id: String,
    value: f64,
    equivalent_tokens: f64,
}

#[allow(clippy::too_many_arguments)]
fn multiplier(
    dataset: &Dataset,
    name: &str,
    metric_text: &str,
    direction_text: &str,
    baseline_reducer: &str,
    baseline_filter: &RunFilter,
    target_reducer: &str,
    target_filter: &RunFilter,
    reference_tokens: u64,
    out_dir: &Path,
) -> Result<ManifestEntry> {
    let metric = MetricSelector::parse(metric_text)?;
    let direction = parse_direction(direction_text)?;
    let base_reducer = parse_reducer(baseline_reducer)?;
    let tgt_reducer = parse_reducer(target_reducer)?;

    let baselines = baseline_filter.apply(dataset)?;
    let targets = target_filter.apply(dataset)?;
    let base_by_scale = runs_by_scale(baselines.runs());
    let tgt_by_scale = runs_by_scale(targets.runs());

    let mut scale_names: Vec<&String> = base_by_scale.keys().collect();
    scale_names.sort_by(|a, b| crate::ingest::level_cmp(a, b));

    let mut rows = Vec::new();
    let mut series = Vec::new();
    for scale in scale_names {
        let points = baseline_points(&base_by_scale[scale], &metric, &base_reducer)?;
        let distinct: std::collections::BTreeSet<u64> = points.iter().map(|(d, _)| *d).collect();
        if distinct.len() < 2 {
            continue;
        }
        let fit = equivalence::fit_loglinear(&points, direction)?;
        let mut target_lines = Vec::new();
        if let Some(target_runs) = tgt_by_scale.get(scale) {
            let mut sorted: Vec<&&RunRecord> = target_runs.iter().collect();
            sorted.sort_by(|a, b| a.run_id().cmp(b.run_id()));
            for run in sorted {
                let Some(target) = reduce_one(run, &metric, &tgt_reducer)? else {
                    continue;
                };
                let inv = equivalence::invert_multiplier(&fit, target, reference_tokens)?;
                rows.push(MultiplierRow {
                    scale: scale.clone(),
                    target_run: run.run_id().to_string(),
                    paradigm: run.paradigm().to_string(),
                    target_value: target,
                    equivalent_tokens: inv.equivalent_tokens,
                    multiplier: inv.multiplier,
                    extrapolated: inv.extrapolated,
                    extrapolation_factor: inv.extrapolation_factor,
                });
                target_lines.push(TargetLine {
                    run_id: run.run_id().to_string(),
                    value: target,
                    equivalent_tokens: inv.equivalent_tokens,
                });
            }
        }
        series.push(MultiplierSeries {
            scale: scale.clone(),
            line: sample_line(&fit),
            baseline_points: points,
            targets: target_lines,
        });
    }
    if series.is_empty() {
        return Err(AnalysisError::EmptySelection.into());
    }

    let mut table = Table::new(&[
        "scale", "target_run", "paradigm", "target_value", "equivalent_tokens", "multiplier",
        "extrapolated", "extrapolation_factor",
    ]);
    for r in &rows {
        table.push(vec![
            r.scale.clone(),
            r.target_run.clone(),
            r.paradigm.clone(),
            num(r.target_value),
            num(r.equivalent_tokens),
            num(r.multiplier),
            r.extrapolated.to_string(),
            num(r.extrapolation_factor),
        ]);
    }
    let outputs = vec![
        writer::write_csv(out_dir, &format!("{name}.csv"), &table)?,
        writer::write_json(out_dir, &format!("{name}.json"), &rows)?,
        writer::write_json(out_dir, &format!("{name}_series.json"), &series)?,
    ];
    Ok(entry(name, "fit_loglinear + invert_multiplier", outputs))
}

// ---------------------------------------------------------------------------

fn decomposition_outputs(
    name: &str,
    decomposition: &crate::model::VarianceDecomposition,
    out_dir: &Path,
) -> Result<Vec<String>> {
    let mut table = Table::new(&["term", "sum_of_squares", "fraction"]);
    for t in &decomposition.terms {
        table.push(vec![t.name.clone(), num(t.sum_of_squares), num(t.fraction)]);
    }
    Ok(vec![
        writer::write_csv(out_dir, &format!("{name}.csv"), &table)?,
        writer::write_json(out_dir, &format!("{name}.json"), decomposition)?,
    ])
}

fn anova(
    dataset: &Dataset,
    name: &str,
    source: &GridSource,
    interactions: bool,
    out_dir: &Path,
) -> Result<ManifestEntry> {
    let grid = source.extract(dataset)?;
    let names: Vec<String> = grid.factors().iter().map(|f| f.name.clone()).collect();
    let (decomposition, operation) = match names.len() {
        2 => {
            if grid.is_balanced() {
                (variance::anova_two_way(&grid, &names[0], &names[1])?, "anova_two_way")
            } else {
                let terms = [variance::ModelTerm::main(&names[0]), variance::ModelTerm::main(&names[1])];
                (variance::anova_type3(&grid, &terms)?, "anova_type3")
            }
        }
        3 => {
            if grid.is_balanced() {
                (
                    variance::anova_three_way(&grid, [&names[0], &names[1], &names[2]], interactions)?,
                    "anova_three_way",
                )
            } else {
                let mut terms: Vec<variance::ModelTerm> =
                    names.iter().map(|n| variance::ModelTerm::main(n)).collect();
                if interactions {
                    for (i, j) in [(0usize, 1usize), (0, 2), (1, 2)] {
                        terms.push(variance::ModelTerm::interaction(&names[i], &names[j]));
                    }
                }
                (variance::anova_type3(&grid, &terms)?, "anova_type3")
            }
        }
        n => {
            return Err(AnalysisError::Other(format!(
                "anova needs 2 or 3 factors, got {n}"
            ))
            .into())
        }
    };
    let outputs = decomposition_outputs(name, &decomposition, out_dir)?;
    Ok(entry(name, operation, outputs))
}

// ---------------------------------------------------------------------------

fn recenter_sweep(
    dataset: &Dataset,
    name: &str,
    source: &GridSource,
    aggregate: &str,
    thresholds: &[f64],
    three_way: bool,
    out_dir: &Path,
) -> Result<ManifestEntry> {
    let grid = source.extract(dataset)?;
    let decomposition = if three_way {
        variance::SweepDecomposition::ThreeWay
    } else {
        variance::SweepDecomposition::TwoWay
    };
    let entries = variance::recentering_sweep(&grid, aggregate, thresholds, decomposition)?;

    // Union of term names, in first-seen order, keys the fraction columns.
    let mut term_names: Vec<String> = Vec::new();
    for e in &entries {
        for t in &e.decomposition.terms {
            if !term_names.contains(&t.name) {
                term_names.push(t.name.clone());
            }
        }
    }
    let mut columns = vec!["tau_pct".to_string(), "kept_hp".to_string(), "method".to_string()];
    columns.extend(term_names.iter().map(|t| format!("fraction:{t}")));
    let mut table = Table { columns, rows: Vec::new() };
    for e in &entries {
        let mut row = vec![num(e.tau_pct), e.kept_hp.to_string(), e.decomposition.method.to_string()];
        for t in &term_names {
            row.push(e.decomposition.fraction(t).map(num).unwrap_or_default());
        }
        table.push(row);
    }
    let outputs = vec![
        writer::write_csv(out_dir, &format!("{name}.csv"), &table)?,
        writer::write_json(out_dir, &format!("{name}.json"), &entries)?,
    ];
    Ok(entry(name, "recentering_sweep", outputs))
}

// ---------------------------------------------------------------------------

fn scale_slices(
    dataset: &Dataset,
    source: &GridSource,
    per_scale: bool,
) -> Result<Vec<(String, GridTable)>, AnalysisError> {
    if !per_scale {
        return Ok(vec![("all".to_string(), source.extract(dataset)?)]);
    }
    let filtered = source.filter.apply(dataset)?;
    let mut scales: Vec<String> = runs_by_scale(filtered.runs()).keys().cloned().collect();
    scales.sort_by(|a, b| crate::ingest::level_cmp(a, b));
    let mut out = Vec::new();
    for scale in scales {
        let mut narrowed = source.clone();
        narrowed.filter.scale = Some(scale.clone());
        match narrowed.extract(dataset) {
            Ok(grid) => out.push((scale, grid)),
            Err(AnalysisError::EmptySelection) => continue,
            Err(e) => return Err(e),
        }
    }
    if out.is_empty() {
        return Err(AnalysisError::EmptySelection);
    }
    Ok(out)
}

#[derive(Serialize)]
struct FlatnessCount {
    #[serde(with = "crate::serde_util")]
    tau_pct: f64,
    count: usize,
}

#[derive(Serialize)]
struct FlatnessRow {
    scale: String,
    counts: Vec<FlatnessCount>,
    total_hp: usize,
}

fn flatness(
    dataset: &Dataset,
    name: &str,
    source: &GridSource,
    aggregate: &str,
    thresholds: &[f64],
    per_scale: bool,
    out_dir: &Path,
) -> Result<ManifestEntry> {
    let slices = scale_slices(dataset, source, per_scale)?;
    let mut rows = Vec::new();
    for (scale, grid) in &slices {
        let mut counts = Vec::new();
        for &tau in thresholds {
            counts.push(FlatnessCount {
                tau_pct: tau,
                count: equivalence::flatness_count(grid, aggregate, tau)?,
            });
        }
        let total_hp = variance::hp_cell_count(grid, aggregate)?;
        rows.push(FlatnessRow {
            scale: scale.clone(),
            counts,
            total_hp,
        });
    }
    let mut columns = vec!["scale".to_string()];
    columns.extend(thresholds.iter().map(|t| format!("tau_{}", num(*t))));
    columns.push("total_hp".to_string());
    let mut table = Table { columns, rows: Vec::new() };
    for r in &rows {
        let mut row = vec![r.scale.clone()];
        row.extend(r.counts.iter().map(|c| c.count.to_string()));
        row.push(r.total_hp.to_string());
        table.push(row);
    }
    let outputs = vec![
        writer::write_csv(out_dir, &format!("{name}.csv"), &table)?,
        writer::write_json(out_dir, &format!("{name}.json"), &rows)?,
    ];
    Ok(entry(name, "flatness_count", outputs))
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct AxisRangeRow {
    scale: String,
    axis_a: String,
    range_a_pct: f64,
    axis_b: String,
    range_b_pct: f64,
    share_a: f64,
}

fn axis_range(
    dataset: &Dataset,
    name: &str,
    source: &GridSource,
    axes: &(String, String),
    per_scale: bool,
    out_dir: &Path,
) -> Result<ManifestEntry> {
    let slices = scale_slices(dataset, source, per_scale)?;
    let mut rows = Vec::new();
    for (scale, grid) in &slices {
        let range_a = equivalence::axis_range(grid, &axes.0)?;
        let range_b = equivalence::axis_range(grid, &axes.1)?;
        rows.push(AxisRangeRow {
            scale: scale.clone(),
            axis_a: axes.0.clone(),
            range_a_pct: range_a,
            axis_b: axes.1.clone(),
            range_b_pct: range_b,
            share_a: equivalence::axis_share(range_a, range_b),
        });
    }
    let mut table = Table::new(&["scale", "axis_a", "range_a_pct", "axis_b", "range_b_pct", "share_a"]);
    for r in &rows {
        table.push(vec![
            r.scale.clone(),
            r.axis_a.clone(),
            num(r.range_a_pct),
            r.axis_b.clone(),
            num(r.range_b_pct),
            num(r.share_a),
        ]);
    }
    let outputs = vec![
        writer::write_csv(out_dir, &format!("{name}.csv"), &table)?,
        writer::write_json(out_dir, &format!("{name}.json"), &rows)?,
    ];
    Ok(entry(name, "axis_range", outputs))
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct OutlierOutput {
    hp_axes: Vec<String>,
    report: variance::OutlierReport,
    flagged_labels: Vec<Vec<String>>,
}

fn outliers(
    dataset: &Dataset,
    name: &str,
    source: &GridSource,
    aggregate: &str,
    out_dir: &Path,
) -> Result<ManifestEntry> {
    let grid = source.extract(dataset)?;
    let axis = grid.factor_index(aggregate)?;
    let means = grid.means_over_axis(axis);
    let pct = variance::percent_above_best(&means)?;
    let report = variance::iqr_outliers(&pct)?;

    let hp_axes: Vec<String> = grid
        .factors()
        .iter()
        .enumerate()
        .filter(|(a, _)| *a != axis)
        .map(|(_, f)| f.name.clone())
        .collect();
    let hp_factors: Vec<&crate::grid::Factor> = grid
        .factors()
        .iter()
        .enumerate()
        .filter(|(a, _)| *a != axis)
        .map(|(_, f)| f)
        .collect();
    let labels_of = |idx: &[usize]| -> Vec<String> {
        idx.iter()
            .zip(&hp_factors)
            .map(|(&i, f)| f.levels[i].clone())
            .collect()
    };
    let flagged_labels: Vec<Vec<String>> = report.flagged.iter().map(|f| labels_of(&f.idx)).collect();

    let mut table = Table::new(&["cell", "pct_above_best", "fence"]);
    for (f, labels) in report.flagged.iter().zip(&flagged_labels) {
        table.push(vec![
            labels.join("/"),
            num(f.value),
            match f.fence {
                variance::FenceSide::Lower => "lower".to_string(),
                variance::FenceSide::Upper => "upper".to_string(),
            },
        ]);
    }
    let output = OutlierOutput {
        hp_axes,
        report,
        flagged_labels,
    };
    let outputs = vec![
        writer::write_csv(out_dir, &format!("{name}.csv"), &table)?,
        writer::write_json(out_dir, &format!("{name}.json"), &output)?,
    ];
    Ok(entry(name, "iqr_outliers", outputs))
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct DominanceRow {
    scale: String,
    #[serde(with = "crate::serde_util")]
    threshold_pct: f64,
    range_d: f64,
    range_hp: f64,
    #[serde(with = "crate::serde_util")]
    rho: f64,
    n_hp_kept: usize,
}

#[allow(clippy::too_many_arguments)]
fn dominance(
    dataset: &Dataset,
    name: &str,
    metric_text: &str,
    reducer_text: &str,
    baseline_filter: &RunFilter,
    hp_filter: Option<&RunFilter>,
    thresholds: &[f64],
    reference_d_lr: u64,
    per_scale: bool,
    range_hp_given: Option<&BTreeMap<String, f64>>,
    out_dir: &Path,
) -> Result<ManifestEntry> {
    let metric = MetricSelector::parse(metric_text)?;
    let reducer = parse_reducer(reducer_text)?;

    let baselines = baseline_filter.apply(dataset)?;
    let base_by_scale = runs_by_scale(baselines.runs());
    let hp_runs = hp_filter.map(|f| f.apply(dataset)).transpose()?;

    let scales: Vec<String> = if per_scale {
        let mut s: Vec<String> = base_by_scale.keys().cloned().collect();
        s.sort_by(|a, b| crate::ingest::level_cmp(a, b));
        s
    } else {
        vec![baselines
            .runs()
            .first()
            .map(|r| r.scale().to_string())
            .ok_or(AnalysisError::EmptySelection)?]
    };

    let mut rows = Vec::new();
    for scale in &scales {
        let Some(runs) = base_by_scale.get(scale) else { continue };
        let mut per_d: BTreeMap<u64, f64> = BTreeMap::new();
        for run in runs {
            if let Some(v) = reduce_one(run, &metric, &reducer)? {
                let slot = per_d.entry(run.d_lr()).or_insert(f64::INFINITY);
                *slot = slot.min(v);
            }
        }
        let hp_grid = match &hp_runs {
            Some(runs) => {
                let hp_scale = runs.filter(|r| r.scale() == scale);
                match extract_grid(&hp_scale, &metric, &["lambda", "eta"], &reducer) {
                    Ok(grid) => Some(grid),
                    Err(AnalysisError::EmptySelection) => None,
                    Err(e) => return Err(e.into()),
                }
            }
            None => None,
        };
        let given = range_hp_given.and_then(|m| m.get(scale).copied());
        for &t in thresholds {
            let result: DominanceResult = match (&hp_grid, given) {
                (Some(grid), _) => equivalence::dominance_ratio(&per_d, grid, t, reference_d_lr)?,
                (None, Some(range_hp)) => DominanceResult::from_ranges(
                    equivalence::range_over_data_axis(&per_d),
                    range_hp,
                    0,
                ),
                (None, None) => {
                    // No HP sweep at this scale: data range only.
                    DominanceResult::from_ranges(equivalence::range_over_data_axis(&per_d), 0.0, 0)
                }
            };
            rows.push(DominanceRow {
                scale: scale.clone(),
                threshold_pct: t,
                range_d: result.range_d,
                range_hp: result.range_hp,
                rho: result.rho,
                n_hp_kept: result.n_hp_kept,
            });
        }
    }

    let mut table = Table::new(&["scale", "threshold_pct", "range_d", "range_hp", "rho", "n_hp_kept"]);
    for r in &rows {
        table.push(vec![
            r.scale.clone(),
            num(r.threshold_pct),
            num(r.range_d),
            num(r.range_hp),
            num(r.rho),
            r.n_hp_kept.to_string(),
        ]);
    }
    let outputs = vec![
        writer::write_csv(out_dir, &format!("{name}.csv"), &table)?,
        writer::write_json(out_dir, &format!("{name}.json"), &rows)?,
    ];
    Ok(entry(name, "dominance_ratio", outputs))
}

// ---------------------------------------------------------------------------

fn heatmap(
    dataset: &Dataset,
    name: &str,
    source: &GridSource,
    cap_pct: f64,
    collapse: Option<&CollapseSpec>,
    anchor: &Option<(String, String)>,
    out_dir: &Path,
) -> Result<ManifestEntry> {
    let mut grid = source.extract(dataset)?;
    if let Some(spec) = collapse {
        let axis = grid.factor_index(&spec.axis)?;
        let take_min = match spec.how.as_str() {
            "min" => true,
            "mean" => false,
            other => {
                return Err(AnalysisError::Other(format!(
                    "collapse.how {other:?} must be mean or min"
                ))
                .into())
            }
        };
        grid = grid
            .collapse_axis(axis, take_min)
            .map_err(|e| AnalysisError::Other(e.to_string()))?;
    }
    let anchor_ref = anchor.as_ref().map(|(r, c)| (r.as_str(), c.as_str()));
    let data = writer::heatmap_data(&grid, cap_pct, anchor_ref)?;
    let outputs = vec![
        writer::write_csv(out_dir, &format!("{name}.csv"), &data.to_table())?,
        writer::write_json(out_dir, &format!("{name}.json"), &data)?,
    ];
    Ok(entry(name, "emit_heatmap_data", outputs))
}
