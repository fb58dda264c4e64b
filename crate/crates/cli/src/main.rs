//! `gridlex`: command-line surface over the grid-analysis library.
//!
//! Exit codes: 0 success, 1 validation error (bad files or records),
//! 2 analysis error (valid data the requested analysis cannot handle).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gridlex_core::equivalence::{self, DominanceResult};
use gridlex_core::error::{AnalysisError, Error};
use gridlex_core::ingest::{self, CellReducer, Dataset, LoadMode, MetricSelector};
use gridlex_core::model::MetricDirection;
use gridlex_core::report::{self, num, Table};
use gridlex_core::selection;
use gridlex_core::variance;
use gridlex_core::{mup, synth};

/// Environment variable holding the default dataset path.
const DATASET_ENV: &str = "GRIDLEX_DATASET";

/// Per-scale `(d_lr, value)` sweeps.
type ScalePoints = Vec<(String, Vec<(u64, f64)>)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
    Json,
}

#[derive(Parser)]
#[command(name = "gridlex", version, about = "Analysis toolkit for data-constrained pretraining grids")]
struct Cli {
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

/// Dataset location plus the common run filters.
#[derive(Args, Debug, Clone)]
struct DatasetArgs {
    /// Run-record file; defaults to $GRIDLEX_DATASET.
    dataset: Option<PathBuf>,

    /// External scale-table file (one {"name","d_model","n_nonemb"} per line).
    #[arg(long)]
    scales: Option<PathBuf>,

    /// Keep only runs at this scale.
    #[arg(long)]
    scale: Option<String>,

    /// Keep only runs of these paradigms (comma-separated).
    #[arg(long, value_delimiter = ',')]
    paradigm: Vec<String>,
}

impl DatasetArgs {
    fn path(&self) -> Result<PathBuf, Error> {
        match &self.dataset {
            Some(p) => Ok(p.clone()),
            None => std::env::var_os(DATASET_ENV).map(PathBuf::from).ok_or_else(|| {
                Error::from(gridlex_core::ValidationError::field(
                    "dataset",
                    format!("no dataset given and {DATASET_ENV} is unset"),
                ))
            }),
        }
    }

    fn load(&self) -> Result<Dataset, Error> {
        let path = self.path()?;
        let loaded = ingest::load_dataset_opts(&path, self.scales.as_deref(), LoadMode::Strict)?;
        let filter = report::RunFilter {
            scale: self.scale.clone(),
            paradigm: if self.paradigm.is_empty() {
                None
            } else {
                Some(self.paradigm.clone())
            },
            r_max: None,
        };
        Ok(filter.apply(&loaded.dataset)?)
    }
}

fn parse_tau(text: &str) -> Result<f64, String> {
    if text.eq_ignore_ascii_case("inf") {
        Ok(f64::INFINITY)
    } else {
        text.parse::<f64>().map_err(|e| e.to_string())
    }
}

/// Token counts accept scientific notation (200e6).
fn parse_tokens(text: &str) -> Result<u64, String> {
    if let Ok(v) = text.parse::<u64>() {
        return Ok(v);
    }
    let v: f64 = text.parse().map_err(|e: std::num::ParseFloatError| e.to_string())?;
    if v.is_finite() && v > 0.0 && v == v.trunc() {
        Ok(v as u64)
    } else {
        Err(format!("{text:?} is not a whole positive token count"))
    }
}

/// `rmax` and `hp` are accepted as spellings of the run factors.
fn canonical_factor(name: &str) -> String {
    match name {
        "rmax" => "r_max".to_string(),
        other => other.to_string(),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a dataset, reporting the first (or, with
    /// --lenient, every) violation.
    Validate {
        #[command(flatten)]
        data: DatasetArgs,
        /// Skip bad records and list them instead of failing.
        #[arg(long)]
        lenient: bool,
    },
    /// Summarize a dataset: scales, paradigms, metrics, checkpoint counts.
    Info {
        #[command(flatten)]
        data: DatasetArgs,
    },
    /// Token budgets per scale: multiplier x n_nonemb.
    Budget {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long, default_value_t = 100)]
        multiplier: u64,
    },
    /// Mixing fraction for one budget split.
    Alpha {
        /// Total training budget in tokens.
        #[arg(long, value_parser = parse_tokens)]
        d: u64,
        /// Unique low-resource corpus size in tokens.
        #[arg(long, value_parser = parse_tokens)]
        dlr: u64,
        /// Repetition budget.
        #[arg(long)]
        rmax: u32,
    },
    /// Pick a checkpoint per run under a rule
    /// (min-vl:<language> or peak-acc:<benchmark>).
    Select {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        rule: String,
    },
    /// Validation-loss-proxy statistics, per scale plus pooled.
    ProxyStats {
        #[command(flatten)]
        data: DatasetArgs,
        /// Language of the selecting validation loss.
        #[arg(long)]
        loss: String,
        /// Benchmark accuracy the proxy is judged on.
        #[arg(long)]
        acc: String,
    },
    /// Variance decomposition over a factor grid.
    Anova {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        metric: String,
        #[arg(long, default_value = "min")]
        reducer: String,
        /// Grid factors (default r_max,hp; --three-way switches to
        /// r_max,lambda,eta).
        #[arg(long, value_delimiter = ',')]
        factors: Vec<String>,
        #[arg(long)]
        three_way: bool,
    },
    /// Threshold re-centering sweep: one decomposition per tau.
    Recenter {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        metric: String,
        #[arg(long, default_value = "min")]
        reducer: String,
        /// Thresholds in percent, ascending ("inf" allowed).
        #[arg(long, value_delimiter = ',', value_parser = parse_tau)]
        tau: Vec<f64>,
        #[arg(long, default_value = "r_max")]
        aggregate: String,
        #[arg(long)]
        three_way: bool,
    },
    /// IQR outliers over HP cells' percent-above-best means.
    Outliers {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        metric: String,
        #[arg(long, default_value = "min")]
        reducer: String,
        #[arg(long, default_value = "r_max")]
        aggregate: String,
        #[arg(long, value_delimiter = ',')]
        factors: Vec<String>,
    },
    /// HP configurations within tau percent of the best mean.
    Flatness {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        metric: String,
        #[arg(long, default_value = "min")]
        reducer: String,
        #[arg(long, value_delimiter = ',', value_parser = parse_tau)]
        tau: Vec<f64>,
        #[arg(long, default_value = "r_max")]
        aggregate: String,
        #[arg(long, value_delimiter = ',')]
        factors: Vec<String>,
    },
    /// Per-scale log-linear fits of a metric against corpus size.
    Fit {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        metric: String,
        /// min, max, or at-min-vl:<language>; defaults by metric kind.
        #[arg(long)]
        reducer: Option<String>,
        /// decreasing or increasing; defaults by metric kind.
        #[arg(long)]
        direction: Option<String>,
    },
    /// Invert per-scale baseline fits at target runs' values.
    Multiplier {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        metric: String,
        /// Target run ids (repeatable).
        #[arg(long = "target-run", required = true)]
        target_runs: Vec<String>,
        #[arg(long, value_parser = parse_tokens, default_value = "200000000")]
        reference: u64,
        /// Baseline paradigm swept over corpus sizes.
        #[arg(long, default_value = "monolingual-sweep")]
        baseline_paradigm: String,
        #[arg(long)]
        reducer: Option<String>,
        #[arg(long)]
        direction: Option<String>,
    },
    /// Data-axis dominance ratio at each threshold.
    Dominance {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        metric: String,
        #[arg(long, default_value = "min")]
        reducer: String,
        /// Thresholds in percent ("inf" allowed).
        #[arg(long = "T", visible_alias = "thresholds", value_delimiter = ',', value_parser = parse_tau)]
        thresholds: Vec<f64>,
        #[arg(long, default_value = "monolingual-sweep")]
        baseline_paradigm: String,
        /// Paradigm forming the HP sweep; without it only the data-axis
        /// range is computed and the ratio is the infinite sentinel.
        #[arg(long)]
        hp_paradigm: Option<String>,
        #[arg(long, value_parser = parse_tokens, default_value = "200000000")]
        reference_dlr: u64,
    },
    /// Generate synthetic grids or run datasets.
    Synth {
        #[command(subcommand)]
        what: SynthCommand,
    },
    /// Run a configured analysis pipeline into a report directory.
    Report {
        /// Pipeline config file (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output directory for the bundle.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Grid with analytically known variance structure; writes
    /// <out> (grid) and <out>.truth.json (expected decomposition).
    Grid {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bilingual sweep dataset in the ingest line format.
    Runs {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Analysis(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn print_table(format: Format, table: &Table) {
    let text = match format {
        Format::Text => table.to_text(),
        Format::Csv => table.to_csv(),
        Format::Json => table.to_json(),
    };
    print!("{text}");
}

fn default_reducer_for(metric: &MetricSelector) -> CellReducer {
    match metric {
        MetricSelector::ValLoss(_) => CellReducer::MinOverCheckpoints,
        MetricSelector::Accuracy(_) => CellReducer::MaxOverCheckpoints,
    }
}

fn default_direction_for(metric: &MetricSelector) -> MetricDirection {
    match metric {
        MetricSelector::ValLoss(_) => MetricDirection::Decreasing,
        MetricSelector::Accuracy(_) => MetricDirection::Increasing,
    }
}

fn parse_direction(text: &str) -> Result<MetricDirection, Error> {
    match text {
        "decreasing" => Ok(MetricDirection::Decreasing),
        "increasing" => Ok(MetricDirection::Increasing),
        other => Err(AnalysisError::Other(format!(
            "direction {other:?} must be decreasing or increasing"
        ))
        .into()),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Validate { data, lenient } => {
            let path = data.path()?;
            let mode = if lenient { LoadMode::Lenient } else { LoadMode::Strict };
            let loaded = ingest::load_dataset_opts(&path, data.scales.as_deref(), mode)?;
            println!(
                "ok: {} runs, {} scales{}",
                loaded.dataset.runs().len(),
                loaded.dataset.scales().len(),
                if loaded.rejected.is_empty() {
                    String::new()
                } else {
                    format!(", {} rejected", loaded.rejected.len())
                }
            );
            for err in &loaded.rejected {
                println!("rejected: {err}");
            }
            Ok(())
        }
        Command::Info { data } => {
            let dataset = data.load()?;
            let mut paradigms: BTreeMap<String, usize> = BTreeMap::new();
            let mut metrics: std::collections::BTreeSet<String> = Default::default();
            let mut checkpoints = 0usize;
            for run in dataset.runs() {
                *paradigms.entry(run.paradigm().to_string()).or_default() += 1;
                checkpoints += run.checkpoints().len();
                for c in run.checkpoints() {
                    for lang in c.val_losses().keys() {
                        metrics.insert(format!("val_loss.{lang}"));
                    }
                    for bench in c.accuracies().keys() {
                        metrics.insert(format!("acc.{bench}"));
                    }
                }
            }
            let mut table = Table::new(&["field", "value"]);
            table.push(vec!["schema_version".into(), dataset.schema_version().to_string()]);
            table.push(vec!["d_base".into(), dataset.d_base().to_string()]);
            table.push(vec!["runs".into(), dataset.runs().len().to_string()]);
            table.push(vec!["checkpoints".into(), checkpoints.to_string()]);
            table.push(vec![
                "scales".into(),
                dataset.scales().keys().cloned().collect::<Vec<_>>().join(" "),
            ]);
            for (p, n) in &paradigms {
                table.push(vec![format!("runs[{p}]"), n.to_string()]);
            }
            table.push(vec![
                "metrics".into(),
                metrics.into_iter().collect::<Vec<_>>().join(" "),
            ]);
            print_table(cli.format, &table);
            Ok(())
        }
        Command::Budget { data, multiplier } => {
            let dataset = data.load()?;
            let mut table = Table::new(&["scale", "d_model", "m_n", "n_nonemb", "budget_tokens"]);
            for (name, scale) in dataset.scales() {
                if let Some(only) = &data.scale {
                    if only != name {
                        continue;
                    }
                }
                table.push(vec![
                    name.clone(),
                    scale.d_model().to_string(),
                    num(scale.m_n()),
                    scale.n_nonemb().to_string(),
                    mup::token_budget(scale, multiplier).to_string(),
                ]);
            }
            print_table(cli.format, &table);
            Ok(())
        }
        Command::Alpha { d, dlr, rmax } => {
            let mix = mup::mix_budget(d, dlr, rmax);
            let mut table = Table::new(&["d", "d_lr", "r_max", "alpha", "hr_tokens", "capped"]);
            table.push(vec![
                mix.total_tokens.to_string(),
                mix.lr_corpus_tokens.to_string(),
                mix.repetition_budget.to_string(),
                num(mix.alpha),
                mix.hr_tokens.to_string(),
                mix.capped.to_string(),
            ]);
            print_table(cli.format, &table);
            Ok(())
        }
        Command::Select { data, rule } => {
            let dataset = data.load()?;
            let rule = parse_rule(&rule)?;
            let mut table = Table::new(&["run_id", "rule", "checkpoint_index", "r", "value"]);
            let mut rows: Vec<_> = Vec::new();
            for run in dataset.runs() {
                let present = run.checkpoints().iter().any(|c| match &rule {
                    selection::SelectionRule::MinValLoss(lang) => c.val_loss(lang).is_some(),
                    selection::SelectionRule::PeakAccuracy(bench) => c.accuracy(bench).is_some(),
                });
                if !present {
                    continue;
                }
                rows.push(selection::select_checkpoint(run, &rule)?);
            }
            if rows.is_empty() {
                return Err(AnalysisError::EmptySelection.into());
            }
            rows.sort_by(|a, b| a.run_id.cmp(&b.run_id));
            for r in rows {
                table.push(vec![
                    r.run_id,
                    r.rule,
                    r.checkpoint_index.to_string(),
                    num(r.r_at_selection),
                    num(r.value_at_selection),
                ]);
            }
            print_table(cli.format, &table);
            Ok(())
        }
        Command::ProxyStats { data, loss, acc } => {
            let dataset = data.load()?;
            let mut table = Table::new(&[
                "scope", "n", "pearson_r", "rmse_pct", "median_abs_gap_pct", "frac_peak_after_minvl",
            ]);
            let mut by_scale: BTreeMap<&str, Vec<gridlex_core::RunRecord>> = BTreeMap::new();
            for run in dataset.runs() {
                by_scale.entry(run.scale()).or_default().push(run.clone());
            }
            let mut scopes: Vec<(String, Vec<gridlex_core::RunRecord>)> = by_scale
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect();
            scopes.push(("pooled".to_string(), dataset.runs().to_vec()));
            let mut any = false;
            for (scope, runs) in scopes {
                match selection::proxy_stats_over_runs(&runs, &loss, &acc) {
                    Ok((stats, _)) => {
                        any = true;
                        table.push(vec![
                            scope,
                            stats.n.to_string(),
                            stats.pearson_r.map(num).unwrap_or_else(|| "undefined".into()),
                            num(stats.rmse_pct),
                            num(stats.median_abs_gap_pct),
                            num(stats.frac_peak_after_minvl),
                        ]);
                    }
                    Err(AnalysisError::TooFewValues { .. }) => continue,
                    Err(e) => return Err(e.into()),
                }
            }
            if !any {
                return Err(AnalysisError::EmptySelection.into());
            }
            print_table(cli.format, &table);
            Ok(())
        }
        Command::Anova {
            data,
            metric,
            reducer,
            factors,
            three_way,
        } => {
            let dataset = data.load()?;
            let factors: Vec<String> = if !factors.is_empty() {
                factors.iter().map(|f| canonical_factor(f)).collect()
            } else if three_way {
                vec!["r_max".into(), "lambda".into(), "eta".into()]
            } else {
                vec!["r_max".into(), "hp".into()]
            };
            let source = report::GridSource {
                metric,
                reducer,
                factors,
                filter: report::RunFilter::default(),
            };
            let grid = source.extract(&dataset)?;
            let names: Vec<String> = grid.factors().iter().map(|f| f.name.clone()).collect();
            let decomposition = match names.len() {
                2 if grid.is_balanced() => variance::anova_two_way(&grid, &names[0], &names[1])?,
                2 => variance::anova_type3(
                    &grid,
                    &[variance::ModelTerm::main(&names[0]), variance::ModelTerm::main(&names[1])],
                )?,
                3 if grid.is_balanced() => {
                    variance::anova_three_way(&grid, [&names[0], &names[1], &names[2]], true)?
                }
                3 => {
                    let mut terms: Vec<variance::ModelTerm> =
                        names.iter().map(|n| variance::ModelTerm::main(n)).collect();
                    for (i, j) in [(0usize, 1usize), (0, 2), (1, 2)] {
                        terms.push(variance::ModelTerm::interaction(&names[i], &names[j]));
                    }
                    variance::anova_type3(&grid, &terms)?
                }
                n => {
                    return Err(AnalysisError::Other(format!("anova needs 2 or 3 factors, got {n}")).into())
                }
            };
            let mut table = Table::new(&["term", "sum_of_squares", "fraction"]);
            for t in &decomposition.terms {
                table.push(vec![t.name.clone(), num(t.sum_of_squares), num(t.fraction)]);
            }
            print_table(cli.format, &table);
            if cli.format == Format::Text {
                println!(
                    "method: {}  cells: {}  ss_total: {}{}",
                    decomposition.method,
                    decomposition.n_cells,
                    num(decomposition.ss_total),
                    if decomposition.degenerate { "  (degenerate)" } else { "" }
                );
                if let Some(note) = &decomposition.note {
                    println!("note: {note}");
                }
            }
            Ok(())
        }
        Command::Recenter {
            data,
            metric,
            reducer,
            tau,
            aggregate,
            three_way,
        } => {
            let dataset = data.load()?;
            let factors = if three_way {
                vec![aggregate.clone(), "lambda".into(), "eta".into()]
            } else {
                vec![aggregate.clone(), "hp".into()]
            };
            let source = report::GridSource {
                metric,
                reducer,
                factors,
                filter: report::RunFilter::default(),
            };
            let grid = source.extract(&dataset)?;
            let decomposition = if three_way {
                variance::SweepDecomposition::ThreeWay
            } else {
                variance::SweepDecomposition::TwoWay
            };
            let entries = variance::recentering_sweep(&grid, &aggregate, &tau, decomposition)?;
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
                let mut row = vec![
                    num(e.tau_pct),
                    e.kept_hp.to_string(),
                    e.decomposition.method.to_string(),
                ];
                for t in &term_names {
                    row.push(e.decomposition.fraction(t).map(num).unwrap_or_default());
                }
                table.push(row);
            }
            print_table(cli.format, &table);
            Ok(())
        }
        Command::Outliers {
            data,
            metric,
            reducer,
            aggregate,
            factors,
        } => {
            let dataset = data.load()?;
            let factors: Vec<String> = if factors.is_empty() {
                vec![aggregate.clone(), "lambda".into(), "eta".into()]
            } else {
                factors.iter().map(|f| canonical_factor(f)).collect()
            };
            let source = report::GridSource {
                metric,
                reducer,
                factors,
                filter: report::RunFilter::default(),
            };
            let grid = source.extract(&dataset)?;
            let axis = grid.factor_index(&aggregate)?;
            let means = grid.means_over_axis(axis);
            let pct = variance::percent_above_best(&means)?;
            let rep = variance::iqr_outliers(&pct)?;
            let hp_factors: Vec<&gridlex_core::Factor> = grid
                .factors()
                .iter()
                .enumerate()
                .filter(|(a, _)| *a != axis)
                .map(|(_, f)| f)
                .collect();
            let mut table = Table::new(&["cell", "pct_above_best", "fence"]);
            for f in &rep.flagged {
                let label: Vec<String> = f
                    .idx
                    .iter()
                    .zip(&hp_factors)
                    .map(|(&i, fac)| fac.levels[i].clone())
                    .collect();
                table.push(vec![
                    label.join("/"),
                    num(f.value),
                    match f.fence {
                        variance::FenceSide::Lower => "lower".into(),
                        variance::FenceSide::Upper => "upper".into(),
                    },
                ]);
            }
            print_table(cli.format, &table);
            if cli.format == Format::Text {
                println!(
                    "q1: {}  q3: {}  iqr: {}  fences: [{}, {}]  flagged: {}/{}",
                    num(rep.q1),
                    num(rep.q3),
                    num(rep.iqr),
                    num(rep.lower_fence),
                    num(rep.upper_fence),
                    rep.flagged.len(),
                    pct.len()
                );
            }
            Ok(())
        }
        Command::Flatness {
            data,
            metric,
            reducer,
            tau,
            aggregate,
            factors,
        } => {
            let dataset = data.load()?;
            let factors: Vec<String> = if factors.is_empty() {
                vec![aggregate.clone(), "lambda".into(), "eta".into()]
            } else {
                factors.iter().map(|f| canonical_factor(f)).collect()
            };
            let source = report::GridSource {
                metric,
                reducer,
                factors,
                filter: report::RunFilter::default(),
            };
            let grid = source.extract(&dataset)?;
            let mut columns = vec!["aggregate".to_string()];
            columns.extend(tau.iter().map(|t| format!("tau_{}", num(*t))));
            columns.push("total_hp".to_string());
            let mut table = Table { columns, rows: Vec::new() };
            let mut row = vec![aggregate.clone()];
            for &t in &tau {
                row.push(equivalence::flatness_count(&grid, &aggregate, t)?.to_string());
            }
            row.push(variance::hp_cell_count(&grid, &aggregate)?.to_string());
            table.push(row);
            print_table(cli.format, &table);
            Ok(())
        }
        Command::Fit {
            data,
            metric,
            reducer,
            direction,
        } => {
            let dataset = data.load()?;
            let selector = MetricSelector::parse(&metric)?;
            let reducer = match reducer {
                Some(r) => report::parse_reducer(&r)?,
                None => default_reducer_for(&selector),
            };
            let direction = match direction {
                Some(d) => parse_direction(&d)?,
                None => default_direction_for(&selector),
            };
            let mut table = Table::new(&[
                "scale", "metric", "n_points", "a", "b", "r_squared", "domain_min", "domain_max",
            ]);
            let mut any = false;
            for (scale, points) in per_scale_points(&dataset, &selector, &reducer)? {
                let distinct: std::collections::BTreeSet<u64> =
                    points.iter().map(|(d, _)| *d).collect();
                if distinct.len() < 2 {
                    continue;
                }
                let fit = equivalence::fit_loglinear(&points, direction)?;
                any = true;
                table.push(vec![
                    scale,
                    selector.name(),
                    points.len().to_string(),
                    num(fit.slope),
                    num(fit.intercept),
                    num(fit.r_squared),
                    fit.domain_min.to_string(),
                    fit.domain_max.to_string(),
                ]);
            }
            if !any {
                return Err(AnalysisError::EmptySelection.into());
            }
            print_table(cli.format, &table);
            Ok(())
        }
        Command::Multiplier {
            data,
            metric,
            target_runs,
            reference,
            baseline_paradigm,
            reducer,
            direction,
        } => {
            let dataset = data.load()?;
            let selector = MetricSelector::parse(&metric)?;
            let reducer = match reducer {
                Some(r) => report::parse_reducer(&r)?,
                None => default_reducer_for(&selector),
            };
            let direction = match direction {
                Some(d) => parse_direction(&d)?,
                None => default_direction_for(&selector),
            };
            let baselines = dataset.filter(|r| r.paradigm().as_str() == baseline_paradigm);
            let mut table = Table::new(&[
                "target_run", "scale", "target_value", "equivalent_tokens", "multiplier",
                "extrapolated", "extrapolation_factor",
            ]);
            for run_id in &target_runs {
                let run = dataset.run(run_id).ok_or_else(|| {
                    AnalysisError::Other(format!("run {run_id:?} not in dataset"))
                })?;
                let scale_baselines = baselines.filter(|r| r.scale() == run.scale());
                let mut points = Vec::new();
                for b in scale_baselines.runs() {
                    if let Some(v) = reduce_value(b, &selector, &reducer)? {
                        points.push((b.d_lr(), v));
                    }
                }
                points.sort_by_key(|(d, _)| *d);
                let fit = equivalence::fit_loglinear(&points, direction)?;
                let target = reduce_value(run, &selector, &reducer)?.ok_or_else(|| {
                    AnalysisError::Other(format!("run {run_id:?} does not track {metric:?}"))
                })?;
                let inv = equivalence::invert_multiplier(&fit, target, reference)?;
                table.push(vec![
                    run_id.clone(),
                    run.scale().to_string(),
                    num(target),
                    num(inv.equivalent_tokens),
                    num(inv.multiplier),
                    inv.extrapolated.to_string(),
                    num(inv.extrapolation_factor),
                ]);
            }
            print_table(cli.format, &table);
            Ok(())
        }
        Command::Dominance {
            data,
            metric,
            reducer,
            thresholds,
            baseline_paradigm,
            hp_paradigm,
            reference_dlr,
        } => {
            let dataset = data.load()?;
            let selector = MetricSelector::parse(&metric)?;
            let reducer = report::parse_reducer(&reducer)?;
            let baselines = dataset.filter(|r| r.paradigm().as_str() == baseline_paradigm);
            let hp_runs = hp_paradigm
                .as_ref()
                .map(|p| dataset.filter(|r| r.paradigm().as_str() == *p));
            let mut table =
                Table::new(&["scale", "threshold_pct", "range_d", "range_hp", "rho", "n_hp_kept"]);
            for (scale, points) in per_scale_points(&baselines, &selector, &reducer)? {
                let mut per_d: BTreeMap<u64, f64> = BTreeMap::new();
                for (d, v) in points {
                    let slot = per_d.entry(d).or_insert(f64::INFINITY);
                    *slot = slot.min(v);
                }
                let hp_grid = match &hp_runs {
                    Some(runs) => {
                        let hp_scale = runs.filter(|r| r.scale() == scale);
                        match ingest::extract_grid(&hp_scale, &selector, &["lambda", "eta"], &reducer) {
                            Ok(grid) => Some(grid),
                            Err(AnalysisError::EmptySelection) => None,
                            Err(e) => return Err(e.into()),
                        }
                    }
                    None => None,
                };
                for &t in &thresholds {
                    let result: DominanceResult = match &hp_grid {
                        Some(grid) => equivalence::dominance_ratio(&per_d, grid, t, reference_dlr)?,
                        None => DominanceResult::from_ranges(
                            equivalence::range_over_data_axis(&per_d),
                            0.0,
                            0,
                        ),
                    };
                    table.push(vec![
                        scale.clone(),
                        num(t),
                        num(result.range_d),
                        num(result.range_hp),
                        num(result.rho),
                        result.n_hp_kept.to_string(),
                    ]);
                }
            }
            print_table(cli.format, &table);
            Ok(())
        }
        Command::Synth { what } => match what {
            SynthCommand::Grid { spec, out } => {
                let text = std::fs::read_to_string(&spec)
                    .map_err(|e| Error::io(spec.display().to_string(), e))?;
                let spec: synth::SynthGridSpec = serde_json::from_str(&text)
                    .map_err(|e| Error::json(spec.display().to_string(), e))?;
                let (grid, truth) = synth::gen_grid(&spec)?;
                write_json_file(&out, &grid)?;
                let truth_path = out.with_extension("truth.json");
                write_json_file(&truth_path, &truth)?;
                println!("wrote {} and {}", out.display(), truth_path.display());
                Ok(())
            }
            SynthCommand::Runs { spec, out } => {
                let text = std::fs::read_to_string(&spec)
                    .map_err(|e| Error::io(spec.display().to_string(), e))?;
                let spec: synth::SynthDatasetSpec = serde_json::from_str(&text)
                    .map_err(|e| Error::json(spec.display().to_string(), e))?;
                let dataset = synth::gen_dataset(&spec)?;
                ingest::save_dataset(&dataset, &out)?;
                println!("wrote {} ({} runs)", out.display(), dataset.runs().len());
                Ok(())
            }
        },
        Command::Report { config, out } => {
            let (config, raw) = report::load_config(&config)?;
            let entries = report::run_pipeline(&config, &raw, &out)?;
            for e in &entries {
                println!("{}: {} -> {}", e.name, e.operation, e.outputs.join(", "));
            }
            println!("manifest.json");
            Ok(())
        }
    }
}

fn parse_rule(text: &str) -> Result<selection::SelectionRule, Error> {
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
    ))
    .into())
}

fn reduce_value(
    run: &gridlex_core::RunRecord,
    metric: &MetricSelector,
    reducer: &CellReducer,
) -> Result<Option<f64>, AnalysisError> {
    // A one-run, one-factor grid gives the same semantics as extraction.
    let tracks = match metric {
        MetricSelector::ValLoss(lang) => run.checkpoints().iter().any(|c| c.val_loss(lang).is_some()),
        MetricSelector::Accuracy(bench) => {
            run.checkpoints().iter().any(|c| c.accuracy(bench).is_some())
        }
    };
    if !tracks {
        return Ok(None);
    }
    let single = Dataset::new(
        vec![run.clone()],
        BTreeMap::from([(
            run.scale().to_string(),
            gridlex_core::ScaleSpec::new(run.scale(), 1, 1, 1).expect("valid scale"),
        )]),
        ingest::SCHEMA_VERSION,
        1,
    )
    .expect("single-run dataset");
    let grid = ingest::extract_grid(&single, metric, &["d_lr"], reducer)?;
    let value = grid.cells().next().map(|(_, v)| v);
    Ok(value)
}

fn per_scale_points(
    dataset: &Dataset,
    metric: &MetricSelector,
    reducer: &CellReducer,
) -> Result<ScalePoints, Error> {
    let mut by_scale: BTreeMap<String, Vec<(u64, f64)>> = BTreeMap::new();
    for run in dataset.runs() {
        if let Some(v) = reduce_value(run, metric, reducer)? {
            by_scale.entry(run.scale().to_string()).or_default().push((run.d_lr(), v));
        }
    }
    let mut out: ScalePoints = by_scale.into_iter().collect();
    for (_, points) in &mut out {
        points.sort_by_key(|(d, _)| *d);
    }
    Ok(out)
}

fn write_json_file<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}
