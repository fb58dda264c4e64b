//! Parsing, validation, and persistence of run-record datasets; the single
//! entry point from disk to the data model.
//!
//! Datasets are line-delimited JSON: a header line declaring the schema
//! version (plus optional proxy width and inline scale table), then one run
//! record per line:
//!
//! ```text
//! {"schema_version":1,"d_base":512,"scales":[{"name":"150M","d_model":512,"n_nonemb":23000000}]}
//! {"run_id":"mb-150m","scale":"150M","paradigm":"monolingual-basic","lambda":0.1,"eta":0.01,
//!  "d_lr":200000000,"checkpoints":[{"r":69,"val_loss":{"ar":3.372},"accuracy":{}}]}
//! ```
//!
//! The scale table may instead live in its own file, one
//! `{"name","d_model","n_nonemb"}` object per line.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AnalysisError, Error, Result, ValidationError};
use crate::grid::{Factor, GridTable};
use crate::model::{RunRecord, ScaleSpec, DEFAULT_D_BASE};

/// The schema version this build reads and writes.
pub const SCHEMA_VERSION: u64 = 1;

/// A fully validated collection of runs plus the scale table they reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    runs: Vec<RunRecord>,
    scales: BTreeMap<String, ScaleSpec>,
    schema_version: u64,
    d_base: u32,
}

impl Dataset {
    pub fn new(
        runs: Vec<RunRecord>,
        scales: BTreeMap<String, ScaleSpec>,
        schema_version: u64,
        d_base: u32,
    ) -> Result<Self, ValidationError> {
        if schema_version != SCHEMA_VERSION {
            return Err(ValidationError::UnsupportedSchema {
                found: schema_version,
                supported: SCHEMA_VERSION,
            });
        }
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, run) in runs.iter().enumerate() {
            if let Some(&first) = seen.get(run.run_id()) {
                return Err(ValidationError::DuplicateRunId {
                    id: run.run_id().to_string(),
                    first_line: first + 2,
                    second_line: i + 2,
                });
            }
            seen.insert(run.run_id(), i);
            if !scales.contains_key(run.scale()) {
                return Err(ValidationError::UnresolvedScale {
                    run_id: run.run_id().to_string(),
                    scale: run.scale().to_string(),
                });
            }
        }
        Ok(Dataset {
            runs,
            scales,
            schema_version,
            d_base,
        })
    }

    pub fn runs(&self) -> &[RunRecord] {
        &self.runs
    }

    pub fn scales(&self) -> &BTreeMap<String, ScaleSpec> {
        &self.scales
    }

    pub fn scale(&self, name: &str) -> Option<&ScaleSpec> {
        self.scales.get(name)
    }

    pub fn schema_version(&self) -> u64 {
        self.schema_version
    }

    pub fn d_base(&self) -> u32 {
        self.d_base
    }

    pub fn run(&self, run_id: &str) -> Option<&RunRecord> {
        self.runs.iter().find(|r| r.run_id() == run_id)
    }

    /// A new dataset holding only the runs matching `keep`.
    pub fn filter(&self, keep: impl Fn(&RunRecord) -> bool) -> Dataset {
        Dataset {
            runs: self.runs.iter().filter(|r| keep(r)).cloned().collect(),
            scales: self.scales.clone(),
            schema_version: self.schema_version,
            d_base: self.d_base,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    schema_version: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    d_base: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scales: Option<Vec<ScaleRow>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScaleRow {
    name: String,
    d_model: u32,
    n_nonemb: u64,
}

/// How load errors are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LoadMode {
    /// The whole load fails with the first error.
    #[default]
    Strict,
    /// Bad records are skipped and reported; useful for salvaging partial
    /// sweeps.
    Lenient,
}

/// Result of a lenient load: the salvaged dataset plus one entry per
/// rejected line.
#[derive(Debug)]
pub struct LoadReport {
    pub dataset: Dataset,
    pub rejected: Vec<ValidationError>,
}

/// Loads and validates a dataset, reading the scale table from the header
/// line (strict mode).
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let report = load_dataset_opts(path, None, LoadMode::Strict)?;
    Ok(report.dataset)
}

/// Loads a dataset with an optional external scale-table file and the given
/// error-handling mode. In strict mode `rejected` is always empty.
pub fn load_dataset_opts(
    path: impl AsRef<Path>,
    scales_path: Option<&Path>,
    mode: LoadMode,
) -> Result<LoadReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());

    let (_, header_line) = lines.next().ok_or(ValidationError::MissingHeader)?;
    let header: Header = serde_json::from_str(header_line).map_err(|e| {
        Error::from(ValidationError::Malformed {
            line: 1,
            message: format!("bad header: {e}"),
        })
    })?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(ValidationError::UnsupportedSchema {
            found: header.schema_version,
            supported: SCHEMA_VERSION,
        }
        .into());
    }
    let d_base = header.d_base.unwrap_or(DEFAULT_D_BASE);

    let mut scales: BTreeMap<String, ScaleSpec> = BTreeMap::new();
    let mut add_scale = |row: ScaleRow, line: usize| -> Result<(), ValidationError> {
        let spec = ScaleSpec::new(row.name.clone(), row.d_model, row.n_nonemb, d_base)
            .map_err(|e| ValidationError::Malformed {
                line,
                message: e.to_string(),
            })?;
        if scales.insert(row.name.clone(), spec).is_some() {
            return Err(ValidationError::Malformed {
                line,
                message: format!("duplicate scale {:?}", row.name),
            });
        }
        Ok(())
    };
    if let Some(rows) = header.scales {
        for row in rows {
            add_scale(row, 1)?;
        }
    }
    if let Some(scales_path) = scales_path {
        let text = fs::read_to_string(scales_path)
            .map_err(|e| Error::io(scales_path.display().to_string(), e))?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: ScaleRow = serde_json::from_str(line).map_err(|e| {
                Error::from(ValidationError::Malformed {
                    line: i + 1,
                    message: format!("bad scale row: {e}"),
                })
            })?;
            add_scale(row, i + 1)?;
        }
    }

    let mut runs: Vec<RunRecord> = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let mut rejected: Vec<ValidationError> = Vec::new();
    for (lineno, line) in lines {
        let lineno = lineno + 1; // 1-based
        let parsed: Result<RunRecord, ValidationError> = serde_json::from_str(line)
            .map_err(|e| ValidationError::Malformed {
                line: lineno,
                message: e.to_string(),
            });
        let run = match parsed {
            Ok(run) => run,
            Err(err) => match mode {
                LoadMode::Strict => return Err(err.into()),
                LoadMode::Lenient => {
                    rejected.push(err);
                    continue;
                }
            },
        };
        let err = if let Some(&first) = seen.get(run.run_id()) {
            Some(ValidationError::DuplicateRunId {
                id: run.run_id().to_string(),
                first_line: first,
                second_line: lineno,
            })
        } else if !scales.contains_key(run.scale()) {
            Some(ValidationError::UnresolvedScale {
                run_id: run.run_id().to_string(),
                scale: run.scale().to_string(),
            })
        } else {
            None
        };
        match (err, mode) {
            (Some(err), LoadMode::Strict) => return Err(err.into()),
            (Some(err), LoadMode::Lenient) => rejected.push(err),
            (None, _) => {
                seen.insert(run.run_id().to_string(), lineno);
                runs.push(run);
            }
        }
    }

    let dataset = Dataset {
        runs,
        scales,
        schema_version: SCHEMA_VERSION,
        d_base,
    };
    Ok(LoadReport { dataset, rejected })
}

/// Writes a dataset as header + one run per line, scale table inline.
/// `load(save(d)) == d`.
pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    let header = Header {
        schema_version: dataset.schema_version,
        d_base: Some(dataset.d_base),
        scales: Some(
            dataset
                .scales
                .values()
                .map(|s| ScaleRow {
                    name: s.name().to_string(),
                    d_model: s.d_model(),
                    n_nonemb: s.n_nonemb(),
                })
                .collect(),
        ),
    };
    out.push_str(&serde_json::to_string(&header).map_err(|e| Error::json("header", e))?);
    out.push('\n');
    for run in &dataset.runs {
        out.push_str(&serde_json::to_string(run).map_err(|e| Error::json(run.run_id(), e))?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

// ---------------------------------------------------------------------------
// Grid extraction
// ---------------------------------------------------------------------------

/// Which per-checkpoint metric a grid is built from. Metric names are
/// free-form labels of the form `val_loss.<language>` or `acc.<benchmark>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricSelector {
    ValLoss(String),
    Accuracy(String),
}

impl MetricSelector {
    pub fn parse(name: &str) -> Result<Self, AnalysisError> {
        if let Some(lang) = name.strip_prefix("val_loss.") {
            if !lang.is_empty() {
                return Ok(MetricSelector::ValLoss(lang.to_string()));
            }
        }
        if let Some(bench) = name.strip_prefix("acc.") {
            if !bench.is_empty() {
                return Ok(MetricSelector::Accuracy(bench.to_string()));
            }
        }
        Err(AnalysisError::Other(format!(
            "metric {name:?} must look like val_loss.<language> or acc.<benchmark>"
        )))
    }

    pub fn name(&self) -> String {
        match self {
            MetricSelector::ValLoss(lang) => format!("val_loss.{lang}"),
            MetricSelector::Accuracy(bench) => format!("acc.{bench}"),
        }
    }

    fn at(&self, run: &RunRecord, index: usize) -> Option<f64> {
        let ckpt = &run.checkpoints()[index];
        match self {
            MetricSelector::ValLoss(lang) => ckpt.val_loss(lang),
            MetricSelector::Accuracy(bench) => ckpt.accuracy(bench),
        }
    }
}

/// How a run's checkpoint sequence reduces to one cell value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellReducer {
    /// Best-over-checkpoints for losses.
    MinOverCheckpoints,
    /// Best-over-checkpoints for accuracies.
    MaxOverCheckpoints,
    /// Value at the checkpoint minimizing `val_loss.<language>` (earliest
    /// tie wins).
    AtMinValLoss(String),
}

/// Factor names accepted by [`extract_grid`]: `scale`, `paradigm`,
/// `lambda`, `eta`, `r_max`, `d_lr`, and the composite `hp`
/// (`lambda/eta`).
pub fn run_factor_value(run: &RunRecord, factor: &str) -> Option<String> {
    match factor {
        "scale" => Some(run.scale().to_string()),
        "paradigm" => Some(run.paradigm().as_str().to_string()),
        "lambda" => Some(format_level(run.base_hp().weight_decay())),
        "eta" => Some(format_level(run.base_hp().learning_rate())),
        "r_max" => run.r_max().map(|v| v.to_string()),
        "d_lr" => Some(run.d_lr().to_string()),
        "hp" => Some(format!(
            "{}/{}",
            format_level(run.base_hp().weight_decay()),
            format_level(run.base_hp().learning_rate())
        )),
        _ => None,
    }
}

const KNOWN_FACTORS: &[&str] = &["scale", "paradigm", "lambda", "eta", "r_max", "d_lr", "hp"];

fn format_level(v: f64) -> String {
    format!("{v}")
}

/// Sort key that orders numeric-looking labels numerically (including
/// `150M`/`2B`-style suffixes and `a/b` composites), falling back to the
/// label itself.
fn level_sort_key(label: &str) -> (Vec<Option<f64>>, String) {
    fn parse_scalar(s: &str) -> Option<f64> {
        if let Ok(v) = s.parse::<f64>() {
            return Some(v);
        }
        let (head, mult) = match s.as_bytes().last() {
            Some(b'K' | b'k') => (&s[..s.len() - 1], 1e3),
            Some(b'M' | b'm') => (&s[..s.len() - 1], 1e6),
            Some(b'B' | b'b') => (&s[..s.len() - 1], 1e9),
            _ => return None,
        };
        head.parse::<f64>().ok().map(|v| v * mult)
    }
    let parts: Vec<Option<f64>> = label.split('/').map(parse_scalar).collect();
    if parts.iter().all(|p| p.is_some()) {
        (parts, String::new())
    } else {
        (vec![], label.to_string())
    }
}

/// Orders two level labels the way factor levels are sorted: numerically
/// where both parse (including `150M`/`2B` suffixes and `a/b` composites),
/// lexically otherwise.
pub fn level_cmp(a: &str, b: &str) -> std::cmp::Ordering {
    let (ka, ta) = level_sort_key(a);
    let (kb, tb) = level_sort_key(b);
    ka.partial_cmp(&kb)
        .unwrap_or(std::cmp::Ordering::Equal)
        .then(ta.cmp(&tb))
}

fn sort_levels(levels: &mut [String]) {
    levels.sort_by(|a, b| level_cmp(a, b));
}

/// Reduces one run's checkpoint sequence to a single value; `None` when the
/// run never tracks the metric.
pub(crate) fn reduce_run_value(
    run: &RunRecord,
    metric: &MetricSelector,
    reducer: &CellReducer,
) -> Result<Option<f64>, AnalysisError> {
    let n = run.checkpoints().len();
    // Runs that never track the metric are simply not part of the
    // selection; partial coverage is a data error.
    let present: Vec<Option<f64>> = (0..n).map(|i| metric.at(run, i)).collect();
    let n_present = present.iter().filter(|v| v.is_some()).count();
    if n_present == 0 {
        return Ok(None);
    }
    if n_present < n {
        let index = present.iter().position(|v| v.is_none()).unwrap();
        return Err(AnalysisError::MetricAbsent {
            metric: metric.name(),
            index,
            run_id: run.run_id().to_string(),
        });
    }
    let values: Vec<f64> = present.into_iter().map(|v| v.unwrap()).collect();
    let value = match reducer {
        CellReducer::MinOverCheckpoints => values.iter().copied().fold(f64::INFINITY, f64::min),
        CellReducer::MaxOverCheckpoints => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        CellReducer::AtMinValLoss(lang) => {
            let loss = MetricSelector::ValLoss(lang.clone());
            let losses: Vec<Option<f64>> = (0..n).map(|i| loss.at(run, i)).collect();
            if losses.iter().all(|v| v.is_none()) {
                return Ok(None);
            }
            if let Some(index) = losses.iter().position(|v| v.is_none()) {
                return Err(AnalysisError::MetricAbsent {
                    metric: loss.name(),
                    index,
                    run_id: run.run_id().to_string(),
                });
            }
            let mut best = 0usize;
            for (i, l) in losses.iter().enumerate() {
                if l.unwrap() < losses[best].unwrap() {
                    best = i;
                }
            }
            values[best]
        }
    };
    Ok(Some(value))
}

/// Builds a [`GridTable`] over the named factors, one cell per run, missing
/// combinations left as missing cells.
///
/// Runs lacking a factor value (e.g. `r_max` on monolingual runs) or never
/// tracking the metric are excluded. Two surviving runs landing on the same
/// cell is an error naming both.
pub fn extract_grid(
    dataset: &Dataset,
    metric: &MetricSelector,
    factors: &[&str],
    reducer: &CellReducer,
) -> Result<GridTable, AnalysisError> {
    if factors.is_empty() {
        return Err(AnalysisError::Other("no factors given".into()));
    }
    for name in factors {
        if !KNOWN_FACTORS.contains(name) {
            return Err(AnalysisError::UnknownFactor {
                name: (*name).to_string(),
            });
        }
    }

    // (factor labels) -> (value, run_id)
    let mut cells: BTreeMap<Vec<String>, (f64, String)> = BTreeMap::new();
    for run in dataset.runs() {
        let labels: Option<Vec<String>> = factors
            .iter()
            .map(|f| run_factor_value(run, f))
            .collect();
        let Some(labels) = labels else { continue };
        let Some(value) = reduce_run_value(run, metric, reducer)? else {
            continue;
        };
        if let Some((_, other)) = cells.get(&labels) {
            let (a, b) = if other.as_str() < run.run_id() {
                (other.clone(), run.run_id().to_string())
            } else {
                (run.run_id().to_string(), other.clone())
            };
            return Err(AnalysisError::CellCollision {
                run_a: a,
                run_b: b,
                cell: labels,
            });
        }
        cells.insert(labels, (value, run.run_id().to_string()));
    }
    if cells.is_empty() {
        return Err(AnalysisError::EmptySelection);
    }

    let mut level_sets: Vec<std::collections::BTreeSet<String>> =
        vec![std::collections::BTreeSet::new(); factors.len()];
    for labels in cells.keys() {
        for (i, label) in labels.iter().enumerate() {
            level_sets[i].insert(label.clone());
        }
    }
    let factor_defs: Vec<Factor> = factors
        .iter()
        .zip(level_sets)
        .map(|(name, set)| {
            let mut levels: Vec<String> = set.into_iter().collect();
            sort_levels(&mut levels);
            Factor::new(*name, levels)
        })
        .collect();

    let mut grid = GridTable::new(metric.name(), factor_defs)
        .map_err(|e| AnalysisError::Other(e.to_string()))?;
    for (labels, (value, _)) in cells {
        let idx: Vec<usize> = labels
            .iter()
            .enumerate()
            .map(|(i, label)| {
                grid.factors()[i]
                    .levels
                    .iter()
                    .position(|l| l == label)
                    .expect("level present by construction")
            })
            .collect();
        grid.insert(idx, value)
            .map_err(|e| AnalysisError::Other(e.to_string()))?;
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BaseHp, CheckpointMetric, Paradigm};
    use std::collections::BTreeMap as Map;

    fn ckpt(r: f64, loss: f64, acc: Option<f64>) -> CheckpointMetric {
        let mut accuracy = Map::new();
        if let Some(acc) = acc {
            accuracy.insert("arc".to_string(), acc);
        }
        CheckpointMetric::new(r, Map::from([("ar".to_string(), loss)]), accuracy).unwrap()
    }

    fn bilingual_run(id: &str, lambda: f64, eta: f64, r_max: u32, best: f64) -> RunRecord {
        RunRecord::new(
            id,
            "150M",
            Paradigm::BilingualTuned,
            BaseHp::new(lambda, eta).unwrap(),
            Some(r_max),
            200_000_000,
            vec![
                ckpt(r_max as f64 / 2.0, best + 0.1, Some(0.31)),
                ckpt(r_max as f64, best, Some(0.30)),
            ],
        )
        .unwrap()
    }

    fn tiny_dataset(runs: Vec<RunRecord>) -> Dataset {
        let scales = Map::from([(
            "150M".to_string(),
            ScaleSpec::with_default_base("150M", 512, 23_000_000).unwrap(),
        )]);
        Dataset::new(runs, scales, SCHEMA_VERSION, 512).unwrap()
    }

    #[test]
    fn extract_min_loss_grid() {
        let ds = tiny_dataset(vec![
            bilingual_run("a", 0.1, 0.01, 10, 3.0),
            bilingual_run("b", 0.1, 0.01, 20, 2.9),
            bilingual_run("c", 1.0, 0.01, 10, 3.2),
        ]);
        let grid = extract_grid(
            &ds,
            &MetricSelector::parse("val_loss.ar").unwrap(),
            &["r_max", "hp"],
            &CellReducer::MinOverCheckpoints,
        )
        .unwrap();
        assert_eq!(grid.n_cells(), 3);
        assert_eq!(grid.factors()[0].levels, vec!["10", "20"]);
        assert_eq!(grid.factors()[1].levels, vec!["0.1/0.01", "1/0.01"]);
        assert_eq!(grid.value(&[0, 0]), Some(3.0));
        assert_eq!(grid.value(&[1, 0]), Some(2.9));
        assert_eq!(grid.value(&[0, 1]), Some(3.2));
        assert_eq!(grid.value(&[1, 1]), None);
    }

    #[test]
    fn extract_at_min_val_loss_takes_accuracy_at_best_loss_checkpoint() {
        let ds = tiny_dataset(vec![bilingual_run("a", 0.1, 0.01, 10, 3.0)]);
        let grid = extract_grid(
            &ds,
            &MetricSelector::parse("acc.arc").unwrap(),
            &["r_max"],
            &CellReducer::AtMinValLoss("ar".to_string()),
        )
        .unwrap();
        // best loss at the second checkpoint, whose accuracy is 0.30
        assert_eq!(grid.value(&[0]), Some(0.30));
    }

    #[test]
    fn extract_detects_cell_collision() {
        let ds = tiny_dataset(vec![
            bilingual_run("a", 0.1, 0.01, 10, 3.0),
            bilingual_run("b", 0.1, 0.01, 10, 2.9),
        ]);
        let err = extract_grid(
            &ds,
            &MetricSelector::parse("val_loss.ar").unwrap(),
            &["r_max", "hp"],
            &CellReducer::MinOverCheckpoints,
        )
        .unwrap_err();
        match err {
            AnalysisError::CellCollision { run_a, run_b, .. } => {
                assert_eq!((run_a.as_str(), run_b.as_str()), ("a", "b"));
            }
            other => panic!("expected collision, got {other:?}"),
        }
    }

    #[test]
    fn extract_is_independent_of_run_order() {
        let a = bilingual_run("a", 0.1, 0.01, 10, 3.0);
        let b = bilingual_run("b", 0.1, 0.01, 20, 2.9);
        let fwd = extract_grid(
            &tiny_dataset(vec![a.clone(), b.clone()]),
            &MetricSelector::parse("val_loss.ar").unwrap(),
            &["r_max"],
            &CellReducer::MinOverCheckpoints,
        )
        .unwrap();
        let rev = extract_grid(
            &tiny_dataset(vec![b, a]),
            &MetricSelector::parse("val_loss.ar").unwrap(),
            &["r_max"],
            &CellReducer::MinOverCheckpoints,
        )
        .unwrap();
        assert_eq!(fwd, rev);
    }

    fn write_lines(lines: &[&str]) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.jsonl");
        std::fs::write(&path, lines.join("\n") + "\n").unwrap();
        (dir, path)
    }

    const HEADER: &str =
        r#"{"schema_version":1,"scales":[{"name":"150M","d_model":512,"n_nonemb":23000000}]}"#;

    #[test]
    fn load_minimal_valid_file() {
        let (_dir, path) = write_lines(&[
            HEADER,
            r#"{"run_id":"a","scale":"150M","paradigm":"monolingual-basic","lambda":0.1,"eta":0.01,"d_lr":1000,"checkpoints":[{"r":1,"val_loss":{"ar":3.2},"accuracy":{}},{"r":2,"val_loss":{"ar":3.1},"accuracy":{}},{"r":3,"val_loss":{"ar":3.0},"accuracy":{}}]}"#,
        ]);
        let dataset = load_dataset(&path).unwrap();
        assert_eq!(dataset.runs().len(), 1);
        assert_eq!(dataset.runs()[0].checkpoints().len(), 3);
    }

    #[test]
    fn load_rejects_duplicate_run_id_with_both_lines() {
        let line = r#"{"run_id":"a","scale":"150M","paradigm":"monolingual-basic","lambda":0.1,"eta":0.01,"d_lr":1000,"checkpoints":[{"r":1,"val_loss":{"ar":3.0},"accuracy":{}}]}"#;
        let (_dir, path) = write_lines(&[HEADER, line, line]);
        let err = load_dataset(&path).unwrap_err();
        match err {
            crate::error::Error::Validation(ValidationError::DuplicateRunId {
                id,
                first_line,
                second_line,
            }) => {
                assert_eq!(id, "a");
                assert_eq!((first_line, second_line), (2, 3));
            }
            other => panic!("expected duplicate-id error, got {other}"),
        }
    }

    #[test]
    fn load_rejects_non_increasing_repetition_count() {
        let (_dir, path) = write_lines(&[
            HEADER,
            r#"{"run_id":"a","scale":"150M","paradigm":"monolingual-basic","lambda":0.1,"eta":0.01,"d_lr":1000,"checkpoints":[{"r":5,"val_loss":{"ar":3.0},"accuracy":{}},{"r":5,"val_loss":{"ar":2.9},"accuracy":{}}]}"#,
        ]);
        let err = load_dataset(&path).unwrap_err();
        assert!(
            err.to_string().contains("repetition_count"),
            "error should name the ordering violation, got: {err}"
        );
    }

    #[test]
    fn lenient_load_reports_and_skips_bad_records() {
        let good = r#"{"run_id":"good","scale":"150M","paradigm":"monolingual-basic","lambda":0.1,"eta":0.01,"d_lr":1000,"checkpoints":[{"r":1,"val_loss":{"ar":3.0},"accuracy":{}}]}"#;
        let bad = r#"{"run_id":"bad","scale":"nope","paradigm":"monolingual-basic","lambda":0.1,"eta":0.01,"d_lr":1000,"checkpoints":[{"r":1,"val_loss":{"ar":3.0},"accuracy":{}}]}"#;
        let (_dir, path) = write_lines(&[HEADER, good, bad]);
        let report = load_dataset_opts(&path, None, LoadMode::Lenient).unwrap();
        assert_eq!(report.dataset.runs().len(), 1);
        assert_eq!(report.rejected.len(), 1);
        assert!(matches!(
            report.rejected[0],
            ValidationError::UnresolvedScale { .. }
        ));
    }

    #[test]
    fn numeric_level_sort_handles_scale_suffixes() {
        let mut levels = vec!["2B".to_string(), "150M".to_string(), "25M".to_string(), "1.43B".to_string()];
        sort_levels(&mut levels);
        assert_eq!(levels, vec!["25M", "150M", "1.43B", "2B"]);
    }
}
