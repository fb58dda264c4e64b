//! Pipeline configuration: one declarative JSON file naming a dataset and
//! the analyses to run over it.

use serde::{Deserialize, Serialize};

use crate::error::{AnalysisError, Result, ValidationError};
use crate::ingest::{CellReducer, Dataset, MetricSelector};
use crate::model::Paradigm;

/// Version of the config format itself.
pub const CONFIG_VERSION: u64 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub version: u64,
    /// Path to the run-record file; optional for bundles of pure-math
    /// analyses (budget tables from inline scales, for example, need no
    /// runs).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    /// Optional external scale-table file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scales: Option<String>,
    #[serde(default)]
    pub analyses: Vec<AnalysisSpec>,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(ValidationError::UnsupportedSchema {
                found: self.version,
                supported: CONFIG_VERSION,
            }
            .into());
        }
        let mut names = std::collections::BTreeSet::new();
        for spec in &self.analyses {
            if !names.insert(spec.name()) {
                return Err(ValidationError::field(
                    "analyses",
                    format!("duplicate analysis name {:?}", spec.name()),
                )
                .into());
            }
            if spec.needs_dataset() && self.dataset.is_none() {
                return Err(ValidationError::field(
                    "dataset",
                    format!("analysis {:?} needs a dataset", spec.name()),
                )
                .into());
            }
        }
        Ok(())
    }
}

/// A threshold in percent; deserializes from a JSON number or the string
/// `"inf"` (JSON itself cannot spell infinity).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tau(pub f64);

impl Serialize for Tau {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            serializer.serialize_str("inf")
        } else {
            serializer.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Tau {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Number(v) => Ok(Tau(v)),
            Raw::Text(s) if s.eq_ignore_ascii_case("inf") => Ok(Tau(f64::INFINITY)),
            Raw::Text(s) => Err(serde::de::Error::custom(format!(
                "threshold must be a number or \"inf\", got {s:?}"
            ))),
        }
    }
}

pub fn taus_to_f64(taus: &[Tau]) -> Vec<f64> {
    taus.iter().map(|t| t.0).collect()
}

/// Restricts an analysis to a slice of the dataset.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paradigm: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_max: Option<u32>,
}

impl RunFilter {
    pub fn apply(&self, dataset: &Dataset) -> Result<Dataset, AnalysisError> {
        let paradigms: Option<Vec<Paradigm>> = match &self.paradigm {
            None => None,
            Some(names) => Some(
                names
                    .iter()
                    .map(|n| n.parse::<Paradigm>().map_err(|e| AnalysisError::Other(e.to_string())))
                    .collect::<Result<_, _>>()?,
            ),
        };
        Ok(dataset.filter(|run| {
            if let Some(scale) = &self.scale {
                if run.scale() != scale {
                    return false;
                }
            }
            if let Some(paradigms) = &paradigms {
                if !paradigms.contains(&run.paradigm()) {
                    return false;
                }
            }
            if let Some(r_max) = self.r_max {
                if run.r_max() != Some(r_max) {
                    return false;
                }
            }
            true
        }))
    }
}

/// How checkpoints reduce to one value per run: `min`, `max`, or
/// `at-min-vl:<language>`.
pub fn parse_reducer(text: &str) -> Result<CellReducer, AnalysisError> {
    match text {
        "min" => Ok(CellReducer::MinOverCheckpoints),
        "max" => Ok(CellReducer::MaxOverCheckpoints),
        other => {
            if let Some(lang) = other.strip_prefix("at-min-vl:") {
                if !lang.is_empty() {
                    return Ok(CellReducer::AtMinValLoss(lang.to_string()));
                }
            }
            Err(AnalysisError::Other(format!(
                "reducer {other:?} must be min, max, or at-min-vl:<language>"
            )))
        }
    }
}

fn default_reducer() -> String {
    "min".to_string()
}

/// Everything needed to turn runs into a [`crate::grid::GridTable`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSource {
    pub metric: String,
    #[serde(default = "default_reducer")]
    pub reducer: String,
    pub factors: Vec<String>,
    #[serde(default)]
    pub filter: RunFilter,
}

impl GridSource {
    pub fn extract(&self, dataset: &Dataset) -> Result<crate::grid::GridTable, AnalysisError> {
        let filtered = self.filter.apply(dataset)?;
        let metric = MetricSelector::parse(&self.metric)?;
        let reducer = parse_reducer(&self.reducer)?;
        let names: Vec<&str> = self.factors.iter().map(|s| s.as_str()).collect();
        crate::ingest::extract_grid(&filtered, &metric, &names, &reducer)
    }
}

fn default_multiplier() -> u64 {
    100
}

fn default_reference_tokens() -> u64 {
    crate::equivalence::DEFAULT_REFERENCE_TOKENS
}

fn default_true() -> bool {
    true
}

fn default_cap() -> f64 {
    15.0
}

/// Pre-reduction of one grid axis before a 2-D analysis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CollapseSpec {
    pub axis: String,
    /// `mean` or `min`.
    pub how: String,
}

/// One analysis in a pipeline. `name` keys the output files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "analysis", rename_all = "snake_case")]
pub enum AnalysisSpec {
    /// Token budgets per scale: `multiplier * n_nonemb`.
    Budget {
        name: String,
        #[serde(default = "default_multiplier")]
        multiplier: u64,
    },
    /// Effective hyperparameters and mixing fraction per run.
    Hyperparameters {
        name: String,
        #[serde(default)]
        filter: RunFilter,
        #[serde(default = "default_multiplier")]
        budget_multiplier: u64,
    },
    /// Best metric value per repetition budget, with the mixing fraction
    /// each budget implies; the mixing-ratio sweep series.
    AlphaSweep {
        name: String,
        metric: String,
        #[serde(default = "default_reducer")]
        reducer: String,
        #[serde(default)]
        filter: RunFilter,
        #[serde(default = "default_multiplier")]
        budget_multiplier: u64,
    },
    /// Checkpoint selection per run under one rule
    /// (`min-vl:<lang>` or `peak-acc:<benchmark>`).
    Select {
        name: String,
        rule: String,
        #[serde(default)]
        filter: RunFilter,
    },
    /// Validation-loss-proxy statistics: per-scale rows plus a pooled row.
    ProxyStats {
        name: String,
        loss: String,
        accuracy: String,
        #[serde(default)]
        filter: RunFilter,
    },
    /// Per-scale log-linear fits of a metric against corpus size.
    Fit {
        name: String,
        metric: String,
        #[serde(default = "default_reducer")]
        reducer: String,
        direction: String,
        #[serde(default)]
        filter: RunFilter,
    },
    /// Per-scale fits inverted at target runs' values.
    Multiplier {
        name: String,
        metric: String,
        direction: String,
        #[serde(default = "default_reducer")]
        baseline_reducer: String,
        #[serde(default)]
        baseline_filter: RunFilter,
        #[serde(default = "default_reducer")]
        target_reducer: String,
        target_filter: RunFilter,
        #[serde(default = "default_reference_tokens")]
        reference_tokens: u64,
    },
    /// Variance decomposition over an extracted grid (classical when
    /// balanced, type-3 otherwise).
    Anova {
        name: String,
        #[serde(flatten)]
        source: GridSource,
        #[serde(default = "default_true")]
        interactions: bool,
    },
    /// Threshold re-centering sweep with a decomposition per threshold.
    RecenterSweep {
        name: String,
        #[serde(flatten)]
        source: GridSource,
        aggregate: String,
        thresholds: Vec<Tau>,
        #[serde(default)]
        three_way: bool,
    },
    /// HP cells within each threshold of the best mean.
    Flatness {
        name: String,
        #[serde(flatten)]
        source: GridSource,
        aggregate: String,
        thresholds: Vec<Tau>,
        /// Emit one row per scale (the filter's scale is ignored).
        #[serde(default)]
        per_scale: bool,
    },
    /// Marginal-mean ranges of two axes and the first axis's share.
    AxisRange {
        name: String,
        #[serde(flatten)]
        source: GridSource,
        axes: (String, String),
        #[serde(default)]
        per_scale: bool,
    },
    /// IQR outliers over HP cells' percent-above-best means.
    Outliers {
        name: String,
        #[serde(flatten)]
        source: GridSource,
        aggregate: String,
    },
    /// Data-axis dominance ratio at each threshold.
    Dominance {
        name: String,
        metric: String,
        #[serde(default = "default_reducer")]
        reducer: String,
        #[serde(default)]
        baseline_filter: RunFilter,
        /// Runs forming the HP sweep; omit when the dataset has none (then
        /// `range_hp` supplies the HP side).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hp_filter: Option<RunFilter>,
        thresholds: Vec<Tau>,
        #[serde(default = "default_reference_tokens")]
        reference_d_lr: u64,
        #[serde(default)]
        per_scale: bool,
        /// Externally supplied HP ranges per scale, for datasets that carry
        /// the data-axis sweep but not the HP sweep.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        range_hp: Option<std::collections::BTreeMap<String, f64>>,
    },
    /// Percent-above-best heatmap matrix of a 2-D (or collapsed) grid.
    Heatmap {
        name: String,
        #[serde(flatten)]
        source: GridSource,
        #[serde(default = "default_cap")]
        cap_pct: f64,
        /// Collapse one axis first: `{"axis": "r_max", "how": "mean"|"min"}`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        collapse: Option<CollapseSpec>,
        /// Level labels of an anchor cell to annotate (row, column).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        anchor: Option<(String, String)>,
    },
}

impl AnalysisSpec {
    pub fn name(&self) -> &str {
        match self {
            AnalysisSpec::Budget { name, .. }
            | AnalysisSpec::Hyperparameters { name, .. }
            | AnalysisSpec::AlphaSweep { name, .. }
            | AnalysisSpec::Select { name, .. }
            | AnalysisSpec::ProxyStats { name, .. }
            | AnalysisSpec::Fit { name, .. }
            | AnalysisSpec::Multiplier { name, .. }
            | AnalysisSpec::Anova { name, .. }
            | AnalysisSpec::RecenterSweep { name, .. }
            | AnalysisSpec::Flatness { name, .. }
            | AnalysisSpec::AxisRange { name, .. }
            | AnalysisSpec::Outliers { name, .. }
            | AnalysisSpec::Dominance { name, .. }
            | AnalysisSpec::Heatmap { name, .. } => name,
        }
    }

    pub fn needs_dataset(&self) -> bool {
        true // every analysis reads runs or the scale table
    }
}
