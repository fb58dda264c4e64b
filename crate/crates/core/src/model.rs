//! Domain types shared by every analysis.
//!
//! Constructors validate invariants and reject violations with a
//! [`ValidationError`] naming the failing field. All types are immutable
//! after construction and safe to share across threads.
//!
//! Losses are stored in nats throughout; token counts are integers; derived
//! fractions are 64-bit floats.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ValidationError;

/// Default proxy width the width multiplier is measured against.
pub const DEFAULT_D_BASE: u32 = 512;

fn ensure(cond: bool, field: &'static str, reason: impl Into<String>) -> Result<(), ValidationError> {
    if cond {
        Ok(())
    } else {
        Err(ValidationError::field(field, reason))
    }
}

// ---------------------------------------------------------------------------
// ScaleSpec
// ---------------------------------------------------------------------------

/// One model scale: a name, its hidden width, and its non-embedding
/// parameter count. The width multiplier `m_N = d_model / d_base` drives
/// hyperparameter rescaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScaleSpec", into = "RawScaleSpec")]
pub struct ScaleSpec {
    name: String,
    d_model: u32,
    n_nonemb: u64,
    d_base: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawScaleSpec {
    name: String,
    d_model: u32,
    n_nonemb: u64,
    #[serde(default = "default_d_base")]
    d_base: u32,
}

fn default_d_base() -> u32 {
    DEFAULT_D_BASE
}

impl TryFrom<RawScaleSpec> for ScaleSpec {
    type Error = ValidationError;
    fn try_from(raw: RawScaleSpec) -> Result<Self, Self::Error> {
        ScaleSpec::new(raw.name, raw.d_model, raw.n_nonemb, raw.d_base)
    }
}

impl From<ScaleSpec> for RawScaleSpec {
    fn from(s: ScaleSpec) -> Self {
        RawScaleSpec {
            name: s.name,
            d_model: s.d_model,
            n_nonemb: s.n_nonemb,
            d_base: s.d_base,
        }
    }
}

impl ScaleSpec {
    pub fn new(
        name: impl Into<String>,
        d_model: u32,
        n_nonemb: u64,
        d_base: u32,
    ) -> Result<Self, ValidationError> {
        let name = name.into();
        ensure(!name.is_empty(), "name", "must be non-empty")?;
        ensure(d_model > 0, "d_model", "must be positive")?;
        ensure(n_nonemb > 0, "n_nonemb", "must be positive")?;
        ensure(d_base > 0, "d_base", "must be positive")?;
        ensure(
            d_model >= d_base,
            "d_model",
            format!("width {d_model} below proxy width {d_base}; m_N must be >= 1"),
        )?;
        Ok(ScaleSpec {
            name,
            d_model,
            n_nonemb,
            d_base,
        })
    }

    /// Convenience constructor at the default proxy width.
    pub fn with_default_base(
        name: impl Into<String>,
        d_model: u32,
        n_nonemb: u64,
    ) -> Result<Self, ValidationError> {
        Self::new(name, d_model, n_nonemb, DEFAULT_D_BASE)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn d_model(&self) -> u32 {
        self.d_model
    }

    pub fn n_nonemb(&self) -> u64 {
        self.n_nonemb
    }

    pub fn d_base(&self) -> u32 {
        self.d_base
    }

    /// Width multiplier `m_N = d_model / d_base`.
    pub fn m_n(&self) -> f64 {
        f64::from(self.d_model) / f64::from(self.d_base)
    }
}

// ---------------------------------------------------------------------------
// Hyperparameters
// ---------------------------------------------------------------------------

/// Base (pre-rescale) weight decay and learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBaseHp", into = "RawBaseHp")]
pub struct BaseHp {
    weight_decay: f64,
    learning_rate: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct RawBaseHp {
    weight_decay: f64,
    learning_rate: f64,
}

impl TryFrom<RawBaseHp> for BaseHp {
    type Error = ValidationError;
    fn try_from(raw: RawBaseHp) -> Result<Self, Self::Error> {
        BaseHp::new(raw.weight_decay, raw.learning_rate)
    }
}

impl From<BaseHp> for RawBaseHp {
    fn from(hp: BaseHp) -> Self {
        RawBaseHp {
            weight_decay: hp.weight_decay,
            learning_rate: hp.learning_rate,
        }
    }
}

impl BaseHp {
    pub fn new(weight_decay: f64, learning_rate: f64) -> Result<Self, ValidationError> {
        ensure(
            weight_decay.is_finite() && weight_decay >= 0.0,
            "weight_decay",
            "must be finite and >= 0",
        )?;
        ensure(
            learning_rate.is_finite() && learning_rate > 0.0,
            "learning_rate",
            "must be finite and > 0",
        )?;
        Ok(BaseHp {
            weight_decay,
            learning_rate,
        })
    }

    pub fn weight_decay(&self) -> f64 {
        self.weight_decay
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }
}

/// Effective hyperparameters after width rescaling. Produced only by
/// [`crate::mup::rescale_hp`]; there is no public constructor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveHp {
    pub weight_decay: f64,
    pub learning_rate: f64,
}

impl EffectiveHp {
    pub(crate) fn from_rescale(weight_decay: f64, learning_rate: f64) -> Self {
        EffectiveHp {
            weight_decay,
            learning_rate,
        }
    }
}

// ---------------------------------------------------------------------------
// MixBudget
// ---------------------------------------------------------------------------

/// How a total token budget splits between a repeated low-resource corpus
/// and fresh high-resource data. Produced by [`crate::mup::mix_budget`].
///
/// When the requested repetitions exceed the budget (`R_max * D_LR > D`),
/// the mix is capped: the whole budget is low-resource, `alpha = 1`, and
/// `capped` is set rather than rejecting the input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixBudget {
    pub total_tokens: u64,
    pub lr_corpus_tokens: u64,
    pub repetition_budget: u32,
    pub alpha: f64,
    pub hr_tokens: u64,
    pub capped: bool,
}

// ---------------------------------------------------------------------------
// Checkpoints and runs
// ---------------------------------------------------------------------------

/// One checkpoint of one run: how many times the unique corpus has been
/// consumed so far, plus per-language validation losses (nats) and
/// per-benchmark accuracies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCheckpoint", into = "RawCheckpoint")]
pub struct CheckpointMetric {
    repetition_count: f64,
    val_loss: BTreeMap<String, f64>,
    accuracy: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawCheckpoint {
    r: f64,
    #[serde(default)]
    val_loss: BTreeMap<String, f64>,
    #[serde(default)]
    accuracy: BTreeMap<String, f64>,
}

impl TryFrom<RawCheckpoint> for CheckpointMetric {
    type Error = ValidationError;
    fn try_from(raw: RawCheckpoint) -> Result<Self, Self::Error> {
        CheckpointMetric::new(raw.r, raw.val_loss, raw.accuracy)
    }
}

impl From<CheckpointMetric> for RawCheckpoint {
    fn from(c: CheckpointMetric) -> Self {
        RawCheckpoint {
            r: c.repetition_count,
            val_loss: c.val_loss,
            accuracy: c.accuracy,
        }
    }
}

impl CheckpointMetric {
    pub fn new(
        repetition_count: f64,
        val_loss: BTreeMap<String, f64>,
        accuracy: BTreeMap<String, f64>,
    ) -> Result<Self, ValidationError> {
        ensure(
            repetition_count.is_finite() && repetition_count > 0.0,
            "repetition_count",
            "must be finite and > 0",
        )?;
        for (lang, loss) in &val_loss {
            ensure(
                loss.is_finite() && *loss >= 0.0,
                "val_loss",
                format!("loss for {lang:?} must be finite and >= 0, got {loss}"),
            )?;
        }
        for (bench, acc) in &accuracy {
            ensure(
                acc.is_finite() && (0.0..=1.0).contains(acc),
                "accuracy",
                format!("accuracy for {bench:?} must lie in [0, 1], got {acc}"),
            )?;
        }
        Ok(CheckpointMetric {
            repetition_count,
            val_loss,
            accuracy,
        })
    }

    pub fn repetition_count(&self) -> f64 {
        self.repetition_count
    }

    pub fn val_loss(&self, language: &str) -> Option<f64> {
        self.val_loss.get(language).copied()
    }

    pub fn accuracy(&self, benchmark: &str) -> Option<f64> {
        self.accuracy.get(benchmark).copied()
    }

    pub fn val_losses(&self) -> &BTreeMap<String, f64> {
        &self.val_loss
    }

    pub fn accuracies(&self) -> &BTreeMap<String, f64> {
        &self.accuracy
    }
}

/// The data/tuning strategy a run belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Paradigm {
    #[serde(rename = "monolingual-basic")]
    MonolingualBasic,
    #[serde(rename = "monolingual-tuned")]
    MonolingualTuned,
    #[serde(rename = "bilingual-basic")]
    BilingualBasic,
    #[serde(rename = "bilingual-tuned")]
    BilingualTuned,
    #[serde(rename = "monolingual-sweep")]
    MonolingualSweep,
}

impl Paradigm {
    pub fn is_bilingual(&self) -> bool {
        matches!(self, Paradigm::BilingualBasic | Paradigm::BilingualTuned)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Paradigm::MonolingualBasic => "monolingual-basic",
            Paradigm::MonolingualTuned => "monolingual-tuned",
            Paradigm::BilingualBasic => "bilingual-basic",
            Paradigm::BilingualTuned => "bilingual-tuned",
            Paradigm::MonolingualSweep => "monolingual-sweep",
        }
    }
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Paradigm {
    type Err = ValidationError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "monolingual-basic" => Ok(Paradigm::MonolingualBasic),
            "monolingual-tuned" => Ok(Paradigm::MonolingualTuned),
            "bilingual-basic" => Ok(Paradigm::BilingualBasic),
            "bilingual-tuned" => Ok(Paradigm::BilingualTuned),
            "monolingual-sweep" => Ok(Paradigm::MonolingualSweep),
            other => Err(ValidationError::field(
                "paradigm",
                format!("unknown paradigm {other:?}"),
            )),
        }
    }
}

/// One training run: its scale, paradigm, base hyperparameters, repetition
/// budget (bilingual only), unique target-corpus size, and an ordered
/// checkpoint sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRunRecord", into = "RawRunRecord")]
pub struct RunRecord {
    run_id: String,
    scale: String,
    paradigm: Paradigm,
    base_hp: BaseHp,
    r_max: Option<u32>,
    d_lr: u64,
    checkpoints: Vec<CheckpointMetric>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawRunRecord {
    run_id: String,
    scale: String,
    paradigm: Paradigm,
    lambda: f64,
    eta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    r_max: Option<u32>,
    d_lr: u64,
    checkpoints: Vec<CheckpointMetric>,
}

impl TryFrom<RawRunRecord> for RunRecord {
    type Error = ValidationError;
    fn try_from(raw: RawRunRecord) -> Result<Self, Self::Error> {
        RunRecord::new(
            raw.run_id,
            raw.scale,
            raw.paradigm,
            BaseHp::new(raw.lambda, raw.eta)?,
            raw.r_max,
            raw.d_lr,
            raw.checkpoints,
        )
    }
}

impl From<RunRecord> for RawRunRecord {
    fn from(r: RunRecord) -> Self {
        RawRunRecord {
            run_id: r.run_id,
            scale: r.scale,
            paradigm: r.paradigm,
            lambda: r.base_hp.weight_decay(),
            eta: r.base_hp.learning_rate(),
            r_max: r.r_max,
            d_lr: r.d_lr,
            checkpoints: r.checkpoints,
        }
    }
}

impl RunRecord {
    pub fn new(
        run_id: impl Into<String>,
        scale: impl Into<String>,
        paradigm: Paradigm,
        base_hp: BaseHp,
        r_max: Option<u32>,
        d_lr: u64,
        checkpoints: Vec<CheckpointMetric>,
    ) -> Result<Self, ValidationError> {
        let run_id = run_id.into();
        let scale = scale.into();
        ensure(!run_id.is_empty(), "run_id", "must be non-empty")?;
        ensure(!scale.is_empty(), "scale", "must be non-empty")?;
        ensure(d_lr > 0, "d_lr", "must be positive")?;
        ensure(!checkpoints.is_empty(), "checkpoints", "must be non-empty")?;
        match (paradigm.is_bilingual(), r_max) {
            (true, None) => {
                return Err(ValidationError::field(
                    "r_max",
                    format!("required for paradigm {paradigm}"),
                ))
            }
            (false, Some(_)) => {
                return Err(ValidationError::field(
                    "r_max",
                    format!("must be absent for paradigm {paradigm}"),
                ))
            }
            _ => {}
        }
        if let Some(r_max) = r_max {
            ensure(r_max > 0, "r_max", "must be positive")?;
        }
        for pair in checkpoints.windows(2) {
            if pair[1].repetition_count() <= pair[0].repetition_count() {
                return Err(ValidationError::field(
                    "repetition_count",
                    format!(
                        "non-increasing repetition_count: {} then {}",
                        pair[0].repetition_count(),
                        pair[1].repetition_count()
                    ),
                ));
            }
        }
        Ok(RunRecord {
            run_id,
            scale,
            paradigm,
            base_hp,
            r_max,
            d_lr,
            checkpoints,
        })
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn scale(&self) -> &str {
        &self.scale
    }

    pub fn paradigm(&self) -> Paradigm {
        self.paradigm
    }

    pub fn base_hp(&self) -> BaseHp {
        self.base_hp
    }

    pub fn r_max(&self) -> Option<u32> {
        self.r_max
    }

    pub fn d_lr(&self) -> u64 {
        self.d_lr
    }

    pub fn checkpoints(&self) -> &[CheckpointMetric] {
        &self.checkpoints
    }
}

// ---------------------------------------------------------------------------
// Analysis result records
// ---------------------------------------------------------------------------

/// How a variance decomposition was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecompositionMethod {
    #[serde(rename = "classical-balanced")]
    ClassicalBalanced,
    #[serde(rename = "type3-regression")]
    Type3Regression,
}

impl fmt::Display for DecompositionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecompositionMethod::ClassicalBalanced => f.write_str("classical-balanced"),
            DecompositionMethod::Type3Regression => f.write_str("type3-regression"),
        }
    }
}

/// One named term of a variance decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceTerm {
    pub name: String,
    pub sum_of_squares: f64,
    pub fraction: f64,
}

/// Named sums of squares and variance fractions over a grid.
///
/// `ss_total` is the sum of all reported terms (for the classical methods
/// this equals the total corrected sum of squares; for type-3 fits on
/// unbalanced designs it may not, in which case `note` says so).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceDecomposition {
    pub terms: Vec<VarianceTerm>,
    pub ss_total: f64,
    pub method: DecompositionMethod,
    pub n_cells: usize,
    /// Set when `ss_total` is zero and fractions are reported as 0.
    pub degenerate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl VarianceDecomposition {
    pub fn fraction(&self, term: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.name == term).map(|t| t.fraction)
    }

    pub fn sum_of_squares(&self, term: &str) -> Option<f64> {
        self.terms
            .iter()
            .find(|t| t.name == term)
            .map(|t| t.sum_of_squares)
    }
}

/// Whether a fitted metric should fall or rise with more data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricDirection {
    #[serde(rename = "decreasing")]
    Decreasing,
    #[serde(rename = "increasing")]
    Increasing,
}

/// Coefficients of `y = a * ln(D) + b` over a fitted token range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub domain_min: u64,
    pub domain_max: u64,
    pub metric_direction: MetricDirection,
    /// Set when the fitted slope disagrees with `metric_direction`.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub direction_violated: bool,
}

impl LogLinearFit {
    /// Evaluate the fitted line at `tokens`.
    pub fn evaluate(&self, tokens: f64) -> f64 {
        self.slope * tokens.ln() + self.intercept
    }
}

/// Result of inverting a log-linear fit at a target metric value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierResult {
    pub equivalent_tokens: f64,
    pub multiplier: f64,
    pub reference_tokens: u64,
    pub extrapolated: bool,
    /// How far outside the fitted domain the inversion landed
    /// (`equivalent_tokens / domain_max` above the range,
    /// `domain_min / equivalent_tokens` below it, 1 inside).
    pub extrapolation_factor: f64,
}

/// The checkpoint a selection rule picked for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub run_id: String,
    pub rule: String,
    pub checkpoint_index: usize,
    pub r_at_selection: f64,
    pub value_at_selection: f64,
}

/// Aggregate statistics for validation loss as a checkpoint-selection proxy.
///
/// `pearson_r` is `None` when either coordinate has zero variance. Gap
/// statistics are expressed in percentage points (accuracy * 100).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyStats {
    pub pearson_r: Option<f64>,
    pub rmse_pct: f64,
    pub median_abs_gap_pct: f64,
    pub n: usize,
    pub frac_peak_after_minvl: f64,
}
