//! Analysis library for data-constrained pretraining grids.
//!
//! Ingests run records from training sweeps (model scale x weight decay x
//! learning rate x repetition budget x corpus size) and provides the full
//! analysis stack over them:
//!
//! - width-aware hyperparameter rescaling and mixing-budget algebra
//!   ([`mup`])
//! - checkpoint-selection rules and validation-loss-proxy statistics
//!   ([`selection`])
//! - two- and three-way ANOVA, Type III sums of squares on unbalanced
//!   grids, re-centering views, and IQR outlier flagging ([`variance`])
//! - landscape flatness, axis ranges, log-linear data-multiplier fits and
//!   inversion, and the data-axis dominance ratio ([`equivalence`])
//! - a seeded synthetic generator with analytically known variance
//!   structure, backing the test oracles ([`synth`])
//! - a declarative report pipeline emitting deterministic CSV/JSON bundles
//!   ([`report`])

pub mod equivalence;
pub mod error;
pub mod grid;
pub mod ingest;
pub mod model;
pub mod mup;
pub mod report;
pub(crate) mod serde_util;
pub mod selection;
pub mod synth;
pub mod variance;

pub use error::{AnalysisError, Error, Result, ValidationError};
pub use grid::{Factor, GridTable};
pub use ingest::{extract_grid, load_dataset, save_dataset, CellReducer, Dataset, MetricSelector};
pub use model::{
    BaseHp, CheckpointMetric, EffectiveHp, LogLinearFit, MetricDirection, MixBudget,
    MultiplierResult, Paradigm, ProxyStats, RunRecord, ScaleSpec, SelectionResult,
    VarianceDecomposition,
};
