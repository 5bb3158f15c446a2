//! Hard-sample mining and re-mining for detection-based image diagnosis.
//!
//! The pipeline turns raw detector output into training-set decisions:
//!
//! 1. [`rules`] reduces per-image detections to one class (no boxes means healthy).
//! 2. [`metrics`] tallies confusion matrices and per-class recall / F1.
//! 3. [`mining`] collects false positives on healthy images as hard-samples.
//! 4. [`selection`] drops hard-sample classes whose recall fell by more than `theta`.
//! 5. [`manifest`] assembles the retraining set; [`formats`] reads and writes files.
//!
//! [`simulation`] provides a seeded synthetic detector so the whole chain can
//! be exercised without training anything, and [`pipeline`] wires it end to end.
//!
//! Metric computations are generic over [`num::Real`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`.

pub mod formats;
pub mod manifest;
pub mod metrics;
pub mod mining;
pub mod model;
pub mod num;
pub mod pipeline;
pub mod rules;
pub mod selection;
pub mod simulation;

use thiserror::Error;

pub use manifest::{build_manifest, manifest_summary, GenerationTag, TrainingManifest};
pub use metrics::{confusion, normalize_rows, recall_table, report, ConfusionMatrix};
pub use mining::{as_annotations, index_stats, mine_hard_samples, HardSampleIndex, MiningConfig};
pub use model::{
    validate_dataset, BoundingBox, ClassCatalog, Dataset, Detection, DetectionSet, ImageRecord,
    RecallTable,
};
pub use rules::{
    classify_by_detection, classify_dataset, classify_two_stage, BinaryGate, Prediction, Rule,
};
pub use selection::{
    hss_select, search_theta, theta_bounds, SearchMode, SelectionConfig, SelectionOutcome,
};
pub use simulation::{apply_degradation, simulate_detections, DegradationModel, DetectorProfile};

/// Double-precision metric report.
pub type MetricReport = metrics::MetricReport<f64>;
/// Single-precision metric report.
pub type MetricReport32 = metrics::MetricReport<f32>;
/// Double-precision per-class metrics.
pub type ClassMetrics = metrics::ClassMetrics<f64>;

/// Any failure from the library, for callers that wire several stages together.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Catalog(#[from] model::CatalogError),
    #[error(transparent)]
    Validation(#[from] model::ValidationErrors),
    #[error(transparent)]
    Coverage(#[from] model::CoverageError),
    #[error(transparent)]
    RecallTable(#[from] model::RecallTableError),
    #[error(transparent)]
    Format(#[from] formats::FormatError),
    #[error(transparent)]
    Export(#[from] formats::ExportError),
    #[error(transparent)]
    Rules(#[from] rules::RulesError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Mining(#[from] mining::MiningError),
    #[error(transparent)]
    Selection(#[from] selection::SelectionError),
    #[error(transparent)]
    Manifest(#[from] manifest::ManifestError),
    #[error(transparent)]
    Simulation(#[from] simulation::SimulationError),
}

impl Error {
    /// Whether the inputs were individually well-formed but inconsistent with
    /// each other (coverage gaps, id collisions, missing recall entries).
    pub fn is_contract_violation(&self) -> bool {
        match self {
            Error::Format(e) => e.is_coverage(),
            Error::Catalog(_) | Error::Export(_) => false,
            Error::Simulation(simulation::SimulationError::InvalidProfile(_))
            | Error::Simulation(simulation::SimulationError::InvalidDegradation(_)) => false,
            Error::Mining(mining::MiningError::InvalidFloor(_)) => false,
            _ => true,
        }
    }
}
