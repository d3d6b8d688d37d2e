//! Evaluation harness: datasets, baseline and adaptive runs, routing and
//! quality metrics, and report emission.

pub mod dataset;
pub mod metrics;
pub mod quality;
pub mod report;
pub mod runner;

pub use dataset::{generate_dataset, load_dataset, DatasetError, DatasetItem};
pub use metrics::{metrics_from_confusion, routing_metrics, ConfusionMatrix, RoutingMetrics};
pub use quality::{greedy_f1, quality_score};
pub use report::{build_report, emit_report, MetricsReport};
pub use runner::{run_eval, EvalRun, EvalSetup};
