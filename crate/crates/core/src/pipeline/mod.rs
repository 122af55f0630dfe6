//! The two-stage framework: training, routing, evaluation, comparison and persistence.

mod artifact;
mod compare;
mod enrich;
mod evaluate;
mod framework;

pub use artifact::{from_bytes, load_model, save_model, to_bytes, FORMAT_VERSION, MAGIC};
pub use compare::{
    compare_frameworks, ClusterDiagnostics, ComparisonReport, ComparisonRow, EvalSplit, Framework, MIN_CLUSTER_ROWS,
    SCAN_KS, SILHOUETTE_SAMPLE,
};
pub use enrich::{measure_bucket, EnrichmentRow, EnrichmentTable, RoadAttributes, DEFAULT_ROUTE, MEASURE_BUCKET};
pub use evaluate::{evaluate_framework, BandErrors, EvaluationReport};
pub use framework::{
    predict_incident, train_framework, BandModel, FrameworkConfig, FrameworkModel, PhaseModel, Prediction, Preprocessor,
    RegressorSpec, TrainingSummary, MIN_PREDICTED_MINUTES, MIN_TRAINING_RECORDS, MODEL_VERSION,
};
