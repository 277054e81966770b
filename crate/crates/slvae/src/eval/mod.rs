//! Metrics, the label-propagation baseline, the repeated-trial harness and
//! the runtime scaling timer.

mod experiment;
mod lpsi;
mod metrics;
mod scaling;

pub use experiment::{
    draw_test_case, evaluate_cases, run_experiment, run_experiment_on, train_models, ExperimentReport,
    ExperimentSpec, Method, MetricsReport, ModelCache, ScoreDump, TestCase, TrainedModels, TrialFailure,
    TrialMetrics,
};
pub use lpsi::{lpsi_baseline, LpsiConfig, LpsiOutput};
pub use metrics::{precision_recall_f1, roc_auc, Stat};
pub use scaling::{time_scaling, ScalingRow};
