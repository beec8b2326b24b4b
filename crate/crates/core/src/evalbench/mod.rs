//! Benchmark cases, tracking and step-response metrics, controller
//! comparison tables and the training-strategy ablation.

mod ablation;
mod cases;
mod compare;
mod metrics;
mod trace;

pub use ablation::{run_ablation, AblationRow, AblationTable};
pub use cases::{case_report, run_scenario, run_test_case, CaseResult, Scenario, TestCase};
pub use compare::{compare_controllers, improvement_pct, ComparisonTable};
pub use metrics::{
    aggregate_step, section_tension_error, step_metrics, tracking_metrics, MetricsReport,
    StepMetricConfig, StepMetrics, StepReport,
};
pub use trace::{run_episode, Controller, EpisodeTrace, LONG_CSV_HEADER};
