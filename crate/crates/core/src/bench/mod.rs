//! Scaling experiments: run a grid of node counts and densities on a host
//! profile, write `results.csv` and stage reports, and plot them.

mod experiment;
mod plan;
mod profiles;
mod render;

pub use experiment::{
    run_dir, run_experiment, CellMean, CellResult, CellStatus, ExperimentResult, CSV_HEADER, PLAN_JSON, RESULTS_CSV, STAGE_REPORTS,
};
pub use plan::{ExperimentPlan, StageReportScope};
pub use profiles::{reference_services, HostProfile};
pub use render::{collect_samples, fps_samples, render_report, reported_batches, ReportedBatch, PLOTS, SUMMARY_MD};
