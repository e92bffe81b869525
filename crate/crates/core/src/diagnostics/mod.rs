//! Experiment harnesses for the objective-mismatch studies.

mod babble;
mod epoch;
mod goals;
mod heatmap;
mod pets;
mod plans;
mod plot;
mod stats;
mod store;
mod sweep;

pub use babble::{babble_study, write_babble_csv, BabbleConfig, BabbleCurve};
pub use epoch::{epoch_reward_curve, write_epoch_csv, EpochCurveConfig, EpochRow};
pub use goals::{
    goal_generalization, mean_reward_at, write_goal_csv, write_histogram_csv, GoalConfig, GoalResult, GoalRow, XHistogram,
};
pub use heatmap::{log_grid, reweight_heatmap, write_heatmap_csv, HeatmapCell, HeatmapConfig};
pub use pets::{
    initial_dataset, model_id, run_pets, run_pets_seeds, write_records_csv, ExperimentRecord, InitialData, PetsConfig,
    PetsRun, HOLDOUT,
};
pub use plans::{compare_plans, write_plans_csv, PlanComparison};
pub use plot::{heatmap_svg, lines_svg, plot_csv, scatter_svg};
pub use stats::{argmin, first_exceeding, mean, median, pearson};
pub use store::{blob_sha1, config_hash, fmt_f64, write_csv, write_json, write_run_metadata, InputHash, Manifest, RecordStore};
pub use sweep::{
    correlation, ll_reward_sweep, ll_summary, write_correlation_csv, write_sweep_csv, CheckpointRef, CorrelationReport,
    EvalConfig, LlSummary, SweepConfig, SweepRecord, SweepResult,
};
