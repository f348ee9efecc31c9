//! Metrics, model-free baselines and study harnesses.

mod baselines;
mod doop;
mod fps;
mod metrics;
mod probe;
mod report;
mod scores;

pub use baselines::{copy_baselines_keypoint, copy_baselines_pixel, positions, present_slots, CopyScores};
pub use doop::{doop_impact, DoopBin, DoopRecord, DoopReport};
pub use fps::{fps_csv, fps_study, FpsRow};
pub use metrics::{
    frame_psnr, l_psnr, min_cost_assignment, mot_metrics, position_mse, psnr, MotResult,
    MATCH_RADIUS, PSNR_CAP,
};
pub use probe::{confounder_probe, probe_accuracy, ProbeComparison, ProbeConfig, ProbeScores};
pub use scores::{keypoint_scores, KeypointScores};
pub use report::{evaluate, evaluate_experiment, Aggregate, ExperimentMetrics, MetricsReport, MASK_THRESH};
