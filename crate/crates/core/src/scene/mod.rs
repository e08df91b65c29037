//! Simplified driving scenes and the PDMS / EPDMS metric stack.

pub mod geometry;
mod io;
mod kernels;
mod metrics;
mod types;

pub use io::{load_scene, parse_scores_csv, scene_from_json, scene_to_json, scores_csv, ScoreRow, SCENE_VERSION, SCORES_HEADER};
pub use kernels::{compute_subscores, KernelConfig};
pub use metrics::{epdms, epdms_filter, epdms_two_stage, mean_speed, pdms, KernelScales, StartState, TwoStageScore};
pub use types::{Agent, EgoState, MetricVersion, MetricWeights, Scene, SubScores, Trajectory, METRIC_WEIGHTS};
