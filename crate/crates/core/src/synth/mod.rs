//! Synthetic data with known ground truth.

mod benchmark;
mod features;

pub use benchmark::{
    gen_benchmark, BenchmarkScenario, BenchmarkSpec, FailureMode, FeatureLayout, PolicyStyle, ScenarioSet, BENCHMARK_VERSION,
    TRAJECTORY_HEADER,
};
pub use features::{gen_paired_features, GroundTruth, PlantedSpec};
