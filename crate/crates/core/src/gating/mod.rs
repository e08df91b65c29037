//! Representation-only gates built on the shared/unique autoencoder.

mod evaluate;
mod learned;
mod rules;

pub use evaluate::{
    decisions_csv, gate_evaluate, parse_decisions_csv, threshold_sweep, BranchScores, GateEvaluation, GateSweepReport,
    SweepCellResult, DEFAULT_TAUS,
};
pub use learned::{gate_inputs, learned_gate_predict, learned_gate_train, GateInput, GateModel, GateTrainConfig};
pub use rules::{
    energy_decomposition, indicators, rule_decisions, rule_score, BranchIndicators, Choice, GateConfig, GateDecision, GateFeatures,
    GateIndicators, Strategy,
};
