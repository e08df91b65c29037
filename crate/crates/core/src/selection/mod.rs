//! Advantage counting, candidate selection and the fast-slow router.

mod benchmark_eval;
mod candidates;
mod routing;
mod scorer;
mod wins;

pub use benchmark_eval::{advantage_records, branch_scores};
pub use candidates::{
    ground_truth_score, interpolate_candidates, oracle_best_of_n, CandidateSet, CANDIDATES_HEADER, DEFAULT_INTERIOR_ALPHAS,
};
pub use routing::{
    dual_route, dual_sweep, gamma_for_fast_fraction, route_table, solve_slow_cost, speedup, sweep_table, DualConfig, Path,
    RouteEntry, RoutingOutcome, TradeoffCurve, TradeoffRow, REFERENCE_SLOW_FRACTION, REFERENCE_SPEEDUP, TRADEOFF_HEADER,
};
pub use scorer::{
    meta_score, scene_tokens, scorer_loss, scorer_train, select, trajectory_input, GroundTruthScorer, ScorerConfig, ScorerHistory,
    ScorerModel, ScorerSample, SubScorePredictor, NUM_COMPONENTS, TOKEN_DIM,
};
pub use wins::{
    advantage, parse_records_csv, records_csv, significant_win, win_count, win_reports_csv, AdvantageRecord, SeedWins, Win,
    WinCountReport, REFERENCE_WIN_COUNTS,
};
