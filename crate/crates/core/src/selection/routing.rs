//! Fast-slow router: run the fast policy, score it, and call the slow policy
//! plus candidate selection only when the predicted score is below gamma.

use serde::{Deserialize, Serialize};

use super::candidates::{ground_truth_score, interpolate_candidates, DEFAULT_INTERIOR_ALPHAS};
use super::scorer::{meta_score, select, SubScorePredictor};
use crate::error::{Error, Result};
use crate::scene::{KernelConfig, MetricVersion, Scene, Trajectory};
use crate::synth::ScenarioSet;
use crate::table::{fmt_f64, Csv};

/// Fraction of scenarios sent down the slow path at the reference point.
pub const REFERENCE_SLOW_FRACTION: f64 = 0.15;
/// Throughput gain over always-slow at the reference point.
pub const REFERENCE_SPEEDUP: f64 = 3.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DualConfig {
    /// Values above 1 force the slow path.
    pub gamma: f64,
    pub cost_fast: f64,
    pub cost_slow: f64,
    pub cost_score: f64,
    pub cost_select: f64,
}

impl Default for DualConfig {
    fn default() -> Self {
        let (cost_fast, cost_score, cost_select) = (1.0, 0.05, 0.05);
        DualConfig {
            gamma: 0.9,
            cost_fast,
            cost_slow: solve_slow_cost(cost_fast, cost_score, cost_select, REFERENCE_SLOW_FRACTION, REFERENCE_SPEEDUP)
                .expect("reference cost model is feasible"),
            cost_score,
            cost_select,
        }
    }
}

impl DualConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("cost_fast", self.cost_fast),
            ("cost_slow", self.cost_slow),
            ("cost_score", self.cost_score),
            ("cost_select", self.cost_select),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::InvalidArgument(format!("gamma must be finite and >= 0, got {}", self.gamma)));
        }
        Ok(())
    }

    pub fn fast_path_cost(&self) -> f64 {
        self.cost_fast + self.cost_score
    }

    pub fn slow_path_cost(&self) -> f64 {
        self.cost_fast + self.cost_score + self.cost_slow + self.cost_select
    }
}

/// Slow-call cost that makes the router `speedup` times cheaper than calling
/// the slow policy on every scenario, given the slow-path fraction.
pub fn solve_slow_cost(cost_fast: f64, cost_score: f64, cost_select: f64, slow_fraction: f64, speedup: f64) -> Result<f64> {
    let denom = 1.0 - speedup * slow_fraction;
    if !(denom > 0.0) || !(0.0..=1.0).contains(&slow_fraction) || !(speedup > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "no positive slow cost gives speedup {speedup} at slow fraction {slow_fraction}"
        )));
    }
    Ok(speedup * (cost_fast + cost_score + slow_fraction * cost_select) / denom)
}

/// Always-slow cost over total router cost.
pub fn speedup(n: usize, total_cost: f64, cfg: &DualConfig) -> f64 {
    n as f64 * cfg.cost_slow / total_cost
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Path {
    Fast,
    Slow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingOutcome {
    pub path: Path,
    pub trajectory: Trajectory,
    pub fast_meta: f64,
    /// Interpolation weight of the chosen candidate; 1 is the fast trajectory.
    pub alpha: f64,
    pub cost: f64,
}

pub fn dual_route<P, F>(scene: &Scene, fast: &Trajectory, slow_provider: F, scorer: &P, cfg: &DualConfig) -> Result<RoutingOutcome>
where
    P: SubScorePredictor + ?Sized,
    F: FnOnce() -> Result<Trajectory>,
{
    cfg.validate()?;
    let fast_meta = meta_score(&scorer.predict(fast, scene)?);
    if fast_meta >= cfg.gamma {
        return Ok(RoutingOutcome {
            path: Path::Fast,
            trajectory: fast.clone(),
            fast_meta,
            alpha: 1.0,
            cost: cfg.fast_path_cost(),
        });
    }
    let slow = slow_provider()?;
    let c = interpolate_candidates(fast, &slow, &DEFAULT_INTERIOR_ALPHAS)?;
    let (i, _) = select(&c, scorer, scene)?;
    Ok(RoutingOutcome {
        path: Path::Slow,
        trajectory: c.trajectories[i].clone(),
        fast_meta,
        alpha: c.alphas[i],
        cost: cfg.slow_path_cost(),
    })
}

/// Per-scenario quantities that do not depend on gamma.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteEntry {
    pub scenario_id: String,
    pub fast_meta: f64,
    pub fast_score: f64,
    pub slow_path_score: f64,
    pub slow_path_alpha: f64,
}

impl RouteEntry {
    pub fn fast_path(&self, gamma: f64) -> bool {
        self.fast_meta >= gamma
    }

    pub fn realized(&self, gamma: f64) -> f64 {
        if self.fast_path(gamma) {
            self.fast_score
        } else {
            self.slow_path_score
        }
    }
}

/// Scores the fast path and the slow path once per scenario.
pub fn route_table<P: SubScorePredictor + ?Sized>(
    set: &ScenarioSet,
    seed_index: usize,
    scorer: &P,
    version: MetricVersion,
    kernel: &KernelConfig,
) -> Result<Vec<RouteEntry>> {
    let mut out = Vec::with_capacity(set.scenarios.len());
    for sc in &set.scenarios {
        let (fast, slow) = match (sc.fast.get(seed_index), sc.slow.get(seed_index)) {
            (Some(f), Some(s)) => (f, s),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "seed index {seed_index} out of range for scenario {}",
                    sc.id
                )))
            }
        };
        let fast_meta = meta_score(&scorer.predict(fast, &sc.scene)?);
        let c = interpolate_candidates(fast, slow, &DEFAULT_INTERIOR_ALPHAS)?;
        let (i, _) = select(&c, scorer, &sc.scene)?;
        out.push(RouteEntry {
            scenario_id: sc.id.clone(),
            fast_meta,
            fast_score: ground_truth_score(fast, &sc.scene, version, kernel)?,
            slow_path_score: ground_truth_score(&c.trajectories[i], &sc.scene, version, kernel)?,
            slow_path_alpha: c.alphas[i],
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub gamma: f64,
    pub fast_fraction: f64,
    pub mean_score: f64,
    pub total_cost: f64,
    pub throughput: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffCurve {
    pub rows: Vec<TradeoffRow>,
    pub n: usize,
    pub config: DualConfig,
}

pub const TRADEOFF_HEADER: [&str; 5] = ["gamma", "fast_fraction", "mean_score", "total_cost", "throughput"];

impl TradeoffCurve {
    pub fn to_csv(&self) -> String {
        let mut csv = Csv::new(&TRADEOFF_HEADER);
        for r in &self.rows {
            csv.row([r.gamma, r.fast_fraction, r.mean_score, r.total_cost, r.throughput].map(fmt_f64));
        }
        csv.into_string()
    }

    pub fn speedup(&self, row: &TradeoffRow) -> f64 {
        speedup(self.n, row.total_cost, &self.config)
    }
}

/// One curve row per gamma, sorted by gamma.
pub fn sweep_table(entries: &[RouteEntry], gammas: &[f64], cfg: &DualConfig) -> Result<TradeoffCurve> {
    cfg.validate()?;
    if entries.is_empty() {
        return Err(Error::TooFewSamples { got: 0, need: 1 });
    }
    let mut gs = gammas.to_vec();
    if gs.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
        return Err(Error::InvalidArgument("gammas must be finite and >= 0".into()));
    }
    gs.sort_by(f64::total_cmp);
    let n = entries.len() as f64;
    let rows = gs
        .into_iter()
        .map(|gamma| {
            let fast = entries.iter().filter(|e| e.fast_path(gamma)).count() as f64;
            let mean_score = entries.iter().map(|e| e.realized(gamma)).sum::<f64>() / n;
            let total_cost = fast * cfg.fast_path_cost() + (n - fast) * cfg.slow_path_cost();
            TradeoffRow {
                gamma,
                fast_fraction: fast / n,
                mean_score,
                total_cost,
                throughput: n / total_cost,
            }
        })
        .collect();
    Ok(TradeoffCurve {
        rows,
        n: entries.len(),
        config: *cfg,
    })
}

pub fn dual_sweep<P: SubScorePredictor + ?Sized>(
    set: &ScenarioSet,
    seed_index: usize,
    scorer: &P,
    gammas: &[f64],
    cfg: &DualConfig,
    version: MetricVersion,
    kernel: &KernelConfig,
) -> Result<TradeoffCurve> {
    sweep_table(&route_table(set, seed_index, scorer, version, kernel)?, gammas, cfg)
}

/// Gamma that sends `fast_fraction` of the scenarios down the fast path,
/// together with the fraction it actually achieves (ties can push it up).
pub fn gamma_for_fast_fraction(fast_metas: &[f64], fast_fraction: f64) -> Result<(f64, f64)> {
    if fast_metas.is_empty() {
        return Err(Error::TooFewSamples { got: 0, need: 1 });
    }
    if !(0.0..=1.0).contains(&fast_fraction) {
        return Err(Error::InvalidArgument(format!("fast fraction {fast_fraction} outside [0, 1]")));
    }
    let mut m = fast_metas.to_vec();
    m.sort_by(|a, b| b.total_cmp(a));
    let n = m.len();
    let k = (fast_fraction * n as f64).round() as usize;
    let gamma = if k == 0 {
        m[0].max(1.0) + 0.01
    } else if k == n {
        m[n - 1].min(0.0).max(0.0)
    } else if m[k - 1] > m[k] {
        0.5 * (m[k - 1] + m[k])
    } else {
        m[k - 1]
    };
    let achieved = m.iter().filter(|&&v| v >= gamma).count() as f64 / n as f64;
    Ok((gamma, achieved))
}
