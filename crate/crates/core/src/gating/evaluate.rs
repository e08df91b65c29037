use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::rules::{rule_decisions, Choice, GateConfig, GateDecision, GateFeatures, Strategy};
use crate::error::{Error, Result};
use crate::table::{fmt_f64, Csv};

/// Realized score of each branch per scenario.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BranchScores {
    map: HashMap<String, (f64, f64)>,
}

impl BranchScores {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: &str, vlm: f64, vit: f64) {
        self.map.insert(id.to_string(), (vlm, vit));
    }

    pub fn get(&self, id: &str) -> Result<(f64, f64)> {
        self.map.get(id).copied().ok_or_else(|| Error::MissingScenario(id.into()))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// 1 when the VLM branch scores higher, 0 when lower, None on ties.
    pub fn label(&self, id: &str) -> Result<Option<bool>> {
        let (v, t) = self.get(id)?;
        Ok(if v > t {
            Some(true)
        } else if v < t {
            Some(false)
        } else {
            None
        })
    }
}

/// Plain means over the decided scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateEvaluation {
    pub realized: f64,
    pub vlm_mean: f64,
    pub vit_mean: f64,
    pub oracle_mean: f64,
    /// Mean of the per-scenario worse branch.
    pub min_mean: f64,
    pub vlm_fraction: f64,
}

pub fn gate_evaluate(decisions: &[GateDecision], scores: &BranchScores) -> Result<GateEvaluation> {
    if decisions.is_empty() {
        return Err(Error::InvalidArgument("no decisions to evaluate".into()));
    }
    let n = decisions.len() as f64;
    let mut acc = [0.0; 6];
    for d in decisions {
        let (v, t) = scores.get(&d.scenario_id)?;
        let chosen = match d.choice {
            Choice::Vlm => {
                acc[5] += 1.0;
                v
            }
            Choice::Vit => t,
        };
        acc[0] += chosen;
        acc[1] += v;
        acc[2] += t;
        acc[3] += v.max(t);
        acc[4] += v.min(t);
    }
    Ok(GateEvaluation {
        realized: acc[0] / n,
        vlm_mean: acc[1] / n,
        vit_mean: acc[2] / n,
        oracle_mean: acc[3] / n,
        min_mean: acc[4] / n,
        vlm_fraction: acc[5] / n,
    })
}

pub const DEFAULT_TAUS: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCellResult {
    pub strategy: Strategy,
    pub tau: f64,
    pub realized_mean: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GateSweepReport {
    pub rows: Vec<SweepCellResult>,
}

impl GateSweepReport {
    pub fn to_csv(&self) -> String {
        let mut csv = Csv::new(&["strategy", "tau", "realized_mean"]);
        for r in &self.rows {
            csv.row([r.strategy.name().to_string(), fmt_f64(r.tau), fmt_f64(r.realized_mean)]);
        }
        csv.into_string()
    }
}

/// Realized mean for every (strategy, tau) cell, strategies outermost.
pub fn threshold_sweep(
    features: &[(String, GateFeatures)],
    scores: &BranchScores,
    strategies: &[Strategy],
    taus: &[f64],
    base: &GateConfig,
) -> Result<GateSweepReport> {
    let mut rows = Vec::new();
    for &strategy in strategies {
        for &tau in taus {
            let cfg = GateConfig { tau, ..*base };
            let d = rule_decisions(features, strategy, &cfg)?;
            rows.push(SweepCellResult {
                strategy,
                tau,
                realized_mean: gate_evaluate(&d, scores)?.realized,
            });
        }
    }
    Ok(GateSweepReport { rows })
}

pub fn decisions_csv(decisions: &[GateDecision]) -> String {
    let mut csv = Csv::new(&["scenario_id", "score", "choice"]);
    for d in decisions {
        csv.row([d.scenario_id.clone(), fmt_f64(d.score), d.choice.name().to_string()]);
    }
    csv.into_string()
}

pub fn parse_decisions_csv(text: &str) -> Result<Vec<GateDecision>> {
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, h)| h.trim()) != Some("scenario_id,score,choice") {
        return Err(Error::MalformedRow {
            line: 1,
            reason: "expected header scenario_id,score,choice".into(),
        });
    }
    let mut out = Vec::new();
    for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |reason: String| Error::MalformedRow { line: i + 1, reason };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(bad("expected 3 fields".into()));
        }
        out.push(GateDecision {
            scenario_id: f[0].into(),
            score: f[1].parse().map_err(|_| bad(format!("bad score {:?}", f[1])))?,
            choice: f[2].parse().map_err(|_| bad(format!("bad choice {:?}", f[2])))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop, prop_assert, proptest};

    fn toy() -> (Vec<(String, GateFeatures)>, BranchScores) {
        let mut s = BranchScores::new();
        let mut f = Vec::new();
        for i in 0..20 {
            let id = format!("s{i}");
            s.insert(&id, 0.9 + 0.001 * i as f64, 0.5 + 0.01 * i as f64);
            let x = i as f64;
            f.push((
                id,
                GateFeatures {
                    e_shared_vlm: 1.0 + (x * 0.7).sin().abs(),
                    e_unique_vlm: 0.5 + (x * 1.3).cos().abs(),
                    e_shared_vit: 1.0 + (x * 0.4).cos().abs(),
                    e_unique_vit: 0.5 + (x * 2.1).sin().abs(),
                },
            ));
        }
        (f, s)
    }

    fn decide(ids: &[String], c: Choice) -> Vec<GateDecision> {
        ids.iter()
            .map(|id| GateDecision {
                scenario_id: id.clone(),
                score: 0.0,
                choice: c,
            })
            .collect()
    }

    #[test]
    fn baselines_and_oracle() {
        let (f, s) = toy();
        let ids: Vec<String> = f.iter().map(|(i, _)| i.clone()).collect();
        let e = gate_evaluate(&decide(&ids, Choice::Vlm), &s).unwrap();
        assert_eq!(e.realized, e.vlm_mean);
        let oracle: Vec<GateDecision> = ids
            .iter()
            .map(|id| {
                let (v, t) = s.get(id).unwrap();
                GateDecision {
                    scenario_id: id.clone(),
                    score: v - t,
                    choice: Choice::from_score(v - t),
                }
            })
            .collect();
        let e = gate_evaluate(&oracle, &s).unwrap();
        assert_eq!(e.realized, e.oracle_mean);
        let missing = decide(&["nope".to_string()], Choice::Vit);
        assert!(matches!(gate_evaluate(&missing, &s), Err(Error::MissingScenario(_))));
    }

    #[test]
    fn vlm_always_better_bounds_every_strategy() {
        let (f, s) = toy();
        let rep = threshold_sweep(&f, &s, &Strategy::ALL, &DEFAULT_TAUS, &GateConfig::default()).unwrap();
        assert_eq!(rep.rows.len(), 20);
        let vlm = gate_evaluate(&decide(&f.iter().map(|(i, _)| i.clone()).collect::<Vec<_>>(), Choice::Vlm), &s).unwrap();
        for r in &rep.rows {
            let d = rule_decisions(&f, r.strategy, &GateConfig { tau: r.tau, ..Default::default() }).unwrap();
            let all_vlm = d.iter().all(|d| d.choice == Choice::Vlm);
            assert!(r.realized_mean <= vlm.realized);
            assert_eq!(r.realized_mean == vlm.realized, all_vlm);
        }
        assert!(rep.to_csv().starts_with("strategy,tau,realized_mean\nmore_unique,0.5,"));
    }

    #[test]
    fn single_tau_sweep_matches_direct_rule() {
        let (f, s) = toy();
        let cfg = GateConfig::default();
        let rep = threshold_sweep(&f, &s, &[Strategy::Smoothed], &[0.7], &cfg).unwrap();
        let direct = gate_evaluate(&rule_decisions(&f, Strategy::Smoothed, &cfg).unwrap(), &s).unwrap();
        assert_eq!(rep.rows[0].realized_mean, direct.realized);
    }

    #[test]
    fn decisions_csv_round_trip() {
        let (f, _) = toy();
        let d = rule_decisions(&f, Strategy::MoreUnique, &GateConfig::default()).unwrap();
        assert_eq!(parse_decisions_csv(&decisions_csv(&d)).unwrap(), d);
    }

    proptest! {
        #[test]
        fn realized_between_min_and_oracle(
            rows in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, any::<bool>()), 1..40)
        ) {
            let mut s = BranchScores::new();
            let mut d = Vec::new();
            for (i, (v, t, c)) in rows.iter().enumerate() {
                let id = i.to_string();
                s.insert(&id, *v, *t);
                d.push(GateDecision { scenario_id: id, score: 0.0, choice: if *c { Choice::Vlm } else { Choice::Vit } });
            }
            let e = gate_evaluate(&d, &s).unwrap();
            prop_assert!(e.min_mean <= e.realized + 1e-12 && e.realized <= e.oracle_mean + 1e-12);
        }
    }
}
