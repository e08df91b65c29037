use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{fmt_f64, Csv};

/// Per-scenario, per-seed score pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageRecord {
    pub scenario_id: String,
    pub seed: u64,
    pub s_vlm: f64,
    pub s_vit: f64,
    pub delta: f64,
}

impl AdvantageRecord {
    pub fn new(scenario_id: &str, seed: u64, s_vlm: f64, s_vit: f64) -> Self {
        AdvantageRecord {
            scenario_id: scenario_id.into(),
            seed,
            s_vlm,
            s_vit,
            delta: advantage(s_vlm, s_vit),
        }
    }
}

pub fn advantage(s_vlm: f64, s_vit: f64) -> f64 {
    s_vlm - s_vit
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Win {
    Vlm,
    Vit,
    None,
}

pub fn significant_win(delta: f64, tau: f64) -> Win {
    if delta > tau {
        Win::Vlm
    } else if delta < -tau {
        Win::Vit
    } else {
        Win::None
    }
}

/// Reference counts (tau, vlm wins, vit wins) reported for the original
/// benchmark; not reproducible here.
pub const REFERENCE_WIN_COUNTS: [(f64, usize, usize); 2] = [(0.2, 257, 253), (0.5, 159, 153)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedWins {
    pub seed: u64,
    pub vlm: usize,
    pub vit: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinCountReport {
    pub tau: f64,
    /// Significant wins summed over (scenario, seed) records.
    pub vlm_wins: usize,
    pub vit_wins: usize,
    pub records: usize,
    pub per_seed: Vec<SeedWins>,
    /// Scenarios won by the same side under every seed.
    pub stable_vlm: usize,
    pub stable_vit: usize,
}

pub fn win_count(records: &[AdvantageRecord], tau: f64) -> Result<WinCountReport> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("tau must be non-negative, got {tau}")));
    }
    let seeds: BTreeSet<u64> = records.iter().map(|r| r.seed).collect();
    let mut per_seed: BTreeMap<u64, (usize, usize)> = seeds.iter().map(|&s| (s, (0, 0))).collect();
    let mut by_scenario: BTreeMap<&str, Vec<Win>> = BTreeMap::new();
    let (mut vlm, mut vit) = (0, 0);
    for r in records {
        let w = significant_win(r.delta, tau);
        let e = per_seed.get_mut(&r.seed).expect("seed collected");
        match w {
            Win::Vlm => {
                vlm += 1;
                e.0 += 1;
            }
            Win::Vit => {
                vit += 1;
                e.1 += 1;
            }
            Win::None => {}
        }
        by_scenario.entry(&r.scenario_id).or_default().push(w);
    }
    let stable = |side: Win| {
        by_scenario
            .values()
            .filter(|w| w.len() == seeds.len() && w.iter().all(|x| *x == side))
            .count()
    };
    Ok(WinCountReport {
        tau,
        vlm_wins: vlm,
        vit_wins: vit,
        records: records.len(),
        per_seed: per_seed.into_iter().map(|(seed, (vlm, vit))| SeedWins { seed, vlm, vit }).collect(),
        stable_vlm: stable(Win::Vlm),
        stable_vit: stable(Win::Vit),
    })
}

pub fn records_csv(records: &[AdvantageRecord]) -> String {
    let mut csv = Csv::new(&["scenario_id", "seed", "s_vlm", "s_vit", "delta"]);
    for r in records {
        csv.row([r.scenario_id.clone(), r.seed.to_string(), fmt_f64(r.s_vlm), fmt_f64(r.s_vit), fmt_f64(r.delta)]);
    }
    csv.into_string()
}

pub fn parse_records_csv(text: &str) -> Result<Vec<AdvantageRecord>> {
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, h)| h.trim()) != Some("scenario_id,seed,s_vlm,s_vit,delta") {
        return Err(Error::MalformedRow {
            line: 1,
            reason: "expected header scenario_id,seed,s_vlm,s_vit,delta".into(),
        });
    }
    let mut out = Vec::new();
    for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |reason: String| Error::MalformedRow { line: i + 1, reason };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad("expected 5 fields".into()));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number {s:?}")));
        let seed = f[1].parse().map_err(|_| bad(format!("bad seed {:?}", f[1])))?;
        out.push(AdvantageRecord::new(f[0], seed, num(f[2])?, num(f[3])?));
    }
    Ok(out)
}

pub fn win_reports_csv(reports: &[WinCountReport]) -> String {
    let mut csv = Csv::new(&["tau", "seed", "vlm_wins", "vit_wins"]);
    for r in reports {
        for s in &r.per_seed {
            csv.row([fmt_f64(r.tau), s.seed.to_string(), s.vlm.to_string(), s.vit.to_string()]);
        }
        csv.row([fmt_f64(r.tau), "all".to_string(), r.vlm_wins.to_string(), r.vit_wins.to_string()]);
        csv.row([fmt_f64(r.tau), "stable".to_string(), r.stable_vlm.to_string(), r.stable_vit.to_string()]);
    }
    csv.into_string()
}
