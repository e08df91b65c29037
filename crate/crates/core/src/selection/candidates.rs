use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::geometry::wrap_angle;
use crate::scene::{compute_subscores, epdms, pdms, KernelConfig, MetricVersion, Scene, SubScores, Trajectory};
use crate::table::{fmt_f64, Csv};

/// Interior mixing weights; the endpoints 0 and 1 are always added.
pub const DEFAULT_INTERIOR_ALPHAS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Candidates ordered by increasing alpha. Alpha 0 is the slow (VLM)
/// trajectory and alpha 1 the fast (ViT) one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub alphas: Vec<f64>,
    pub trajectories: Vec<Trajectory>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    /// Candidate set holding only the two given trajectories, in order.
    pub fn pair(first: &Trajectory, second: &Trajectory) -> Self {
        CandidateSet {
            alphas: vec![0.0, 1.0],
            trajectories: vec![first.clone(), second.clone()],
        }
    }

    pub fn to_csv(&self, scenario_id: &str, csv: &mut Csv) {
        for (a, t) in self.alphas.iter().zip(&self.trajectories) {
            for (k, w) in t.waypoints.iter().enumerate() {
                csv.row([scenario_id.to_string(), fmt_f64(*a), k.to_string(), fmt_f64(w[0]), fmt_f64(w[1]), fmt_f64(w[2])]);
            }
        }
    }
}

pub const CANDIDATES_HEADER: [&str; 6] = ["scenario_id", "alpha", "waypoint_index", "x", "y", "theta"];

fn mix(t_vit: &Trajectory, t_vlm: &Trajectory, alpha: f64) -> Result<Trajectory> {
    if alpha == 1.0 {
        return Ok(t_vit.clone());
    }
    if alpha == 0.0 {
        return Ok(t_vlm.clone());
    }
    let w = t_vit
        .waypoints
        .iter()
        .zip(&t_vlm.waypoints)
        .map(|(a, b)| {
            [
                alpha * a[0] + (1.0 - alpha) * b[0],
                alpha * a[1] + (1.0 - alpha) * b[1],
                b[2] + alpha * wrap_angle(a[2] - b[2]),
            ]
        })
        .collect();
    Trajectory::new(w, t_vit.dt)
}

/// tau_alpha = alpha * t_vit + (1 - alpha) * t_vlm, headings along the
/// shorter arc.
pub fn interpolate_candidates(t_vit: &Trajectory, t_vlm: &Trajectory, interior: &[f64]) -> Result<CandidateSet> {
    if t_vit.len() != t_vlm.len() {
        return Err(Error::DimensionMismatch {
            what: "trajectory length",
            expected: t_vit.len(),
            got: t_vlm.len(),
        });
    }
    if t_vit.dt != t_vlm.dt {
        return Err(Error::InvalidArgument("trajectories use different dt".into()));
    }
    let mut alphas = vec![0.0];
    alphas.extend_from_slice(interior);
    alphas.push(1.0);
    if alphas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("interior alphas must be strictly increasing inside (0, 1)".into()));
    }
    let trajectories = alphas.iter().map(|&a| mix(t_vit, t_vlm, a)).collect::<Result<_>>()?;
    Ok(CandidateSet { alphas, trajectories })
}

/// Ground-truth scalar score of one trajectory.
pub fn ground_truth_score(traj: &Trajectory, scene: &Scene, version: MetricVersion, cfg: &KernelConfig) -> Result<f64> {
    let s = compute_subscores(traj, scene, version, cfg)?;
    Ok(compose(&s, scene, version, cfg)?)
}

fn compose(s: &SubScores, scene: &Scene, version: MetricVersion, cfg: &KernelConfig) -> Result<f64> {
    Ok(match version {
        MetricVersion::V1 => pdms(s),
        MetricVersion::V2 => epdms(s, &compute_subscores(&scene.expert, scene, version, cfg)?),
    })
}

/// First index attaining the maximum.
pub(crate) fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Scores every candidate and returns (index, score) of the best, ties to
/// the lowest index.
pub fn oracle_best_of_n(c: &CandidateSet, scene: &Scene, version: MetricVersion, cfg: &KernelConfig) -> Result<(usize, f64)> {
    if c.is_empty() {
        return Err(Error::InvalidArgument("empty candidate set".into()));
    }
    let human = match version {
        MetricVersion::V2 => Some(compute_subscores(&scene.expert, scene, version, cfg)?),
        MetricVersion::V1 => None,
    };
    let scores = c
        .trajectories
        .iter()
        .map(|t| {
            let s = compute_subscores(t, scene, version, cfg)?;
            Ok(match &human {
                Some(h) => epdms(&s, h),
                None => pdms(&s),
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let i = argmax_first(&scores);
    Ok((i, scores[i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn traj(pts: &[[f64; 3]]) -> Trajectory {
        Trajectory::new(pts.to_vec(), 0.5).unwrap()
    }

    #[test]
    fn endpoints_and_count() {
        let a = traj(&[[1.0, 2.0, 0.1], [3.0, 4.0, 0.2]]);
        let b = traj(&[[0.0, 0.0, -0.1], [1.0, 1.0, 0.3]]);
        let c = interpolate_candidates(&a, &b, &DEFAULT_INTERIOR_ALPHAS).unwrap();
        assert_eq!(c.len(), 11);
        assert_eq!(c.trajectories[10], a);
        assert_eq!(c.trajectories[0], b);
        let same = interpolate_candidates(&a, &a, &DEFAULT_INTERIOR_ALPHAS).unwrap();
        for t in &same.trajectories {
            for (w, e) in t.waypoints.iter().zip(&a.waypoints) {
                for j in 0..3 {
                    assert!((w[j] - e[j]).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn heading_takes_the_short_way() {
        let a = traj(&[[0.0, 0.0, 3.0], [0.0, 0.0, 3.0]]);
        let b = traj(&[[0.0, 0.0, -3.0], [0.0, 0.0, -3.0]]);
        let c = interpolate_candidates(&a, &b, &[0.5]).unwrap();
        let th = c.trajectories[1].waypoints[0][2];
        assert!((th.abs() - std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = traj(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        let b = traj(&[[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        assert!(interpolate_candidates(&a, &b, &[]).is_err());
        assert!(interpolate_candidates(&a, &a, &[0.5, 0.4]).is_err());
        assert!(interpolate_candidates(&a, &a, &[1.0]).is_err());
    }

    #[test]
    fn argmax_prefers_first() {
        assert_eq!(argmax_first(&[0.2, 0.9, 0.9, 0.1]), 1);
        assert_eq!(argmax_first(&[0.5]), 0);
    }

    proptest! {
        #[test]
        fn midpoint_is_affine(pts in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0, -50.0f64..50.0, -50.0f64..50.0), 2..9)) {
            let a = traj(&pts.iter().map(|p| [p.0, p.1, 0.0]).collect::<Vec<_>>());
            let b = traj(&pts.iter().map(|p| [p.2, p.3, 0.0]).collect::<Vec<_>>());
            let c = interpolate_candidates(&a, &b, &[0.5]).unwrap();
            for (k, w) in c.trajectories[1].waypoints.iter().enumerate() {
                prop_assert!((w[0] - 0.5 * (a.waypoints[k][0] + b.waypoints[k][0])).abs() <= 1e-12);
                prop_assert!((w[1] - 0.5 * (a.waypoints[k][1] + b.waypoints[k][1])).abs() <= 1e-12);
            }
        }
    }
}
