use super::types::{SubScores, Trajectory, METRIC_WEIGHTS as W};
use crate::error::{Error, Result};

pub fn pdms(s: &SubScores) -> f64 {
    let avg = (W.v1_ep * s.ep + W.v1_ttc * s.ttc + W.v1_c * s.comfort) / (W.v1_ep + W.v1_ttc + W.v1_c);
    s.nc * s.dac * avg
}

/// Neutralizes a penalty the human reference also incurs.
pub fn epdms_filter(m_agent: f64, m_human: f64) -> f64 {
    if m_human == 0.0 {
        1.0
    } else {
        m_agent
    }
}

pub fn epdms(agent: &SubScores, human: &SubScores) -> f64 {
    let f = epdms_filter;
    let mult = f(agent.nc, human.nc) * f(agent.dac, human.dac) * f(agent.ddc, human.ddc) * f(agent.tlc, human.tlc);
    let num = W.v2_ttc * f(agent.ttc, human.ttc)
        + W.v2_ep * f(agent.ep, human.ep)
        + W.v2_hc * f(agent.hc, human.hc)
        + W.v2_lk * f(agent.lk, human.lk)
        + W.v2_ec * f(agent.ec, human.ec);
    mult * num / (W.v2_ttc + W.v2_ep + W.v2_hc + W.v2_lk + W.v2_ec)
}

/// Start state of a follow-up scene: (x, y, theta, v).
pub type StartState = [f64; 4];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelScales {
    pub r_theta: f64,
    pub r_v: f64,
}

impl Default for KernelScales {
    fn default() -> Self {
        KernelScales { r_theta: 2.0, r_v: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoStageScore {
    pub score: f64,
    pub second_stage: f64,
    /// All kernel weights underflowed; the nearest start was used.
    pub fallback: bool,
}

fn state_distance2(a: &StartState, b: &StartState, k: &KernelScales) -> f64 {
    let dth = super::geometry::wrap_angle(a[2] - b[2]) * k.r_theta;
    let dv = (a[3] - b[3]) * k.r_v;
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + dth * dth + dv * dv
}

/// Gaussian-kernel weighted second stage multiplied by the first stage.
pub fn epdms_two_stage(
    first_stage: f64,
    followups: &[(StartState, f64)],
    planner_end: StartState,
    sigma: f64,
    scales: KernelScales,
) -> Result<TwoStageScore> {
    if followups.is_empty() {
        return Err(Error::InvalidArgument("two-stage aggregation needs at least one follow-up".into()));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let d2: Vec<f64> = followups.iter().map(|(s, _)| state_distance2(s, &planner_end, &scales)).collect();
    let w: Vec<f64> = d2.iter().map(|d| (-d / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = w.iter().sum();
    let (second_stage, fallback) = if total > 0.0 {
        (w.iter().zip(followups).map(|(w, (_, s))| w * s).sum::<f64>() / total, false)
    } else {
        let nearest = (0..d2.len()).fold(0, |best, i| if d2[i] < d2[best] { i } else { best });
        log::warn!("two-stage kernel weights underflowed; using nearest follow-up {nearest}");
        (followups[nearest].1, true)
    };
    Ok(TwoStageScore {
        score: first_stage * second_stage,
        second_stage,
        fallback,
    })
}

pub fn mean_speed(traj: &Trajectory) -> Result<f64> {
    if !(traj.dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {}", traj.dt)));
    }
    if traj.len() < 2 {
        return Err(Error::InvalidArgument("mean speed needs at least 2 waypoints".into()));
    }
    let sum: f64 = traj
        .waypoints
        .windows(2)
        .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]) / traj.dt)
        .sum();
    Ok(sum / (traj.len() - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn with(f: impl FnOnce(&mut SubScores)) -> SubScores {
        let mut s = SubScores::ones();
        f(&mut s);
        s
    }

    #[test]
    fn pdms_examples() {
        assert_eq!(pdms(&SubScores::ones()), 1.0);
        assert_eq!(pdms(&with(|s| s.nc = 0.0)), 0.0);
        assert!((pdms(&with(|s| s.ep = 0.8)) - 11.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn filter_examples() {
        assert_eq!(epdms_filter(0.0, 0.0), 1.0);
        assert_eq!(epdms_filter(0.0, 1.0), 0.0);
        assert_eq!(epdms_filter(0.5, 0.5), 0.5);
    }

    #[test]
    fn epdms_examples() {
        let zeros = SubScores::from_array([0.0; 10]);
        assert_eq!(epdms(&SubScores::ones(), &zeros), 1.0);
        assert_eq!(epdms(&with(|s| s.dac = 0.0), &with(|s| s.dac = 0.0)), 1.0);
        assert_eq!(epdms(&with(|s| s.ep = 0.5), &SubScores::ones()), 0.84375);
    }

    #[test]
    fn two_stage_examples() {
        let k = KernelScales::default();
        let r = epdms_two_stage(0.9, &[([0.0, 0.0, 0.0, 5.0], 0.5)], [3.0, 1.0, 0.2, 4.0], 1.0, k).unwrap();
        assert!((r.score - 0.45).abs() < 1e-15);
        let end = [1.0, 2.0, 0.3, 6.0];
        let f = [(end, 0.7), ([50.0, 0.0, 0.0, 6.0], 0.1), ([0.0, -40.0, 0.0, 6.0], 0.2)];
        let r = epdms_two_stage(1.0, &f, end, 1e-3, k).unwrap();
        assert_eq!((r.second_stage, r.fallback), (0.7, false));
        let r = epdms_two_stage(1.0, &[([1.0, 0.0, 0.0, 0.0], 0.6), ([-1.0, 0.0, 0.0, 0.0], 1.0)], [0.0; 4], 1.0, k).unwrap();
        assert!((r.second_stage - 0.8).abs() < 1e-15);
        let r = epdms_two_stage(1.0, &[([1e3, 0.0, 0.0, 0.0], 0.6), ([2e3, 0.0, 0.0, 0.0], 1.0)], [0.0; 4], 1e-3, k).unwrap();
        assert_eq!((r.second_stage, r.fallback), (0.6, true));
        assert!(epdms_two_stage(1.0, &[], [0.0; 4], 1.0, k).is_err());
        assert!(epdms_two_stage(1.0, &f, end, 0.0, k).is_err());
    }

    #[test]
    fn mean_speed_examples() {
        let still = Trajectory::new(vec![[1.0, 1.0, 0.0]; 4], 0.5).unwrap();
        assert_eq!(mean_speed(&still).unwrap(), 0.0);
        let wps: Vec<[f64; 3]> = (0..5).map(|k| [2.0 * k as f64, 0.0, 0.0]).collect();
        let t = Trajectory::new(wps.clone(), 0.5).unwrap();
        assert_eq!(mean_speed(&t).unwrap(), 4.0);
        let rev = Trajectory::new(wps.into_iter().rev().collect(), 0.5).unwrap();
        assert_eq!(mean_speed(&rev).unwrap(), 4.0);
        let bad = Trajectory {
            waypoints: vec![[0.0; 3]; 3],
            dt: 0.0,
        };
        assert!(mean_speed(&bad).is_err());
    }

    fn scores() -> impl Strategy<Value = SubScores> {
        let tri = prop_oneof![Just(0.0), Just(0.5), Just(1.0)];
        let bin = || prop_oneof![Just(0.0), Just(1.0)];
        (tri.clone(), bin(), tri, bin(), 0.0f64..=1.0, bin(), bin(), bin(), bin(), bin())
            .prop_map(|(nc, dac, ddc, tlc, ep, ttc, c, hc, lk, ec)| SubScores::from_array([nc, dac, ddc, tlc, ep, ttc, c, hc, lk, ec]))
    }

    proptest! {
        #[test]
        fn multiplicative_zero(s in scores()) {
            prop_assert_eq!(pdms(&SubScores { nc: 0.0, ..s }), 0.0);
            prop_assert_eq!(pdms(&SubScores { dac: 0.0, ..s }), 0.0);
        }

        #[test]
        fn monotone_in_every_field(s in scores(), h in scores(), field in 0usize..10) {
            let mut hi = s.to_array();
            hi[field] = 1.0;
            let hi = SubScores::from_array(hi);
            prop_assert!(pdms(&hi) >= pdms(&s));
            prop_assert!(epdms(&hi, &h) >= epdms(&s, &h));
        }

        #[test]
        fn filtering_only_raises(s in scores(), h in scores()) {
            prop_assert!(epdms(&s, &h) >= epdms(&s, &SubScores::ones()) - 1e-15);
        }

        #[test]
        fn filter_law(m in 0.0f64..=1.0, h in 1e-9f64..=1.0) {
            prop_assert_eq!(epdms_filter(m, h), m);
            prop_assert_eq!(epdms_filter(m, 0.0), 1.0);
        }

        #[test]
        fn mean_speed_rotation_invariant(
            pts in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 2..10), rot in -3.1f64..3.1
        ) {
            let (s, c) = rot.sin_cos();
            let a = Trajectory::new(pts.iter().map(|&(x, y)| [x, y, 0.0]).collect(), 0.5).unwrap();
            let b = Trajectory::new(pts.iter().map(|&(x, y)| [c * x - s * y, s * x + c * y, rot]).collect(), 0.5).unwrap();
            prop_assert!((mean_speed(&a).unwrap() - mean_speed(&b).unwrap()).abs() <= 1e-10);
        }
    }
}
