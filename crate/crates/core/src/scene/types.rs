use serde::{Deserialize, Serialize};

use super::geometry::{check_polygon_basic, check_polygon_simple, wrap_angle, Polyline, P2};
use crate::error::{Error, Result};

/// Planned waypoints (x, y, theta) at t = dt, 2dt, ..., T dt after the start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub waypoints: Vec<[f64; 3]>,
    pub dt: f64,
}

impl Trajectory {
    /// Validates and wraps headings into (-pi, pi].
    pub fn new(mut waypoints: Vec<[f64; 3]>, dt: f64) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::InvalidArgument(format!("a trajectory needs at least 2 waypoints, got {}", waypoints.len())));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        for (row, w) in waypoints.iter_mut().enumerate() {
            if let Some(col) = w.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row, col });
            }
            w[2] = wrap_angle(w[2]);
        }
        Ok(Trajectory { waypoints, dt })
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn position(&self, k: usize) -> P2 {
        [self.waypoints[k][0], self.waypoints[k][1]]
    }

    pub fn validate(&self) -> Result<()> {
        Trajectory::new(self.waypoints.clone(), self.dt).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
}

impl EgoState {
    pub fn position(&self) -> P2 {
        [self.x, self.y]
    }
}

/// Another road user with one pose per planning step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Agent {
    pub positions: Vec<P2>,
    pub headings: Vec<f64>,
    pub length: f64,
    pub width: f64,
}

impl Agent {
    /// Finite-difference velocity at step k (forward difference at step 0).
    pub fn velocity(&self, k: usize, dt: f64) -> P2 {
        let n = self.positions.len();
        if n < 2 {
            return [0.0, 0.0];
        }
        let (a, b) = if k == 0 { (0, 1) } else { (k - 1, k.min(n - 1)) };
        [
            (self.positions[b][0] - self.positions[a][0]) / dt,
            (self.positions[b][1] - self.positions[a][1]) / dt,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub ego_start: EgoState,
    pub agents: Vec<Agent>,
    pub drivable: Vec<P2>,
    pub centerline: Vec<P2>,
    pub expert: Trajectory,
    #[serde(default)]
    pub red_light: bool,
    #[serde(default)]
    pub red_light_zone: Option<Vec<P2>>,
    /// Allowed heading per centerline segment.
    pub direction_field: Vec<f64>,
}

impl Scene {
    /// Structural checks including polygon simplicity.
    pub fn validate(&self) -> Result<()> {
        check_polygon_simple(&self.drivable, "drivable area")?;
        if let Some(zone) = &self.red_light_zone {
            check_polygon_basic(zone, "red-light zone")?;
        }
        let line = Polyline::new(&self.centerline)?;
        if self.direction_field.len() != line.num_segments() {
            return Err(Error::DimensionMismatch {
                what: "direction field",
                expected: line.num_segments(),
                got: self.direction_field.len(),
            });
        }
        self.expert.validate()?;
        for a in &self.agents {
            self.check_agent(a, self.expert.len())?;
        }
        Ok(())
    }

    pub(crate) fn check_agent(&self, a: &Agent, t: usize) -> Result<()> {
        if a.positions.len() < t || a.headings.len() < t {
            return Err(Error::DimensionMismatch {
                what: "agent steps",
                expected: t,
                got: a.positions.len().min(a.headings.len()),
            });
        }
        if !(a.length > 0.0 && a.width > 0.0) {
            return Err(Error::InvalidArgument("agent extent must be positive".into()));
        }
        Ok(())
    }
}

/// Sub-score components. Fields a version does not use are held at 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubScores {
    pub nc: f64,
    pub dac: f64,
    pub ddc: f64,
    pub tlc: f64,
    pub ep: f64,
    pub ttc: f64,
    pub comfort: f64,
    pub hc: f64,
    pub lk: f64,
    pub ec: f64,
}

impl SubScores {
    pub const NAMES: [&'static str; 10] = ["nc", "dac", "ddc", "tlc", "ep", "ttc", "c", "hc", "lk", "ec"];

    pub fn ones() -> Self {
        SubScores::from_array([1.0; 10])
    }

    pub fn to_array(&self) -> [f64; 10] {
        [
            self.nc,
            self.dac,
            self.ddc,
            self.tlc,
            self.ep,
            self.ttc,
            self.comfort,
            self.hc,
            self.lk,
            self.ec,
        ]
    }

    pub fn from_array(a: [f64; 10]) -> Self {
        SubScores {
            nc: a[0],
            dac: a[1],
            ddc: a[2],
            tlc: a[3],
            ep: a[4],
            ttc: a[5],
            comfort: a[6],
            hc: a[7],
            lk: a[8],
            ec: a[9],
        }
    }

    /// Every component at its best value.
    pub fn all_pass(&self) -> bool {
        self.to_array().iter().all(|&v| v == 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricVersion {
    V1,
    V2,
}

impl std::fmt::Display for MetricVersion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MetricVersion::V1 => "v1",
            MetricVersion::V2 => "v2",
        })
    }
}

impl std::str::FromStr for MetricVersion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "v1" => Ok(MetricVersion::V1),
            "v2" => Ok(MetricVersion::V2),
            other => Err(Error::InvalidArgument(format!("unknown metric version {other:?}"))),
        }
    }
}

/// Weights of the averaged components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricWeights {
    pub v1_ep: f64,
    pub v1_ttc: f64,
    pub v1_c: f64,
    pub v2_ttc: f64,
    pub v2_ep: f64,
    pub v2_hc: f64,
    pub v2_lk: f64,
    pub v2_ec: f64,
}

pub const METRIC_WEIGHTS: MetricWeights = MetricWeights {
    v1_ep: 5.0,
    v1_ttc: 5.0,
    v1_c: 2.0,
    v2_ttc: 5.0,
    v2_ep: 5.0,
    v2_hc: 2.0,
    v2_lk: 2.0,
    v2_ec: 2.0,
};
