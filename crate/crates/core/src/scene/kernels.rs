use serde::{Deserialize, Serialize};

use super::geometry::{check_polygon_basic, point_in_polygon, wrap_angle, OrientedBox, Polyline, P2};
use super::types::{MetricVersion, Scene, SubScores, Trajectory};
use crate::error::{Error, Result};

/// Thresholds and ego geometry used by the sub-score kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub t_ttc: f64,
    pub ttc_step: f64,
    pub a_max: f64,
    pub j_max: f64,
    pub w_lk: f64,
    pub ec_scale: f64,
    pub ego_length: f64,
    pub ego_width: f64,
    /// Expert progress below this gives EP = 1.
    pub min_expert_progress: f64,
    /// Slack when deciding whether an agent's front lies in the ego's rear half.
    pub rear_tolerance: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            t_ttc: 2.0,
            ttc_step: 0.1,
            a_max: 3.0,
            j_max: 5.0,
            w_lk: 1.0,
            ec_scale: 0.8,
            ego_length: 4.5,
            ego_width: 2.0,
            min_expert_progress: 0.5,
            rear_tolerance: 0.25,
        }
    }
}

struct EgoMotion {
    boxes: Vec<OrientedBox>,
    /// Velocity at each waypoint, from the previous position.
    vel: Vec<P2>,
    speed_before: Vec<f64>,
}

fn ego_motion(traj: &Trajectory, scene: &Scene, cfg: &KernelConfig) -> EgoMotion {
    let start = scene.ego_start.position();
    let mut prev = start;
    let mut prev_speed = scene.ego_start.v;
    let mut boxes = Vec::with_capacity(traj.len());
    let mut vel = Vec::with_capacity(traj.len());
    let mut speed_before = Vec::with_capacity(traj.len());
    for (k, w) in traj.waypoints.iter().enumerate() {
        let p = traj.position(k);
        let v = [(p[0] - prev[0]) / traj.dt, (p[1] - prev[1]) / traj.dt];
        boxes.push(OrientedBox::new(p, w[2], cfg.ego_length, cfg.ego_width));
        speed_before.push(prev_speed);
        prev_speed = v[0].hypot(v[1]);
        vel.push(v);
        prev = p;
    }
    EgoMotion { boxes, vel, speed_before }
}

fn collision_score(traj: &Trajectory, scene: &Scene, m: &EgoMotion, cfg: &KernelConfig) -> f64 {
    let mut score: f64 = 1.0;
    for (k, ego) in m.boxes.iter().enumerate() {
        let speed = m.vel[k][0].hypot(m.vel[k][1]);
        let decelerating = speed < m.speed_before[k];
        for a in &scene.agents {
            let other = OrientedBox::new(a.positions[k], a.headings[k], a.length, a.width);
            if !ego.overlaps(&other) {
                continue;
            }
            let f = ego.to_local(other.front_center());
            let tol = cfg.rear_tolerance;
            let rear = f[0] < 0.0 && f[0] >= -ego.length / 2.0 - tol && f[1].abs() <= ego.width / 2.0 + tol;
            if rear && decelerating {
                score = score.min(0.5);
            } else {
                return 0.0;
            }
        }
    }
    let _ = traj;
    score
}

fn drivable_score(scene: &Scene, m: &EgoMotion) -> f64 {
    let inside = m
        .boxes
        .iter()
        .all(|b| b.corners().iter().all(|c| point_in_polygon(*c, &scene.drivable)));
    if inside {
        1.0
    } else {
        0.0
    }
}

fn ttc_score(scene: &Scene, m: &EgoMotion, dt: f64, cfg: &KernelConfig) -> f64 {
    let steps = (cfg.t_ttc / cfg.ttc_step).round() as usize;
    for (k, ego) in m.boxes.iter().enumerate() {
        let (sh, ch) = ego.heading.sin_cos();
        for a in &scene.agents {
            let p = a.positions[k];
            // Only agents ahead of the ego are considered.
            if (p[0] - ego.cx) * ch + (p[1] - ego.cy) * sh <= 0.0 {
                continue;
            }
            let va = a.velocity(k, dt);
            for i in 1..=steps {
                let t = i as f64 * cfg.ttc_step;
                let e = OrientedBox {
                    cx: ego.cx + m.vel[k][0] * t,
                    cy: ego.cy + m.vel[k][1] * t,
                    ..*ego
                };
                let o = OrientedBox::new([p[0] + va[0] * t, p[1] + va[1] * t], a.headings[k], a.length, a.width);
                if e.overlaps(&o) {
                    return 0.0;
                }
            }
        }
    }
    1.0
}

/// Acceleration and jerk bounds on finite-difference velocity vectors.
fn comfortable(vel: &[P2], dt: f64, a_max: f64, j_max: f64) -> bool {
    let acc: Vec<P2> = vel
        .windows(2)
        .map(|w| [(w[1][0] - w[0][0]) / dt, (w[1][1] - w[0][1]) / dt])
        .collect();
    if acc.iter().any(|a| a[0].hypot(a[1]) > a_max) {
        return false;
    }
    acc.windows(2)
        .all(|w| ((w[1][0] - w[0][0]) / dt).hypot((w[1][1] - w[0][1]) / dt) <= j_max)
}

fn progress(line: &Polyline, start: P2, end: P2) -> f64 {
    line.project(end).s - line.project(start).s
}

fn bin(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Scores one trajectory in one scene. Under `V1` the components only used
/// by the extended metric are reported as 1.
pub fn compute_subscores(traj: &Trajectory, scene: &Scene, version: MetricVersion, cfg: &KernelConfig) -> Result<SubScores> {
    check_polygon_basic(&scene.drivable, "drivable area")?;
    if traj.len() < 2 || !(traj.dt > 0.0) {
        return Err(Error::InvalidArgument("trajectory needs at least 2 waypoints and positive dt".into()));
    }
    for a in &scene.agents {
        scene.check_agent(a, traj.len())?;
    }
    let line = Polyline::new(&scene.centerline)?;
    let m = ego_motion(traj, scene, cfg);
    let start = scene.ego_start.position();

    let expert_progress = progress(&line, start, scene.expert.position(scene.expert.len() - 1));
    let ep = if expert_progress < cfg.min_expert_progress {
        1.0
    } else {
        (progress(&line, start, traj.position(traj.len() - 1)) / expert_progress).clamp(0.0, 1.0)
    };

    let mut s = SubScores {
        nc: collision_score(traj, scene, &m, cfg),
        dac: drivable_score(scene, &m),
        ep,
        ttc: ttc_score(scene, &m, traj.dt, cfg),
        comfort: bin(comfortable(&m.vel[1..], traj.dt, cfg.a_max, cfg.j_max)),
        ..SubScores::ones()
    };
    if version == MetricVersion::V1 {
        return Ok(s);
    }

    let (sh, ch) = scene.ego_start.theta.sin_cos();
    let mut hist = vec![[scene.ego_start.v * ch, scene.ego_start.v * sh]];
    hist.extend_from_slice(&m.vel);
    s.hc = bin(comfortable(&hist, traj.dt, cfg.a_max, cfg.j_max));
    s.ec = bin(comfortable(&m.vel[1..], traj.dt, cfg.ec_scale * cfg.a_max, cfg.ec_scale * cfg.j_max));

    let mut worst_dev: f64 = 0.0;
    let mut worst_lat: f64 = 0.0;
    for (k, w) in traj.waypoints.iter().enumerate() {
        let p = line.project(traj.position(k));
        worst_lat = worst_lat.max(p.lateral.abs());
        let allowed = scene.direction_field.get(p.segment).copied().unwrap_or_else(|| line.segment_heading(p.segment));
        worst_dev = worst_dev.max(wrap_angle(w[2] - allowed).abs());
    }
    s.lk = bin(worst_lat <= cfg.w_lk);
    s.ddc = if worst_dev <= std::f64::consts::FRAC_PI_4 {
        1.0
    } else if worst_dev <= std::f64::consts::FRAC_PI_2 {
        0.5
    } else {
        0.0
    };
    if let (true, Some(zone)) = (scene.red_light, &scene.red_light_zone) {
        check_polygon_basic(zone, "red-light zone")?;
        let ran = (0..traj.len()).any(|k| point_in_polygon(traj.position(k), zone));
        s.tlc = bin(!ran);
    }
    Ok(s)
}
