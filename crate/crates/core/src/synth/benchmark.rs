//! Dual-style synthetic driving benchmark with planted failure tails.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::features::{planted_from_factors, PlantedSpec};
use crate::error::{Error, Result};
use crate::features::{load_features, write_features, Branch, FeaturePairDataset, Level, Split};
use crate::rng::{self, Stream, StreamRng};
use crate::scene::geometry::P2;
use crate::scene::{self, compute_subscores, pdms, Agent, EgoState, KernelConfig, MetricVersion, Scene, Trajectory};
use crate::table::{fmt_f64, write_atomic, Csv};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureMode {
    /// Closes onto the lead vehicle at the end of the horizon.
    RearEndRisk,
    /// Drifts sideways out of the drivable corridor.
    LateralDrift,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyStyle {
    pub speed_bias: f64,
    /// Signed path offset in metres, positive to the left.
    pub lateral_bias: f64,
    pub failure_rate: f64,
    pub failure_mode: FailureMode,
}

impl PolicyStyle {
    /// Cheap policy: expert pace, lateral drift tail.
    pub fn fast_default() -> Self {
        PolicyStyle {
            speed_bias: 1.0,
            lateral_bias: 0.1,
            failure_rate: 0.03,
            failure_mode: FailureMode::LateralDrift,
        }
    }

    /// Expensive policy: quicker, rear-end tail.
    pub fn slow_default() -> Self {
        PolicyStyle {
            speed_bias: 1.15,
            lateral_bias: -0.05,
            failure_rate: 0.025,
            failure_mode: FailureMode::RearEndRisk,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.speed_bias > 0.0 && self.speed_bias.is_finite()) {
            return Err(Error::InvalidArgument(format!("speed_bias must be positive, got {}", self.speed_bias)));
        }
        if !(0.0..1.0).contains(&self.failure_rate) || !self.lateral_bias.is_finite() {
            return Err(Error::InvalidArgument("failure_rate must lie in [0, 1) and lateral_bias be finite".into()));
        }
        Ok(())
    }
}

/// Shape of the paired feature rows attached to each scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureLayout {
    pub d_x: usize,
    pub d_y: usize,
    pub shared_dim: usize,
    pub unique_dim_x: usize,
    pub unique_dim_y: usize,
    pub shared_fraction: f64,
    pub noise_std: f64,
}

impl Default for FeatureLayout {
    fn default() -> Self {
        FeatureLayout {
            d_x: 16,
            d_y: 16,
            shared_dim: 4,
            unique_dim_x: 4,
            unique_dim_y: 4,
            shared_fraction: 0.5,
            noise_std: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkSpec {
    pub n_scenes: usize,
    pub fast: PolicyStyle,
    pub slow: PolicyStyle,
    /// One trajectory per policy per seed.
    pub seeds: Vec<u64>,
    /// In [0, 1]; raises agent count and narrows the corridor.
    pub difficulty: f64,
    pub scene_seed: u64,
    pub features: FeatureLayout,
    /// Relative standard deviation of the per-seed speed factor.
    pub speed_noise: f64,
    /// Standard deviation of the per-seed lateral offset, metres.
    pub lateral_noise: f64,
    pub max_attempts: usize,
    pub horizon: usize,
    pub dt: f64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            n_scenes: 500,
            fast: PolicyStyle::fast_default(),
            slow: PolicyStyle::slow_default(),
            seeds: vec![1, 2, 3],
            difficulty: 0.5,
            scene_seed: 0,
            features: FeatureLayout::default(),
            speed_noise: 0.04,
            lateral_noise: 0.05,
            max_attempts: 50,
            horizon: 8,
            dt: 0.5,
        }
    }
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_scenes == 0 {
            return Err(Error::InvalidArgument("n_scenes must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("at least one policy seed is required".into()));
        }
        self.fast.validate()?;
        self.slow.validate()?;
        if self.fast.failure_rate + self.slow.failure_rate >= 1.0 {
            return Err(Error::InvalidArgument("failure rates must sum to less than 1".into()));
        }
        if !(0.0..=1.0).contains(&self.difficulty) {
            return Err(Error::InvalidArgument(format!("difficulty must lie in [0, 1], got {}", self.difficulty)));
        }
        if self.horizon < 4 || !(self.dt > 0.0) || self.max_attempts == 0 {
            return Err(Error::InvalidArgument("horizon >= 4, dt > 0 and max_attempts >= 1 required".into()));
        }
        if !(self.speed_noise >= 0.0 && self.lateral_noise >= 0.0) {
            return Err(Error::InvalidArgument("noise levels must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkScenario {
    pub id: String,
    pub scene: Scene,
    /// Indexed like `BenchmarkSpec::seeds`.
    pub fast: Vec<Trajectory>,
    pub slow: Vec<Trajectory>,
    pub fast_failed: Vec<bool>,
    pub slow_failed: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    pub spec: BenchmarkSpec,
    pub scenarios: Vec<BenchmarkScenario>,
    /// x rows come from the slow policy, y rows from the fast one; absent
    /// with a single scene.
    pub features: Option<FeaturePairDataset>,
}

/// Constant-curvature reference path through the ego start.
struct Arc {
    kappa: f64,
}

impl Arc {
    fn heading(&self, s: f64) -> f64 {
        self.kappa * s
    }

    fn point(&self, s: f64, offset: f64) -> P2 {
        let h = self.heading(s);
        let (x, y) = if self.kappa.abs() < 1e-12 {
            (s, 0.0)
        } else {
            (h.sin() / self.kappa, (1.0 - h.cos()) / self.kappa)
        };
        [x - offset * h.sin(), y + offset * h.cos()]
    }
}

struct Layout {
    arc: Arc,
    width: f64,
    v0: f64,
    accel: f64,
    lead_gap: f64,
    lead_speed: f64,
}

impl Layout {
    fn expert_s(&self, t: f64) -> f64 {
        self.v0 * t + 0.5 * self.accel * t * t
    }
}

fn normal(rng: &mut StreamRng) -> f64 {
    StandardNormal.sample(rng)
}

fn agent_on_arc(arc: &Arc, s0: f64, speed: f64, offset: f64, t: usize, dt: f64) -> Agent {
    let s: Vec<f64> = (1..=t).map(|k| s0 + speed * k as f64 * dt).collect();
    Agent {
        positions: s.iter().map(|&s| arc.point(s, offset)).collect(),
        headings: s.iter().map(|&s| crate::scene::geometry::wrap_angle(arc.heading(s))).collect(),
        length: 4.5,
        width: 2.0,
    }
}

fn build_scene(spec: &BenchmarkSpec, rng: &mut StreamRng) -> Result<(Scene, Layout)> {
    let (t, dt) = (spec.horizon, spec.dt);
    let lay = {
        let kappa = rng.random_range(-0.005..=0.005);
        let width = 6.0 - 3.0 * spec.difficulty * rng.random::<f64>();
        let v0 = rng.random_range(5.0..=10.0);
        let accel = rng.random_range(-0.5..=1.0);
        let v_end = v0 + accel * t as f64 * dt;
        Layout {
            arc: Arc { kappa },
            width,
            v0,
            accel,
            lead_gap: 30.0 + 10.0 * rng.random::<f64>(),
            lead_speed: v_end.max(v0) + 1.0 + 2.0 * rng.random::<f64>(),
        }
    };
    let arc = &lay.arc;
    let horizon_s = lay.expert_s(t as f64 * dt);
    let s_max = horizon_s * 1.5 + 60.0;
    let grid: Vec<f64> = {
        let n = ((s_max + 40.0) / 2.0).ceil() as usize;
        (0..=n).map(|i| -40.0 + 2.0 * i as f64).collect()
    };
    let centerline: Vec<P2> = grid.iter().map(|&s| arc.point(s, 0.0)).collect();
    let half = lay.width / 2.0;
    let mut drivable: Vec<P2> = grid.iter().map(|&s| arc.point(s, -half)).collect();
    drivable.extend(grid.iter().rev().map(|&s| arc.point(s, half)));
    let direction_field: Vec<f64> = grid
        .windows(2)
        .map(|w| crate::scene::geometry::wrap_angle(arc.heading(0.5 * (w[0] + w[1]))))
        .collect();

    let expert = Trajectory::new(
        (1..=t)
            .map(|k| {
                let s = lay.expert_s(k as f64 * dt);
                let p = arc.point(s, 0.0);
                [p[0], p[1], arc.heading(s)]
            })
            .collect(),
        dt,
    )?;

    let max_agents = 1 + (5.0 * spec.difficulty).round() as usize;
    let n_agents = rng.random_range(1..=max_agents);
    let mut agents = vec![agent_on_arc(arc, lay.lead_gap, lay.lead_speed, 0.0, t, dt)];
    if n_agents >= 2 {
        let speed = (lay.v0 - 1.0 - rng.random::<f64>()).max(0.0);
        agents.push(agent_on_arc(arc, -25.0 - 10.0 * rng.random::<f64>(), speed, 0.0, t, dt));
    }
    for i in 2..n_agents {
        let side = if i % 2 == 0 { 1.0 } else { -1.0 };
        let s0 = rng.random_range(-20.0..60.0);
        let speed = rng.random_range(5.0..12.0);
        agents.push(agent_on_arc(arc, s0, speed, side * (half + 3.5), t, dt));
    }

    let red_light = rng.random::<f64>() < 0.3;
    let red_light_zone = red_light.then(|| {
        let (a, b) = (horizon_s + 12.0, horizon_s + 20.0);
        vec![arc.point(a, -half), arc.point(b, -half), arc.point(b, half), arc.point(a, half)]
    });

    let scene = Scene {
        ego_start: EgoState {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
            v: lay.v0,
        },
        agents,
        drivable,
        centerline,
        expert,
        red_light,
        red_light_zone,
        direction_field,
    };
    Ok((scene, lay))
}

fn policy_trajectory(lay: &Layout, t: usize, dt: f64, factor: f64, offset: f64) -> Result<Trajectory> {
    Trajectory::new(
        (1..=t)
            .map(|k| {
                let s = factor * lay.expert_s(k as f64 * dt);
                let p = lay.arc.point(s, offset);
                [p[0], p[1], lay.arc.heading(s)]
            })
            .collect(),
        dt,
    )
}

fn inject_failure(traj: &mut Trajectory, mode: FailureMode, scene: &Scene, lay: &Layout, offset: f64) {
    let t = traj.len();
    match mode {
        FailureMode::RearEndRisk => {
            let lead = &scene.agents[0];
            for (j, k) in (t - 3..t).enumerate() {
                let w = (j + 1) as f64 / 3.0;
                let (sh, ch) = lead.headings[k].sin_cos();
                let target = [lead.positions[k][0] - 1.0 * ch, lead.positions[k][1] - 1.0 * sh];
                let wp = &mut traj.waypoints[k];
                wp[0] += w * (target[0] - wp[0]);
                wp[1] += w * (target[1] - wp[1]);
                wp[2] = lead.headings[k];
            }
        }
        FailureMode::LateralDrift => {
            let side = if offset < 0.0 { -1.0 } else { 1.0 };
            let reach = lay.width / 2.0 + 1.5;
            for k in 0..t {
                let w = (k + 1) as f64 / t as f64;
                let h = traj.waypoints[k][2];
                traj.waypoints[k][0] -= side * w * reach * h.sin();
                traj.waypoints[k][1] += side * w * reach * h.cos();
            }
        }
    }
}

struct Draft {
    scene: Scene,
    fast: Vec<Trajectory>,
    slow: Vec<Trajectory>,
    fast_failed: Vec<bool>,
    slow_failed: Vec<bool>,
    stats: [f64; 8],
}

fn feasible(d: &Draft, cfg: &KernelConfig) -> Result<bool> {
    if !compute_subscores(&d.scene.expert, &d.scene, MetricVersion::V2, cfg)?.all_pass() {
        return Ok(false);
    }
    let pairs = d.fast.iter().zip(&d.fast_failed).chain(d.slow.iter().zip(&d.slow_failed));
    for (traj, &failed) in pairs {
        let s = compute_subscores(traj, &d.scene, MetricVersion::V1, cfg)?;
        let ok = if failed {
            pdms(&s) == 0.0
        } else {
            s.nc == 1.0 && s.dac == 1.0 && s.ttc == 1.0
        };
        if !ok {
            return Ok(false);
        }
    }
    Ok(true)
}

fn draft_scene(spec: &BenchmarkSpec, index: usize, attempt: usize) -> Result<Draft> {
    let sub = (index as u64) << 16 | attempt as u64;
    let (scene, lay) = build_scene(spec, &mut rng::stream(spec.scene_seed, Stream::Scene, sub))?;
    let slack = (lay.width / 2.0 - 1.0) * 0.4;
    let mut d = Draft {
        stats: [
            lay.v0,
            lay.accel,
            lay.arc.kappa,
            lay.width,
            scene.agents.len() as f64,
            if scene.red_light { 1.0 } else { 0.0 },
            lay.lead_gap,
            lay.lead_speed,
        ],
        scene,
        fast: Vec::new(),
        slow: Vec::new(),
        fast_failed: Vec::new(),
        slow_failed: Vec::new(),
    };
    for &seed in &spec.seeds {
        // Failure draws ignore the retry counter so tail rates stay exact.
        let u: f64 = rng::stream(seed, Stream::Policy, index as u64).random();
        let fast_fails = u < spec.fast.failure_rate;
        let slow_fails = !fast_fails && u < spec.fast.failure_rate + spec.slow.failure_rate;
        let mut noise = rng::stream(seed, Stream::SeedNoise, sub);
        for (style, fails, out, flags) in [
            (&spec.fast, fast_fails, &mut d.fast, &mut d.fast_failed),
            (&spec.slow, slow_fails, &mut d.slow, &mut d.slow_failed),
        ] {
            let factor = (style.speed_bias * (1.0 + spec.speed_noise * normal(&mut noise))).clamp(0.6, 1.3);
            let offset = (style.lateral_bias + spec.lateral_noise * normal(&mut noise)).clamp(-slack, slack);
            let mut traj = policy_trajectory(&lay, spec.horizon, spec.dt, factor, offset)?;
            if fails {
                inject_failure(&mut traj, style.failure_mode, &d.scene, &lay, offset);
            }
            out.push(traj);
            flags.push(fails);
        }
    }
    Ok(d)
}

fn scenario_id(i: usize) -> String {
    format!("scn{i:05}")
}

/// Generates scenes, per-seed policy trajectories and paired features.
/// Scenes whose expert is not all-pass, or whose policies do not behave as
/// planted, are regenerated up to `max_attempts` times.
pub fn gen_benchmark(spec: &BenchmarkSpec) -> Result<ScenarioSet> {
    spec.validate()?;
    let cfg = KernelConfig::default();
    let mut scenarios = Vec::with_capacity(spec.n_scenes);
    let mut stats = Vec::with_capacity(spec.n_scenes);
    for i in 0..spec.n_scenes {
        let mut found = None;
        for attempt in 0..spec.max_attempts {
            let d = draft_scene(spec, i, attempt)?;
            if feasible(&d, &cfg)? {
                found = Some(d);
                break;
            }
            log::debug!("scene {i} attempt {attempt} rejected");
        }
        let d = found.ok_or(Error::Infeasible {
            seed: spec.scene_seed,
            attempts: spec.max_attempts,
        })?;
        d.scene.validate()?;
        stats.push(d.stats);
        scenarios.push(BenchmarkScenario {
            id: scenario_id(i),
            scene: d.scene,
            fast: d.fast,
            slow: d.slow,
            fast_failed: d.fast_failed,
            slow_failed: d.slow_failed,
        });
    }
    let features = if spec.n_scenes >= 2 {
        Some(scene_features(spec, &stats, scenarios.iter().map(|s| s.id.clone()).collect())?)
    } else {
        None
    };
    Ok(ScenarioSet {
        spec: spec.clone(),
        scenarios,
        features,
    })
}

/// Shared factors mix standardized scene statistics with Gaussian noise.
fn scene_features(spec: &BenchmarkSpec, stats: &[[f64; 8]], ids: Vec<String>) -> Result<FeaturePairDataset> {
    let n = stats.len();
    let f = &spec.features;
    let mut z = DMatrix::from_fn(n, 8, |i, j| stats[i][j]);
    for mut col in z.column_iter_mut() {
        let mean = col.mean();
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        col.apply(|v| *v = if sd > 0.0 { (*v - mean) / sd } else { 0.0 });
    }
    let mut rng = rng::stream(spec.scene_seed, Stream::FeatureFactors, 0);
    let half = 0.5f64.sqrt();
    let shared = DMatrix::from_fn(n, f.shared_dim, |i, j| half * z[(i, j % 8)] + half * normal(&mut rng));
    let planted = PlantedSpec {
        n,
        d_x: f.d_x,
        d_y: f.d_y,
        shared_dim: f.shared_dim,
        unique_dim_x: f.unique_dim_x,
        unique_dim_y: f.unique_dim_y,
        shared_fraction: f.shared_fraction,
        noise_std: f.noise_std,
        seed: spec.scene_seed,
    };
    Ok(planted_from_factors(&planted, &shared, ids, Level::Backbone)?.0)
}

pub const TRAJECTORY_HEADER: [&str; 8] = ["scenario_id", "policy", "seed", "failed", "waypoint_index", "x", "y", "theta"];

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchmarkManifest {
    version: String,
    spec: BenchmarkSpec,
    scenes: Vec<String>,
    trajectories: String,
    features_x: Option<String>,
    features_y: Option<String>,
}

pub const BENCHMARK_VERSION: &str = "BENCH1";

impl ScenarioSet {
    pub fn trajectories_csv(&self) -> String {
        let mut csv = Csv::new(&TRAJECTORY_HEADER);
        for sc in &self.scenarios {
            for (r, seed) in self.spec.seeds.iter().enumerate() {
                for (policy, traj, failed) in [("fast", &sc.fast[r], sc.fast_failed[r]), ("slow", &sc.slow[r], sc.slow_failed[r])] {
                    for (k, w) in traj.waypoints.iter().enumerate() {
                        csv.row([
                            sc.id.clone(),
                            policy.to_string(),
                            seed.to_string(),
                            (failed as u8).to_string(),
                            k.to_string(),
                            fmt_f64(w[0]),
                            fmt_f64(w[1]),
                            fmt_f64(w[2]),
                        ]);
                    }
                }
            }
        }
        csv.into_string()
    }

    /// Writes scenes, trajectories, features and `benchmark.json` into `dir`.
    /// Returns the written paths relative to `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<Vec<String>> {
        std::fs::create_dir_all(dir.join("scenes"))?;
        let mut written = Vec::new();
        let mut scenes = Vec::new();
        for sc in &self.scenarios {
            let rel = format!("scenes/{}.json", sc.id);
            write_atomic(&dir.join(&rel), scene::scene_to_json(&sc.id, &sc.scene)?.as_bytes())?;
            scenes.push(rel);
        }
        written.extend(scenes.iter().cloned());
        write_atomic(&dir.join("trajectories.csv"), self.trajectories_csv().as_bytes())?;
        written.push("trajectories.csv".into());
        let (fx, fy) = match &self.features {
            Some(f) => {
                write_atomic(&dir.join("features_x.csv"), write_features(&f.x).as_bytes())?;
                write_atomic(&dir.join("features_y.csv"), write_features(&f.y).as_bytes())?;
                written.push("features_x.csv".into());
                written.push("features_y.csv".into());
                (Some("features_x.csv".to_string()), Some("features_y.csv".to_string()))
            }
            None => (None, None),
        };
        let manifest = BenchmarkManifest {
            version: BENCHMARK_VERSION.into(),
            spec: self.spec.clone(),
            scenes,
            trajectories: "trajectories.csv".into(),
            features_x: fx,
            features_y: fy,
        };
        write_atomic(&dir.join("benchmark.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
        written.push("benchmark.json".into());
        Ok(written)
    }

    pub fn load_dir(dir: &Path) -> Result<ScenarioSet> {
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("benchmark.json"))?)?;
        let found = v.get("version").and_then(|v| v.as_str()).unwrap_or("").to_string();
        if found != BENCHMARK_VERSION {
            return Err(Error::Version {
                expected: BENCHMARK_VERSION.into(),
                found,
            });
        }
        let m: BenchmarkManifest = serde_json::from_value(v)?;
        let mut scenarios = Vec::with_capacity(m.scenes.len());
        let mut index = std::collections::HashMap::new();
        for rel in &m.scenes {
            let (id, scene) = scene::load_scene(&dir.join(rel))?;
            index.insert(id.clone(), scenarios.len());
            scenarios.push(BenchmarkScenario {
                id,
                scene,
                fast: Vec::new(),
                slow: Vec::new(),
                fast_failed: Vec::new(),
                slow_failed: Vec::new(),
            });
        }
        parse_trajectories(&std::fs::read_to_string(dir.join(&m.trajectories))?, &m.spec, &index, &mut scenarios)?;
        let features = match (&m.features_x, &m.features_y) {
            (Some(fx), Some(fy)) => Some(FeaturePairDataset::new(
                load_features(&dir.join(fx), Level::Backbone, Branch::Vlm)?,
                load_features(&dir.join(fy), Level::Backbone, Branch::Vision)?,
                Split::Train,
            )?),
            _ => None,
        };
        Ok(ScenarioSet {
            spec: m.spec,
            scenarios,
            features,
        })
    }
}

fn parse_trajectories(
    text: &str,
    spec: &BenchmarkSpec,
    index: &std::collections::HashMap<String, usize>,
    scenarios: &mut [BenchmarkScenario],
) -> Result<()> {
    type Key = (usize, bool, usize);
    let mut rows: std::collections::BTreeMap<Key, (bool, Vec<[f64; 3]>)> = Default::default();
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, h)| h.trim()) != Some(TRAJECTORY_HEADER.join(",").as_str()) {
        return Err(Error::MalformedRow {
            line: 1,
            reason: "unexpected trajectory header".into(),
        });
    }
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| Error::MalformedRow { line: i + 1, reason };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != TRAJECTORY_HEADER.len() {
            return Err(bad(format!("expected {} fields", TRAJECTORY_HEADER.len())));
        }
        let sc = *index.get(f[0]).ok_or_else(|| Error::MissingScenario(f[0].into()))?;
        let fast = match f[1] {
            "fast" => true,
            "slow" => false,
            p => return Err(bad(format!("unknown policy {p:?}"))),
        };
        let seed: u64 = f[2].parse().map_err(|_| bad("bad seed".into()))?;
        let r = spec.seeds.iter().position(|&s| s == seed).ok_or_else(|| bad(format!("seed {seed} not in spec")))?;
        let failed = f[3] == "1";
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number {s:?}")));
        let entry = rows.entry((sc, fast, r)).or_insert((failed, Vec::new()));
        entry.1.push([num(f[5])?, num(f[6])?, num(f[7])?]);
    }
    for ((sc, fast, _), (failed, wps)) in rows {
        let t = Trajectory::new(wps, spec.dt)?;
        let s = &mut scenarios[sc];
        if fast {
            s.fast.push(t);
            s.fast_failed.push(failed);
        } else {
            s.slow.push(t);
            s.slow_failed.push(failed);
        }
    }
    for s in scenarios.iter() {
        if s.fast.len() != spec.seeds.len() || s.slow.len() != spec.seeds.len() {
            return Err(Error::MissingScenario(s.id.clone()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::mean_speed;

    fn small(n: usize) -> BenchmarkSpec {
        BenchmarkSpec {
            n_scenes: n,
            ..Default::default()
        }
    }

    #[test]
    fn experts_pass_and_failures_score_zero() {
        let set = gen_benchmark(&small(60)).unwrap();
        let cfg = KernelConfig::default();
        for sc in &set.scenarios {
            let e = compute_subscores(&sc.scene.expert, &sc.scene, MetricVersion::V2, &cfg).unwrap();
            assert!(e.all_pass(), "{}", sc.id);
            for r in 0..3 {
                let f = pdms(&compute_subscores(&sc.fast[r], &sc.scene, MetricVersion::V1, &cfg).unwrap());
                let s = pdms(&compute_subscores(&sc.slow[r], &sc.scene, MetricVersion::V1, &cfg).unwrap());
                assert_eq!(f == 0.0, sc.fast_failed[r]);
                assert_eq!(s == 0.0, sc.slow_failed[r]);
                assert!(!(sc.fast_failed[r] && sc.slow_failed[r]));
                if !sc.fast_failed[r] && !sc.slow_failed[r] {
                    assert!((s - f).abs() <= 0.2);
                }
            }
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = gen_benchmark(&small(10)).unwrap();
        let b = gen_benchmark(&small(10)).unwrap();
        assert_eq!(a.scenarios, b.scenarios);
        assert_eq!(a.trajectories_csv(), b.trajectories_csv());
        let c = gen_benchmark(&BenchmarkSpec {
            scene_seed: 1,
            ..small(10)
        })
        .unwrap();
        assert_ne!(a.scenarios[0].scene, c.scenarios[0].scene);
    }

    #[test]
    fn faster_style_is_faster_in_most_scenes() {
        let set = gen_benchmark(&small(100)).unwrap();
        let faster = set
            .scenarios
            .iter()
            .filter(|s| mean_speed(&s.slow[0]).unwrap() > mean_speed(&s.fast[0]).unwrap())
            .count();
        assert!(faster >= 60, "{faster}");
    }

    #[test]
    fn difficulty_bounds_agents_and_width() {
        for difficulty in [0.0, 1.0] {
            let set = gen_benchmark(&BenchmarkSpec {
                difficulty,
                ..small(40)
            })
            .unwrap();
            for s in &set.scenarios {
                let n = s.scene.agents.len();
                assert!((1..=6).contains(&n));
                if difficulty == 0.0 {
                    assert_eq!(n, 1);
                }
            }
        }
    }

    #[test]
    fn no_tails_means_no_failures() {
        let mut spec = small(30);
        spec.fast.failure_rate = 0.0;
        spec.slow.failure_rate = 0.0;
        let set = gen_benchmark(&spec).unwrap();
        assert!(set.scenarios.iter().all(|s| s.fast_failed.iter().chain(&s.slow_failed).all(|f| !f)));
    }

    #[test]
    fn directory_round_trip() {
        let set = gen_benchmark(&small(5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        set.write_dir(dir.path()).unwrap();
        let back = ScenarioSet::load_dir(dir.path()).unwrap();
        assert_eq!(back.scenarios, set.scenarios);
        assert_eq!(back.spec, set.spec);
        assert_eq!(back.features.unwrap().x.values(), set.features.unwrap().x.values());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(gen_benchmark(&small(0)).is_err());
        let mut s = small(3);
        s.fast.failure_rate = 0.6;
        s.slow.failure_rate = 0.5;
        assert!(gen_benchmark(&s).is_err());
    }
}
