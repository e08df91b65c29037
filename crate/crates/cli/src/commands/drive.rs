use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use dualdrive::scene::{compute_subscores, scores_csv, KernelConfig, MetricVersion, ScoreRow, SubScores};
use dualdrive::selection::{
    advantage_records, gamma_for_fast_fraction, ground_truth_score, interpolate_candidates, oracle_best_of_n, records_csv,
    route_table, scorer_train, select, sweep_table, win_count, win_reports_csv, CandidateSet, DualConfig, GroundTruthScorer,
    ScorerConfig, ScorerModel, ScorerSample, SubScorePredictor, CANDIDATES_HEADER, DEFAULT_INTERIOR_ALPHAS,
};
use dualdrive::synth::{gen_benchmark, BenchmarkSpec, ScenarioSet};
use dualdrive::table::{fmt_f64, Csv};

use super::{load_benchmark, load_records, overlay, parse_serde, read_text, to_json, Command};
use crate::error::{CliError, CliResult};
use crate::run::RunDir;

pub const SCORER_FILE_VERSION: &str = "SCR1";

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn check_seed_index(set: &ScenarioSet, i: usize) -> CliResult<()> {
    if i >= set.spec.seeds.len() {
        return Err(CliError::Config(format!(
            "seed_index {i} out of range; the benchmark has {} policy seeds",
            set.spec.seeds.len()
        )));
    }
    Ok(())
}

// gen-benchmark -------------------------------------------------------------

#[derive(Args, Debug, Clone, Default)]
pub struct GenBenchmarkArgs {
    #[arg(long)]
    n_scenes: Option<usize>,
    /// Comma-separated policy seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    difficulty: Option<f64>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
}

impl Command for GenBenchmarkArgs {
    const NAME: &'static str = "gen-benchmark";
    type Params = BenchmarkSpec;

    fn apply(&self, p: &mut Self::Params) {
        overlay!(p, self; n_scenes, seeds, difficulty, horizon, dt);
    }

    fn set_seed(p: &mut Self::Params, seed: u64) {
        p.scene_seed = seed;
    }

    fn run(p: &Self::Params, run: &mut RunDir) -> CliResult<()> {
        let set = gen_benchmark(p)?;
        for rel in set.write_dir(run.dir())? {
            run.record_output(&rel)?;
        }
        let count = |f: fn(&dualdrive::synth::BenchmarkScenario) -> &Vec<bool>| {
            set.scenarios.iter().map(|s| f(s).iter().filter(|&&b| b).count()).sum::<usize>() as f64
        };
        run.value("n_scenes", set.scenarios.len() as f64);
        run.value("fast_failures", count(|s| &s.fast_failed));
        run.value("slow_failures", count(|s| &s.slow_failed));
        Ok(())
    }
}

// shared flags --------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchParams {
    pub benchmark: Option<PathBuf>,
    pub version: MetricVersion,
    pub kernel: KernelConfig,
}

impl Default for BenchParams {
    fn default() -> Self {
        BenchParams {
            benchmark: None,
            version: MetricVersion::V1,
            kernel: KernelConfig::default(),
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct BenchArgs {
    /// Directory written by gen-benchmark.
    #[arg(long)]
    benchmark: Option<PathBuf>,
    /// v1 or v2.
    #[arg(long, value_parser = parse_serde::<MetricVersion>)]
    version: Option<MetricVersion>,
}


// score ---------------------------------------------------------------------

#[derive(Args, Debug, Clone, Default)]
pub struct ScoreArgs {
    #[command(flatten)]
    bench: BenchArgs,
}

impl Command for ScoreArgs {
    const NAME: &'static str = "score";
    type Params = BenchParams;

    fn apply(&self, p: &mut Self::Params) {
        overlay!(p, self.bench; benchmark, version);
    }

    fn run(p: &Self::Params, run: &mut RunDir) -> CliResult<()> {
        let set = load_benchmark(run, &p.benchmark)?;
        let mut rows = Vec::new();
        let mut by_policy: Vec<(String, Vec<SubScores>)> = vec![("expert".into(), Vec::new()), ("fast".into(), Vec::new()), ("slow".into(), Vec::new())];
        for sc in &set.scenarios {
            let human = compute_subscores(&sc.scene.expert, &sc.scene, p.version, &p.kernel)?;
            rows.push(ScoreRow::new(&sc.id, "expert", human, &human));
            by_policy[0].1.push(human);
            for (r, seed) in set.spec.seeds.iter().enumerate() {
                for (k, name, traj) in [(1, "fast", &sc.fast[r]), (2, "slow", &sc.slow[r])] {
                    let s = compute_subscores(traj, &sc.scene, p.version, &p.kernel)?;
                    rows.push(ScoreRow::new(&sc.id, &format!("{name}:{seed}"), s, &human));
                    by_policy[k].1.push(s);
                }
            }
        }
        run.write("scores.csv", scores_csv(&rows))?;
        let records = advantage_records(&set, p.version, &p.kernel)?;
        run.write("advantage.csv", records_csv(&records))?;

        let vlm: Vec<f64> = records.iter().map(|r| r.s_vlm).collect();
        let vit: Vec<f64> = records.iter().map(|r| r.s_vit).collect();
        let best: Vec<f64> = records.iter().map(|r| r.s_vlm.max(r.s_vit)).collect();
        run.label("version", p.version.to_string());
        run.value("vlm_mean", mean(&vlm));
        run.value("vit_mean", mean(&vit));
        run.value("oracle_mean", mean(&best));
        for (name, subs) in &by_policy {
            for (j, comp) in SubScores::NAMES.iter().enumerate() {
                let v: Vec<f64> = subs.iter().map(|s| s.to_array()[j]).collect();
                run.value(&format!("{name}_{comp}"), mean(&v));
            }
        }
        Ok(())
    }
}

// bon -----------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BonParams {
    pub benchmark: Option<PathBuf>,
    pub version: MetricVersion,
    pub kernel: KernelConfig,
    pub interior_alphas: Vec<f64>,
    /// Also dump every candidate trajectory for this seed index.
    pub candidates_seed_index: Option<usize>,
}

impl Default for BonParams {
    fn default() -> Self {
        BonParams {
            benchmark: None,
            version: MetricVersion::V1,
            kernel: KernelConfig::default(),
            interior_alphas: DEFAULT_INTERIOR_ALPHAS.to_vec(),
            candidates_seed_index: None,
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct BonArgs {
    #[command(flatten)]
    bench: BenchArgs,
    /// Comma-separated interior alphas.
    #[arg(long, value_delimiter = ',')]
    interior_alphas: Option<Vec<f64>>,
    #[arg(long)]
    candidates_seed_index: Option<usize>,
}

impl Command for BonArgs {
    const NAME: &'static str = "bon";
    type Params = BonParams;

    fn apply(&self, p: &mut Self::Params) {
        overlay!(p, self.bench; benchmark, version);
        overlay!(p, self; interior_alphas, candidates_seed_index);
    }

    fn run(p: &Self::Params, run: &mut RunDir) -> CliResult<()> {
        let b = p;
        let set = load_benchmark(run, &b.benchmark)?;
        if let Some(i) = p.candidates_seed_index {
            check_seed_index(&set, i)?;
        }
        let mut csv = Csv::new(&["scenario_id", "seed", "s_vlm", "s_vit", "best_of_2", "best_of_n", "best_alpha", "midpoint"]);
        let mut cand_csv = Csv::new(&CANDIDATES_HEADER);
        let mut cols: [Vec<f64>; 5] = Default::default();
        for sc in &set.scenarios {
            for (r, seed) in set.spec.seeds.iter().enumerate() {
                let (fast, slow) = (&sc.fast[r], &sc.slow[r]);
                let s_vlm = ground_truth_score(slow, &sc.scene, b.version, &b.kernel)?;
                let s_vit = ground_truth_score(fast, &sc.scene, b.version, &b.kernel)?;
                let c = interpolate_candidates(fast, slow, &p.interior_alphas)?;
                let (i, best_n) = oracle_best_of_n(&c, &sc.scene, b.version, &b.kernel)?;
                let mid = interpolate_candidates(fast, slow, &[0.5])?;
                let midpoint = ground_truth_score(&mid.trajectories[1], &sc.scene, b.version, &b.kernel)?;
                let best_2 = s_vlm.max(s_vit);
                csv.row([
                    sc.id.clone(),
                    seed.to_string(),
                    fmt_f64(s_vlm),
                    fmt_f64(s_vit),
                    fmt_f64(best_2),
                    fmt_f64(best_n),
                    fmt_f64(c.alphas[i]),
                    fmt_f64(midpoint),
                ]);
                for (col, v) in cols.iter_mut().zip([s_vlm, s_vit, best_2, best_n, midpoint]) {
                    col.push(v);
                }
                if p.candidates_seed_index == Some(r) {
                    c.to_csv(&sc.id, &mut cand_csv);
                }
            }
        }
        run.write("bon.csv", csv.into_string())?;
        if p.candidates_seed_index.is_some() {
            run.write("candidates.csv", cand_csv.into_string())?;
        }
        run.label("version", b.version.to_string());
        for (name, col) in ["vlm_mean", "vit_mean", "best_of_2_mean", "best_of_n_mean", "midpoint_mean"].iter().zip(&cols) {
            run.value(name, mean(col));
        }
        Ok(())
    }
}

// scorer-train --------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScorerTrainParams {
    pub benchmark: Option<PathBuf>,
    pub version: MetricVersion,
    pub kernel: KernelConfig,
    /// Interior alphas whose candidates join the two endpoints as examples.
    pub train_alphas: Vec<f64>,
    pub scorer: ScorerConfig,
}

impl Default for ScorerTrainParams {
    fn default() -> Self {
        ScorerTrainParams {
            benchmark: None,
            version: MetricVersion::V1,
            kernel: KernelConfig::default(),
            train_alphas: vec![0.5],
            scorer: ScorerConfig::default(),
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct ScorerTrainArgs {
    #[command(flatten)]
    bench: BenchArgs,
    #[arg(long, value_delimiter = ',')]
    train_alphas: Option<Vec<f64>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    d_score: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScorerFile {
    version: String,
    model: ScorerModel,
}

impl Command for ScorerTrainArgs {
    const NAME: &'static str = "scorer-train";
    type Params = ScorerTrainParams;

    fn apply(&self, p: &mut Self::Params) {
        overlay!(p, self.bench; benchmark, version);
        overlay!(p, self; train_alphas);
        overlay!(p.scorer, self; epochs, batch_size, lr, d_score);
    }

    fn set_seed(p: &mut Self::Params, seed: u64) {
        p.scorer.seed = seed;
    }

    fn run(p: &Self::Params, run: &mut RunDir) -> CliResult<()> {
        let b = p;
        let set = load_benchmark(run, &b.benchmark)?;
        let mut samples = Vec::new();
        for sc in &set.scenarios {
            for r in 0..set.spec.seeds.len() {
                let c = interpolate_candidates(&sc.fast[r], &sc.slow[r], &p.train_alphas)?;
                for t in &c.trajectories {
                    let target = compute_subscores(t, &sc.scene, b.version, &b.kernel)?;
                    samples.push(ScorerSample::new(t, &sc.scene, &target)?);
                }
            }
        }
        let (model, history) = scorer_train(&samples, &p.scorer)?;
        let mut csv = Csv::new(&["epoch", "train_loss"]);
        for (e, l) in history.train_loss.iter().enumerate() {
            csv.row([(e + 1).to_string(), fmt_f64(*l)]);
        }
        run.write(
            "scorer.json",
            to_json(&ScorerFile {
                version: SCORER_FILE_VERSION.into(),
                model,
            })?,
        )?;
        run.write("history.csv", csv.into_string())?;
        run.value("samples", samples.len() as f64);
        if let Some(l) = history.train_loss.last() {
            run.value("final_loss", *l);
        }
        Ok(())
    }
}

fn load_scorer(run: &mut RunDir, path: &Option<PathBuf>, kernel: KernelConfig) -> CliResult<Box<dyn SubScorePredictor>> {
    match path {
        None => Ok(Box::new(GroundTruthScorer {
            version: MetricVersion::V1,
            kernel,
        })),
        Some(path) => {
            let text = read_text(run, path)?;
            let v: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            let found = v.get("version").and_then(|s| s.as_str()).unwrap_or("");
            if found != SCORER_FILE_VERSION {
                return Err(CliError::Data(format!(
                    "{}: expected scorer version {SCORER_FILE_VERSION}, found {found:?}",
                    path.display()
                )));
            }
            let f: ScorerFile = serde_json::from_value(v).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            Ok(Box::new(f.model))
        }
    }
}

// select --------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectParams {
    pub benchmark: Option<PathBuf>,
    pub version: MetricVersion,
    pub kernel: KernelConfig,
    /// Trained scorer; the exact sub-scores are used when absent.
    pub scorer: Option<PathBuf>,
    pub interior_alphas: Vec<f64>,
}

impl Default for SelectParams {
    fn default() -> Self {
        SelectParams {
            benchmark: None,
            version: MetricVersion::V1,
            kernel: KernelConfig::default(),
            scorer: None,
            interior_alphas: DEFAULT_INTERIOR_ALPHAS.to_vec(),
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct SelectArgs {
    #[command(flatten)]
    bench: BenchArgs,
    #[arg(long)]
    scorer: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    interior_alphas: Option<Vec<f64>>,
}

impl Command for SelectArgs {
    const NAME: &'static str = "select";
    type Params = SelectParams;

    fn apply(&self, p: &mut Self::Params) {
        overlay!(p, self.bench; benchmark, version);
        overlay!(p, self; scorer, interior_alphas);
    }

    fn run(p: &Self::Params, run: &mut RunDir) -> CliResult<()> {
        let b = p;
        let set = load_benchmark(run, &b.benchmark)?;
        let scorer = load_scorer(run, &p.scorer, p.kernel)?;
        let mut csv = Csv::new(&[
            "scenario_id",
            "seed",
            "alpha",
            "meta",
            "score",
            "endpoint_alpha",
            "endpoint_score",
            "s_vlm",
            "s_vit",
        ]);
        let mut cols: [Vec<f64>; 4] = Default::default();
        for sc in &set.scenarios {
            for (r, seed) in set.spec.seeds.iter().enumerate() {
                let (fast, slow) = (&sc.fast[r], &sc.slow[r]);
                let c = interpolate_candidates(fast, slow, &p.interior_alphas)?;
                let (i, meta) = select(&c, scorer.as_ref(), &sc.scene)?;
                let score = ground_truth_score(&c.trajectories[i], &sc.scene, b.version, &b.kernel)?;
                let ends = CandidateSet::pair(slow, fast);
                let (j, _) = select(&ends, scorer.as_ref(), &sc.scene)?;
                let end_score = ground_truth_score(&ends.trajectories[j], &sc.scene, b.version, &b.kernel)?;
                let s_vlm = ground_truth_score(slow, &sc.scene, b.version, &b.kernel)?;
                let s_vit = ground_truth_score(fast, &sc.scene, b.version, &b.kernel)?;
                csv.row([
                    sc.id.clone(),
                    seed.to_string(),
                    fmt_f64(c.alphas[i]),
                    fmt_f64(meta),
                    fmt_f64(score),
                    fmt_f64(ends.alphas[j]),
                    fmt_f64(end_score),
                    fmt_f64(s_vlm),
                    fmt_f64(s_vit),
                ]);
                for (col, v) in cols.iter_mut().zip([score, end_score, s_vlm, s_vit]) {
                    col.push(v);
                }
            }
        }
        run.write("selection.csv", csv.into_string())?;
        run.label("version", b.version.to_string());
        run.label("scorer", if p.scorer.is_some() { "learned" } else { "ground_truth" });
        for (name, col) in ["selected_mean", "endpoints_mean", "vlm_mean", "vit_mean"].iter().zip(&cols) {
            run.value(name, mean(col));
        }
        Ok(())
    }
}

// dual-sweep ----------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DualSweepParams {
    pub benchmark: Option<PathBuf>,
    pub version: MetricVersion,
    pub kernel: KernelConfig,
    pub scorer: Option<PathBuf>,
    pub seed_index: usize,
    pub gammas: Vec<f64>,
    /// Fast-path share whose threshold is reported separately.
    pub target_fast_fraction: f64,
    pub dual: DualConfig,
}

impl Default for DualSweepParams {
    fn default() -> Self {
        DualSweepParams {
            benchmark: None,
            version: MetricVersion::V1,
            kernel: KernelConfig::default(),
            scorer: None,
            seed_index: 0,
            gammas: (0..=20).map(|i| i as f64 * 0.05).collect(),
            target_fast_fraction: 0.85,
            dual: DualConfig::default(),
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct DualSweepArgs {
    #[command(flatten)]
    bench: BenchArgs,
    #[arg(long)]
    scorer: Option<PathBuf>,
    #[arg(long)]
    seed_index: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    gammas: Option<Vec<f64>>,
    #[arg(long)]
    target_fast_fraction: Option<f64>,
    #[arg(long)]
    cost_fast: Option<f64>,
    #[arg(long)]
    cost_slow: Option<f64>,
    #[arg(long)]
    cost_score: Option<f64>,
    #[arg(long)]
    cost_select: Option<f64>,
}

impl Command for DualSweepArgs {
    const NAME: &'static str = "dual-sweep";
    type Params = DualSweepParams;

    fn apply(&self, p: &mut Self::Params) {
        overlay!(p, self.bench; benchmark, version);
        overlay!(p, self; scorer, seed_index, gammas, target_fast_fraction);
        overlay!(p.dual, self; cost_fast, cost_slow, cost_score, cost_select);
    }

    fn run(p: &Self::Params, run: &mut RunDir) -> CliResult<()> {
        let b = p;
        let set = load_benchmark(run, &b.benchmark)?;
        check_seed_index(&set, p.seed_index)?;
        let scorer = load_scorer(run, &p.scorer, p.kernel)?;
        let entries = route_table(&set, p.seed_index, scorer.as_ref(), b.version, &b.kernel)?;
        let curve = sweep_table(&entries, &p.gammas, &p.dual)?;
        run.write("tradeoff.csv", curve.to_csv())?;

        let mut routes = Csv::new(&["scenario_id", "fast_meta", "fast_score", "slow_path_score", "slow_path_alpha"]);
        for e in &entries {
            routes.row([
                e.scenario_id.clone(),
                fmt_f64(e.fast_meta),
                fmt_f64(e.fast_score),
                fmt_f64(e.slow_path_score),
                fmt_f64(e.slow_path_alpha),
            ]);
        }
        run.write("routes.csv", routes.into_string())?;

        let metas: Vec<f64> = entries.iter().map(|e| e.fast_meta).collect();
        let (gamma, achieved) = gamma_for_fast_fraction(&metas, p.target_fast_fraction)?;
        let at = sweep_table(&entries, &[gamma], &p.dual)?;
        let row = at.rows[0];
        let fast_only = sweep_table(&entries, &[0.0], &p.dual)?.rows[0].mean_score;
        let slow_only = mean(&entries.iter().map(|e| e.slow_path_score).collect::<Vec<_>>());
        run.label("version", b.version.to_string());
        run.label("scorer", if p.scorer.is_some() { "learned" } else { "ground_truth" });
        run.value("target_gamma", gamma);
        run.value("target_fast_fraction", achieved);
        run.value("target_mean_score", row.mean_score);
        run.value("target_speedup", at.speedup(&row));
        run.value("fast_only_mean", fast_only);
        run.value("slow_path_only_mean", slow_only);
        run.value("cost_slow", p.dual.cost_slow);
        Ok(())
    }
}

// wins ----------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WinsParams {
    /// Advantage records from `score`; takes precedence over `benchmark`.
    pub records: Option<PathBuf>,
    pub benchmark: Option<PathBuf>,
    pub version: MetricVersion,
    pub kernel: KernelConfig,
    pub taus: Vec<f64>,
}

impl Default for WinsParams {
    fn default() -> Self {
        WinsParams {
            records: None,
            benchmark: None,
            version: MetricVersion::V1,
            kernel: KernelConfig::default(),
            taus: vec![0.2, 0.5],
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct WinsArgs {
    #[arg(long)]
    records: Option<PathBuf>,
    #[command(flatten)]
    bench: BenchArgs,
    #[arg(long, value_delimiter = ',')]
    taus: Option<Vec<f64>>,
}

impl Command for WinsArgs {
    const NAME: &'static str = "wins";
    type Params = WinsParams;

    fn apply(&self, p: &mut Self::Params) {
        overlay!(p, self.bench; benchmark, version);
        overlay!(p, self; records, taus);
    }

    fn run(p: &Self::Params, run: &mut RunDir) -> CliResult<()> {
        let records = if p.records.is_some() {
            load_records(run, &p.records)?
        } else if p.benchmark.is_some() {
            let set = load_benchmark(run, &p.benchmark)?;
            advantage_records(&set, p.version, &p.kernel)?
        } else {
            return Err(CliError::Config("wins needs `records` or `benchmark`".into()));
        };
        let reports = p.taus.iter().map(|&t| win_count(&records, t)).collect::<dualdrive::Result<Vec<_>>>()?;
        run.write("wins.csv", win_reports_csv(&reports))?;
        run.value("records", records.len() as f64);
        for r in &reports {
            let t = fmt_f64(r.tau);
            run.value(&format!("vlm_wins_{t}"), r.vlm_wins as f64);
            run.value(&format!("vit_wins_{t}"), r.vit_wins as f64);
            run.value(&format!("stable_vlm_{t}"), r.stable_vlm as f64);
            run.value(&format!("stable_vit_{t}"), r.stable_vit as f64);
        }
        Ok(())
    }
}
