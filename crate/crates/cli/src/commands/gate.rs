use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use dualdrive::features::Level;
use dualdrive::gating::{
    decisions_csv, energy_decomposition, gate_evaluate, gate_inputs, learned_gate_predict, learned_gate_train, parse_decisions_csv,
    rule_decisions, threshold_sweep, BranchScores, Choice, GateConfig, GateDecision, GateEvaluation, GateFeatures, GateInput,
    GateModel, GateTrainConfig, Strategy, DEFAULT_TAUS,
};
use dualdrive::sae::{load_checkpoint, StandardizedPair};
use dualdrive::table::{fmt_f64, Csv};

use super::features::parse_level;
use super::{branch_scores, load_pair, load_records, overlay, parse_serde, read_text, require, to_json, Command};
use crate::error::{CliError, CliResult};
use crate::run::RunDir;

pub const GATE_MODEL_VERSION: &str = "GATE1";

fn evaluation_csv(rows: &[(String, GateEvaluation)]) -> String {
    let mut csv = Csv::new(&["method", "realized", "vlm_mean", "vit_mean", "oracle_mean", "min_mean", "vlm_fraction"]);
    for (name, e) in rows {
        let mut r = vec![name.clone()];
        r.extend([e.realized, e.vlm_mean, e.vit_mean, e.oracle_mean, e.min_mean, e.vlm_fraction].map(fmt_f64));
        csv.row(r);
    }
    csv.into_string()
}

fn record_evaluations(run: &mut RunDir, rows: &[(String, GateEvaluation)]) {
    if let Some((_, first)) = rows.first() {
        run.value("vlm_mean", first.vlm_mean);
        run.value("vit_mean", first.vit_mean);
        run.value("oracle_mean", first.oracle_mean);
    }
    for (name, e) in rows {
        run.value(&format!("realized_{name}"), e.realized);
        run.value(&format!("vlm_fraction_{name}"), e.vlm_fraction);
    }
}

// gate-rules ----------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateRulesParams {
    pub checkpoint: Option<PathBuf>,
    pub x: Option<PathBuf>,
    pub y: Option<PathBuf>,
    pub level: Level,
    pub strategies: Vec<Strategy>,
    pub gate: GateConfig,
    /// Advantage records; enables evaluation and the threshold sweep.
    pub records: Option<PathBuf>,
    /// Policy seed whose records supply the branch scores.
    pub record_seed: Option<u64>,
    pub taus: Vec<f64>,
}

impl Default for GateRulesParams {
    fn default() -> Self {
        GateRulesParams {
            checkpoint: None,
            x: None,
            y: None,
            level: Level::Backbone,
            strategies: Strategy::ALL.to_vec(),
            gate: GateConfig::default(),
            records: None,
            record_seed: None,
            taus: DEFAULT_TAUS.to_vec(),
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct GateRulesArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    x: Option<PathBuf>,
    #[arg(long)]
    y: Option<PathBuf>,
    #[arg(long, value_parser = parse_level)]
    level: Option<Level>,
    /// Comma-separated strategy names.
    #[arg(long, value_delimiter = ',', value_parser = parse_strategy)]
    strategies: Option<Vec<Strategy>>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    tau_strong: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long)]
    record_seed: Option<u64>,
    /// Comma-separated thresholds for the sweep.
    #[arg(long, value_delimiter = ',')]
    taus: Option<Vec<f64>>,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: dualdrive::Error| e.to_string())
}

impl Command for GateRulesArgs {
    const NAME: &'static str = "gate-rules";
    type Params = GateRulesParams;

    fn apply(&self, p: &mut Self::Params) {
        overlay!(p, self; checkpoint, x, y, level, strategies, records, taus);
        if self.record_seed.is_some() {
            p.record_seed = self.record_seed;
        }
        overlay!(p.gate, self; tau, kappa, tau_strong, epsilon);
    }

    fn run(p: &Self::Params, run: &mut RunDir) -> CliResult<()> {
        if p.strategies.is_empty() {
            return Err(CliError::Config("no gating strategies selected".into()));
        }
        let path = require(&p.checkpoint, "checkpoint")?;
        run.input(path)?;
        let ckpt = load_checkpoint(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let model = ckpt.model()?;
        let raw = load_pair(run, &p.x, &p.y, p.level)?;
        let ds = StandardizedPair::with_stats(&raw, ckpt.standardizer_x.clone(), ckpt.standardizer_y.clone())?;
        let energies = energy_decomposition(&model, ds.data.x.values(), ds.data.y.values())?;
        let feats: Vec<(String, GateFeatures)> = ds.data.x.sample_ids().iter().cloned().zip(energies).collect();

        let mut all = Vec::new();
        for &s in &p.strategies {
            let d = rule_decisions(&feats, s, &p.gate)?;
            run.write(&format!("decisions_{}.csv", s.name()), decisions_csv(&d))?;
            all.push((s, d));
        }
        for (s, d) in &all {
            run.value(&format!("vlm_fraction_{}", s.name()), vlm_fraction(d));
        }

        if p.records.is_some() {
            let records = load_records(run, &p.records)?;
            let scores = branch_scores(&records, p.record_seed)?;
            let mut rows = Vec::new();
            for (s, d) in &all {
                rows.push((s.name().to_string(), gate_evaluate(d, &scores)?));
            }
            run.write("evaluation.csv", evaluation_csv(&rows))?;
            let sweep = threshold_sweep(&feats, &scores, &p.strategies, &p.taus, &p.gate)?;
            run.write("tau_sweep.csv", sweep.to_csv())?;
            record_evaluations(run, &rows);
        }
        run.label("feature", p.level.to_string());
        Ok(())
    }
}

fn vlm_fraction(d: &[GateDecision]) -> f64 {
    d.iter().filter(|x| x.choice == Choice::Vlm).count() as f64 / d.len().max(1) as f64
}

// gate-train ----------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateTrainParams {
    pub x: Option<PathBuf>,
    pub y: Option<PathBuf>,
    pub level: Level,
    pub records: Option<PathBuf>,
    pub record_seed: Option<u64>,
    pub input: GateInput,
    /// Leading share of the paired rows used for fitting; the rest is decided.
    pub train_fraction: f64,
    pub train: GateTrainConfig,
}

impl Default for GateTrainParams {
    fn default() -> Self {
        GateTrainParams {
            x: None,
            y: None,
            level: Level::Backbone,
            records: None,
            record_seed: None,
            input: GateInput::Combined,
            train_fraction: 0.5,
            train: GateTrainConfig::default(),
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct GateTrainArgs {
    #[arg(long)]
    x: Option<PathBuf>,
    #[arg(long)]
    y: Option<PathBuf>,
    #[arg(long, value_parser = parse_level)]
    level: Option<Level>,
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long)]
    record_seed: Option<u64>,
    /// concat, diff or combined.
    #[arg(long, value_parser = parse_serde::<GateInput>)]
    input: Option<GateInput>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GateModelFile {
    version: String,
    input: GateInput,
    model: GateModel,
}

impl Command for GateTrainArgs {
    const NAME: &'static str = "gate-train";
    type Params = GateTrainParams;

    fn apply(&self, p: &mut Self::Params) {
        overlay!(p, self; x, y, level, records, input, train_fraction);
        if self.record_seed.is_some() {
            p.record_seed = self.record_seed;
        }
        overlay!(p.train, self; epochs, batch_size, lr, hidden);
    }

    fn set_seed(p: &mut Self::Params, seed: u64) {
        p.train.seed = seed;
    }

    fn run(p: &Self::Params, run: &mut RunDir) -> CliResult<()> {
        let raw = load_pair(run, &p.x, &p.y, p.level)?;
        let records = load_records(run, &p.records)?;
        let scores = branch_scores(&records, p.record_seed)?;
        let n = raw.n();
        let n_train = (n as f64 * p.train_fraction).round() as usize;
        if !(p.train_fraction > 0.0 && p.train_fraction < 1.0) || n_train == 0 || n_train >= n {
            return Err(CliError::Config(format!("train_fraction {} leaves an empty split of {n} rows", p.train_fraction)));
        }
        let inputs = gate_inputs(raw.x.values(), raw.y.values(), p.input)?;
        let ids = raw.x.sample_ids().to_vec();
        let labels: Vec<Option<bool>> = ids.iter().map(|id| scores.label(id)).collect::<dualdrive::Result<_>>()?;
        let model = learned_gate_train(&inputs.rows(0, n_train).into_owned(), &labels[..n_train], &p.train)?;
        let probs = learned_gate_predict(&model, &inputs.rows(n_train, n - n_train).into_owned())?;
        let decisions: Vec<GateDecision> = ids[n_train..]
            .iter()
            .zip(&probs)
            .map(|(id, &s)| GateDecision {
                scenario_id: id.clone(),
                score: s,
                choice: if s >= 0.5 { Choice::Vlm } else { Choice::Vit },
            })
            .collect();
        let file = GateModelFile {
            version: GATE_MODEL_VERSION.into(),
            input: p.input,
            model,
        };
        run.write("gate_model.json", to_json(&file)?)?;
        run.write("decisions.csv", decisions_csv(&decisions))?;
        let rows = vec![("learned".to_string(), gate_evaluate(&decisions, &scores)?)];
        run.write("evaluation.csv", evaluation_csv(&rows))?;
        record_evaluations(run, &rows);
        run.value("train_rows", n_train as f64);
        run.value("decided_rows", (n - n_train) as f64);
        Ok(())
    }
}

// gate-eval -----------------------------------------------------------------

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateEvalParams {
    pub decisions: Option<PathBuf>,
    pub records: Option<PathBuf>,
    pub record_seed: Option<u64>,
    /// Label used in the evaluation table.
    pub method: Option<String>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GateEvalArgs {
    #[arg(long)]
    decisions: Option<PathBuf>,
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long)]
    record_seed: Option<u64>,
    #[arg(long)]
    method: Option<String>,
}

impl Command for GateEvalArgs {
    const NAME: &'static str = "gate-eval";
    type Params = GateEvalParams;

    fn apply(&self, p: &mut Self::Params) {
        if self.decisions.is_some() {
            p.decisions = self.decisions.clone();
        }
        if self.records.is_some() {
            p.records = self.records.clone();
        }
        if self.record_seed.is_some() {
            p.record_seed = self.record_seed;
        }
        if self.method.is_some() {
            p.method = self.method.clone();
        }
    }

    fn run(p: &Self::Params, run: &mut RunDir) -> CliResult<()> {
        let path = require(&p.decisions, "decisions")?.clone();
        let text = read_text(run, &path)?;
        let decisions = parse_decisions_csv(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let records = load_records(run, &p.records)?;
        let scores: BranchScores = branch_scores(&records, p.record_seed)?;
        let name = p.method.clone().unwrap_or_else(|| "gate".into());
        let rows = vec![(name.clone(), gate_evaluate(&decisions, &scores)?)];
        run.write("evaluation.csv", evaluation_csv(&rows))?;
        record_evaluations(run, &rows);
        run.label("method", name);
        Ok(())
    }
}
