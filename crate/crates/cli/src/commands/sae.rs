use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use dualdrive::features::{FeaturePairDataset, Level};
use dualdrive::sae::{
    load_checkpoint, sae_metrics, sae_sweep, sae_train, shuffled_pair_control, variance_attribution, SaeCheckpoint,
    SaeLossWeights, SaeMetrics, StandardizedPair, SweepCell, TrainConfig, VarianceReport, DEFAULT_CROSS_WEIGHTS,
};
use dualdrive::table::{fmt_f64, Csv};

use super::features::parse_level;
use super::{kv_csv, load_pair, overlay, require, Command};
use crate::error::{CliError, CliResult};
use crate::run::RunDir;

/// Flags shared by every SAE training command.
#[derive(Args, Debug, Clone, Default)]
pub struct SaeArgs {
    #[arg(long)]
    x: Option<PathBuf>,
    #[arg(long)]
    y: Option<PathBuf>,
    #[arg(long, value_parser = parse_level)]
    level: Option<Level>,
    /// Leading share of the paired rows used for training.
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    d_s: Option<usize>,
    #[arg(long)]
    d_u: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Weight of the cross-reconstruction term.
    #[arg(long)]
    cross: Option<f64>,
    #[arg(long)]
    use_raw_mse: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaeTrainParams {
    pub x: Option<PathBuf>,
    pub y: Option<PathBuf>,
    pub level: Level,
    pub train_fraction: f64,
    pub train: TrainConfig,
    pub weights: SaeLossWeights,
}

impl Default for SaeTrainParams {
    fn default() -> Self {
        SaeTrainParams {
            x: None,
            y: None,
            level: Level::Backbone,
            train_fraction: 0.8,
            train: TrainConfig::default(),
            weights: SaeLossWeights::default(),
        }
    }
}

impl SaeArgs {
    fn apply_to(&self, p: &mut SaeTrainParams) {
        overlay!(p, self; x, y, level, train_fraction);
        overlay!(p.train, self; epochs, batch_size, lr, d_s, d_u, hidden);
        overlay!(p.weights, self; cross, use_raw_mse);
    }
}

/// Raw pair split into standardized train and held-out parts.
struct Prepared {
    train: StandardizedPair,
    test: StandardizedPair,
}

fn prepare(run: &mut RunDir, p: &SaeTrainParams) -> CliResult<Prepared> {
    let raw = load_pair(run, &p.x, &p.y, p.level)?;
    if !(p.train_fraction > 0.0 && p.train_fraction < 1.0) {
        return Err(CliError::Config(format!("train_fraction must lie in (0, 1), got {}", p.train_fraction)));
    }
    let n_train = (raw.n() as f64 * p.train_fraction).round() as usize;
    let (tr, te) = raw.split_at(n_train)?;
    let train = StandardizedPair::fit(&tr)?;
    let test = train.apply(&te)?;
    Ok(Prepared { train, test })
}

fn metrics_csv(m: &SaeMetrics) -> String {
    kv_csv(&[
        ("r2_full_x", m.r2_full_x),
        ("r2_full_y", m.r2_full_y),
        ("r2_shared_x", m.r2_shared_x),
        ("r2_shared_y", m.r2_shared_y),
        ("r2_cross_x", m.r2_cross_x),
        ("r2_cross_y", m.r2_cross_y),
        ("gap_x", m.gap_x),
        ("gap_y", m.gap_y),
        ("cka_shared", m.cka_shared),
        ("cka_orig", m.cka_orig),
    ])
}

fn variance_csv(v: &VarianceReport) -> String {
    let mut csv = Csv::new(&[
        "branch",
        "var_shared",
        "var_unique",
        "covariance_term",
        "var_residual",
        "var_epsilon",
        "residual_cross",
        "var_total",
        "identity_defect",
    ]);
    for (name, b) in [("x", &v.x), ("y", &v.y)] {
        let mut row = vec![name.to_string()];
        row.extend(
            [
                b.var_shared,
                b.var_unique,
                b.covariance_term,
                b.var_residual,
                b.var_epsilon,
                b.residual_cross,
                b.var_total,
                b.identity_defect(),
            ]
            .map(fmt_f64),
        );
        csv.row(row);
    }
    csv.into_string()
}

fn record_metrics(run: &mut RunDir, m: &SaeMetrics) {
    for (k, v) in [
        ("r2_full_x", m.r2_full_x),
        ("r2_full_y", m.r2_full_y),
        ("r2_shared_x", m.r2_shared_x),
        ("r2_shared_y", m.r2_shared_y),
        ("r2_cross_x", m.r2_cross_x),
        ("r2_cross_y", m.r2_cross_y),
        ("cka_shared", m.cka_shared),
        ("cka_orig", m.cka_orig),
    ] {
        run.value(k, v);
    }
}

fn evaluate(run: &mut RunDir, model: &dualdrive::sae::SaeModel, data: &FeaturePairDataset) -> CliResult<()> {
    let m = sae_metrics(model, data)?;
    let v = variance_attribution(model, data)?;
    run.write("metrics.csv", metrics_csv(&m))?;
    run.write("variance.csv", variance_csv(&v))?;
    record_metrics(run, &m);
    Ok(())
}

// sae-train -----------------------------------------------------------------

#[derive(Args, Debug, Clone, Default)]
pub struct SaeTrainArgs {
    #[command(flatten)]
    sae: SaeArgs,
}

impl Command for SaeTrainArgs {
    const NAME: &'static str = "sae-train";
    type Params = SaeTrainParams;

    fn apply(&self, p: &mut Self::Params) {
        self.sae.apply_to(p);
    }

    fn set_seed(p: &mut Self::Params, seed: u64) {
        p.train.seed = seed;
    }

    fn run(p: &Self::Params, run: &mut RunDir) -> CliResult<()> {
        let d = prepare(run, p)?;
        let (model, history) = sae_train(&d.train, &p.weights, &p.train)?;
        let ckpt = SaeCheckpoint::new(&model, d.train.std_x.clone(), d.train.std_y.clone());
        run.write("checkpoint.json", ckpt.to_json() + "\n")?;
        run.write("history.csv", history.to_csv())?;
        evaluate(run, &model, &d.test.data)?;
        run.label("feature", p.level.to_string());
        run.value("cross_weight", p.weights.cross);
        run.value("use_raw_mse", if p.weights.use_raw_mse { 1.0 } else { 0.0 });
        Ok(())
    }
}

// sae-eval ------------------------------------------------------------------

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaeEvalParams {
    pub checkpoint: Option<PathBuf>,
    pub x: Option<PathBuf>,
    pub y: Option<PathBuf>,
    pub level: Level,
}

#[derive(Args, Debug, Clone, Default)]
pub struct SaeEvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    x: Option<PathBuf>,
    #[arg(long)]
    y: Option<PathBuf>,
    #[arg(long, value_parser = parse_level)]
    level: Option<Level>,
}

impl Command for SaeEvalArgs {
    const NAME: &'static str = "sae-eval";
    type Params = SaeEvalParams;

    fn apply(&self, p: &mut Self::Params) {
        overlay!(p, self; checkpoint, x, y, level);
    }

    fn run(p: &Self::Params, run: &mut RunDir) -> CliResult<()> {
        let path = require(&p.checkpoint, "checkpoint")?;
        run.input(path)?;
        let ckpt = load_checkpoint(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let model = ckpt.model()?;
        let raw = load_pair(run, &p.x, &p.y, p.level)?;
        let data = StandardizedPair::with_stats(&raw, ckpt.standardizer_x.clone(), ckpt.standardizer_y.clone())?;
        evaluate(run, &model, &data.data)?;
        run.label("feature", p.level.to_string());
        Ok(())
    }
}

// sae-sweep -----------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaeSweepParams {
    pub x: Option<PathBuf>,
    pub y: Option<PathBuf>,
    pub level: Level,
    pub train_fraction: f64,
    pub train: TrainConfig,
    pub weights: SaeLossWeights,
    pub cross_weights: Vec<f64>,
    pub raw_modes: Vec<bool>,
}

impl Default for SaeSweepParams {
    fn default() -> Self {
        let b = SaeTrainParams::default();
        SaeSweepParams {
            x: b.x,
            y: b.y,
            level: b.level,
            train_fraction: b.train_fraction,
            train: b.train,
            weights: b.weights,
            cross_weights: DEFAULT_CROSS_WEIGHTS.to_vec(),
            raw_modes: vec![false, true],
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct SaeSweepArgs {
    #[command(flatten)]
    sae: SaeArgs,
    /// Comma-separated cross weights.
    #[arg(long, value_delimiter = ',')]
    cross_weights: Option<Vec<f64>>,
    /// Comma-separated use_raw_mse settings.
    #[arg(long, value_delimiter = ',')]
    raw_modes: Option<Vec<bool>>,
}

impl Command for SaeSweepArgs {
    const NAME: &'static str = "sae-sweep";
    type Params = SaeSweepParams;

    fn apply(&self, p: &mut Self::Params) {
        overlay!(p, self.sae; x, y, level, train_fraction);
        overlay!(p.train, self.sae; epochs, batch_size, lr, d_s, d_u, hidden);
        overlay!(p.weights, self.sae; cross, use_raw_mse);
        overlay!(p, self; cross_weights, raw_modes);
    }

    fn set_seed(p: &mut Self::Params, seed: u64) {
        p.train.seed = seed;
    }

    fn run(p: &Self::Params, run: &mut RunDir) -> CliResult<()> {
        let base = SaeTrainParams {
            x: p.x.clone(),
            y: p.y.clone(),
            level: p.level,
            train_fraction: p.train_fraction,
            train: p.train,
            weights: p.weights,
        };
        let d = prepare(run, &base)?;
        let grid: Vec<SweepCell> = p
            .raw_modes
            .iter()
            .flat_map(|&raw| {
                p.cross_weights.iter().map(move |&c| SweepCell {
                    use_raw_mse: raw,
                    cross_weight: c,
                })
            })
            .collect();
        let feature = p.level.to_string();
        let table = sae_sweep(&feature, &d.train, &d.test, &grid, &p.weights, &p.train)?;
        run.write("sweep.csv", table.to_csv())?;
        let (ok, total) = table.gap_trend();
        run.label("feature", feature);
        run.value("gap_trend_ok", ok as f64);
        run.value("gap_trend_total", total as f64);
        for r in &table.rows {
            let key = format!("{}_c{}", if r.cell.use_raw_mse { "raw" } else { "std" }, fmt_f64(r.cell.cross_weight));
            run.value(&format!("r2_shared_x_{key}"), r.metrics.r2_shared_x);
            run.value(&format!("r2_shared_y_{key}"), r.metrics.r2_shared_y);
            run.value(&format!("cka_shared_{key}"), r.metrics.cka_shared);
        }
        Ok(())
    }
}

// shuffle-control -----------------------------------------------------------

#[derive(Args, Debug, Clone, Default)]
pub struct ShuffleControlArgs {
    #[command(flatten)]
    sae: SaeArgs,
}

impl Command for ShuffleControlArgs {
    const NAME: &'static str = "shuffle-control";
    type Params = SaeTrainParams;

    fn apply(&self, p: &mut Self::Params) {
        self.sae.apply_to(p);
    }

    fn set_seed(p: &mut Self::Params, seed: u64) {
        p.train.seed = seed;
    }

    fn run(p: &Self::Params, run: &mut RunDir) -> CliResult<()> {
        let d = prepare(run, p)?;
        let r = shuffled_pair_control(&d.train, &p.weights, &p.train, None)?;
        let rows = [
            ("true_cka_shared", r.true_cka_shared),
            ("true_cka_orig", r.true_cka_orig),
            ("shuffled_cka_shared", r.shuffled_cka_shared),
            ("shuffled_cka_orig", r.shuffled_cka_orig),
        ];
        run.write("control.csv", kv_csv(&rows))?;
        for (k, v) in rows {
            run.value(k, v);
        }
        Ok(())
    }
}
