pub mod drive;
pub mod features;
pub mod gate;
pub mod report;
pub mod sae;

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use dualdrive::features::{load_features, pair, Branch, FeaturePairDataset, Level, Split};
use dualdrive::gating::BranchScores;
use dualdrive::selection::{parse_records_csv, AdvantageRecord};
use dualdrive::synth::ScenarioSet;
use dualdrive::table::{fmt_f64, Csv};

use crate::error::{CliError, CliResult};
use crate::run::RunDir;

/// One subcommand: its parameter block, flag overrides and body.
pub trait Command {
    const NAME: &'static str;
    type Params: Serialize + DeserializeOwned + Default;

    /// Copies every flag that was given into the parameter block.
    fn apply(&self, p: &mut Self::Params);

    fn set_seed(_p: &mut Self::Params, _seed: u64) {}

    fn run(p: &Self::Params, run: &mut RunDir) -> CliResult<()>;
}

/// Overwrites `p.field` with every `a.field` that is `Some`.
macro_rules! overlay {
    ($p:expr, $a:expr; $($f:ident),* $(,)?) => {
        $( if let Some(v) = $a.$f.clone() { $p.$f = v.into(); } )*
    };
}
pub(crate) use overlay;

pub(crate) fn require<'a, T>(v: &'a Option<T>, name: &str) -> CliResult<&'a T> {
    v.as_ref().ok_or_else(|| CliError::Config(format!("missing required parameter `{name}`")))
}

/// Loads x (VLM side) and y (vision side) and aligns them on sample ids.
pub(crate) fn load_pair(run: &mut RunDir, x: &Option<PathBuf>, y: &Option<PathBuf>, level: Level) -> CliResult<FeaturePairDataset> {
    let (xp, yp) = (require(x, "x")?, require(y, "y")?);
    run.input(xp)?;
    run.input(yp)?;
    let fx = load_features(xp, level, Branch::Vlm).map_err(|e| CliError::Data(format!("{}: {e}", xp.display())))?;
    let fy = load_features(yp, level, Branch::Vision).map_err(|e| CliError::Data(format!("{}: {e}", yp.display())))?;
    let p = pair(&fx, &fy, Split::Train)?;
    if !p.dropped_x.is_empty() || !p.dropped_y.is_empty() {
        log::warn!("{} x-only and {} y-only samples dropped", p.dropped_x.len(), p.dropped_y.len());
    }
    Ok(p.dataset)
}

pub(crate) fn load_benchmark(run: &mut RunDir, dir: &Option<PathBuf>) -> CliResult<ScenarioSet> {
    let d = require(dir, "benchmark")?;
    run.input_dir(d)?;
    ScenarioSet::load_dir(d).map_err(|e| CliError::Data(format!("{}: {e}", d.display())))
}

pub(crate) fn load_records(run: &mut RunDir, path: &Option<PathBuf>) -> CliResult<Vec<AdvantageRecord>> {
    let p = require(path, "records")?;
    run.input(p)?;
    let text = std::fs::read_to_string(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
    parse_records_csv(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
}

/// Branch scores from the records of one seed (the smallest when unset).
pub(crate) fn branch_scores(records: &[AdvantageRecord], seed: Option<u64>) -> CliResult<BranchScores> {
    let seed = match seed {
        Some(s) => s,
        None => records
            .iter()
            .map(|r| r.seed)
            .min()
            .ok_or_else(|| CliError::Data("no advantage records".into()))?,
    };
    let mut b = BranchScores::new();
    for r in records.iter().filter(|r| r.seed == seed) {
        b.insert(&r.scenario_id, r.s_vlm, r.s_vit);
    }
    if b.is_empty() {
        return Err(CliError::Data(format!("no advantage records for seed {seed}")));
    }
    Ok(b)
}

/// Two-column `metric,value` table.
pub(crate) fn kv_csv(rows: &[(&str, f64)]) -> String {
    let mut csv = Csv::new(&["metric", "value"]);
    for (k, v) in rows {
        csv.row([k.to_string(), fmt_f64(*v)]);
    }
    csv.into_string()
}

pub(crate) fn read_text(run: &mut RunDir, path: &Path) -> CliResult<String> {
    run.input(path)?;
    std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Parses a bare word through the type's serde representation.
pub(crate) fn parse_serde<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

pub(crate) fn to_json<T: Serialize>(v: &T) -> CliResult<String> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Data(e.to_string()))
}
