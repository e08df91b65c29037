use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use dualdrive::features::{
    center, load_features, pair, procrustes, project_2d, write_features, Branch, FeatureMatrix, Level, Split, DEFAULT_ETA,
    DEFAULT_RIDGE,
};
use dualdrive::similarity::{aligned_energy, cca, cca_mean_at_k, linear_cka, permutation_null_ceiling, AlignedEnergyReport, Side};
use dualdrive::synth::{gen_paired_features, PlantedSpec};
use dualdrive::table::fmt_f64;

use super::{kv_csv, load_pair, overlay, Command};
use crate::error::{CliError, CliResult};
use crate::run::RunDir;

// gen-features -------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenFeaturesParams {
    pub n: usize,
    pub d_x: usize,
    pub d_y: usize,
    pub shared_dim: usize,
    pub unique_dim_x: usize,
    pub unique_dim_y: usize,
    pub shared_fraction: f64,
    pub noise_std: f64,
}

impl Default for GenFeaturesParams {
    fn default() -> Self {
        GenFeaturesParams {
            n: 1000,
            d_x: 32,
            d_y: 32,
            shared_dim: 8,
            unique_dim_x: 8,
            unique_dim_y: 8,
            shared_fraction: 0.5,
            noise_std: 0.3,
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct GenFeaturesArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d_x: Option<usize>,
    #[arg(long)]
    d_y: Option<usize>,
    #[arg(long)]
    shared_dim: Option<usize>,
    #[arg(long)]
    unique_dim_x: Option<usize>,
    #[arg(long)]
    unique_dim_y: Option<usize>,
    #[arg(long)]
    shared_fraction: Option<f64>,
    #[arg(long)]
    noise_std: Option<f64>,
}

impl Command for GenFeaturesArgs {
    const NAME: &'static str = "gen-features";
    type Params = GenFeaturesParams;

    fn apply(&self, p: &mut Self::Params) {
        overlay!(p, self; n, d_x, d_y, shared_dim, unique_dim_x, unique_dim_y, shared_fraction, noise_std);
    }

    fn run(p: &Self::Params, run: &mut RunDir) -> CliResult<()> {
        let spec = PlantedSpec {
            n: p.n,
            d_x: p.d_x,
            d_y: p.d_y,
            shared_dim: p.shared_dim,
            unique_dim_x: p.unique_dim_x,
            unique_dim_y: p.unique_dim_y,
            shared_fraction: p.shared_fraction,
            noise_std: p.noise_std,
            seed: run.seed(),
        };
        let (pair, truth) = gen_paired_features(&spec)?;
        run.write("features_x.csv", write_features(&pair.x))?;
        run.write("features_y.csv", write_features(&pair.y))?;
        run.write(
            "ground_truth.json",
            serde_json::to_string_pretty(&truth).map_err(|e| CliError::Data(e.to_string()))? + "\n",
        )?;
        run.value("empirical_shared_x", truth.empirical_shared_x);
        run.value("empirical_shared_y", truth.empirical_shared_y);
        Ok(())
    }
}

// cka -----------------------------------------------------------------------

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairParams {
    pub x: Option<PathBuf>,
    pub y: Option<PathBuf>,
    pub level: Level,
}

#[derive(Args, Debug, Clone, Default)]
pub struct PairArgs {
    /// VLM-side feature CSV.
    #[arg(long)]
    pub x: Option<PathBuf>,
    /// Vision-side feature CSV.
    #[arg(long)]
    pub y: Option<PathBuf>,
    #[arg(long, value_parser = parse_level)]
    pub level: Option<Level>,
}

pub(crate) fn parse_level(s: &str) -> Result<Level, String> {
    s.parse().map_err(|e: dualdrive::Error| e.to_string())
}

#[derive(Args, Debug, Clone, Default)]
pub struct CkaArgs {
    #[command(flatten)]
    pair: PairArgs,
}

impl Command for CkaArgs {
    const NAME: &'static str = "cka";
    type Params = PairParams;

    fn apply(&self, p: &mut Self::Params) {
        overlay!(p, self.pair; x, y, level);
    }

    fn run(p: &Self::Params, run: &mut RunDir) -> CliResult<()> {
        let d = load_pair(run, &p.x, &p.y, p.level)?;
        let v = linear_cka(&d.x, &d.y)?;
        run.write("cka.csv", kv_csv(&[("cka", v), ("n", d.n() as f64)]))?;
        println!("cka={}", fmt_f64(v));
        run.label("feature", p.level.to_string());
        run.value("cka", v);
        Ok(())
    }
}

// cca -----------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CcaParams {
    pub x: Option<PathBuf>,
    pub y: Option<PathBuf>,
    pub level: Level,
    pub eta: f64,
    pub ridge: f64,
    /// Thresholds for the aligned-energy report.
    pub taus: Vec<f64>,
    /// Number of leading correlations averaged for mean@k.
    pub k: usize,
    /// Row shuffles for the permutation-null ceiling; 0 skips it.
    pub shuffles: usize,
}

impl Default for CcaParams {
    fn default() -> Self {
        CcaParams {
            x: None,
            y: None,
            level: Level::Backbone,
            eta: DEFAULT_ETA,
            ridge: DEFAULT_RIDGE,
            taus: vec![0.8],
            k: 10,
            shuffles: 100,
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct CcaArgs {
    #[command(flatten)]
    pair: PairArgs,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    ridge: Option<f64>,
    /// Comma-separated aligned-energy thresholds.
    #[arg(long, value_delimiter = ',')]
    taus: Option<Vec<f64>>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    shuffles: Option<usize>,
}

impl Command for CcaArgs {
    const NAME: &'static str = "cca";
    type Params = CcaParams;

    fn apply(&self, p: &mut Self::Params) {
        overlay!(p, self.pair; x, y, level);
        overlay!(p, self; eta, ridge, taus, k, shuffles);
    }

    fn run(p: &Self::Params, run: &mut RunDir) -> CliResult<()> {
        let d = load_pair(run, &p.x, &p.y, p.level)?;
        let r = cca(&d, p.eta, p.ridge)?;
        let mut reports = Vec::new();
        for &tau in &p.taus {
            reports.push(aligned_energy(&d.x, &r, Side::X, tau)?);
            reports.push(aligned_energy(&d.y, &r, Side::Y, tau)?);
        }
        run.write("cca_spectrum.csv", r.spectrum_csv())?;
        run.write("aligned_energy.csv", AlignedEnergyReport::csv(&reports))?;
        let k = p.k.min(r.k());
        let mean_k = cca_mean_at_k(&r, k)?;
        let mut rows = vec![("k", k as f64), ("mean_at_k", mean_k), ("rho_1", r.rho.first().copied().unwrap_or(0.0))];
        let ceiling;
        if p.shuffles > 0 {
            ceiling = permutation_null_ceiling(&d, p.eta, p.ridge, p.shuffles, run.seed())?;
            rows.push(("null_ceiling", ceiling));
            run.value("null_ceiling", ceiling);
        }
        run.write("cca_summary.csv", kv_csv(&rows))?;
        run.label("feature", p.level.to_string());
        run.value("mean_at_k", mean_k);
        run.value("k", k as f64);
        if let Some(first) = p.taus.first() {
            for rep in reports.iter().filter(|a| a.tau == *first) {
                run.value(&format!("aer_{}", rep.side), rep.frac);
            }
            run.value("aer_tau", *first);
        }
        Ok(())
    }
}

// procrustes ----------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProcrustesParams {
    pub source: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub level: Level,
    /// Center both sides before solving.
    pub center: bool,
}

impl Default for ProcrustesParams {
    fn default() -> Self {
        ProcrustesParams {
            source: None,
            reference: None,
            level: Level::Backbone,
            center: true,
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct ProcrustesArgs {
    #[arg(long)]
    source: Option<PathBuf>,
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long, value_parser = parse_level)]
    level: Option<Level>,
    #[arg(long)]
    center: Option<bool>,
}

impl Command for ProcrustesArgs {
    const NAME: &'static str = "procrustes";
    type Params = ProcrustesParams;

    fn apply(&self, p: &mut Self::Params) {
        overlay!(p, self; source, reference, level, center);
    }

    fn run(p: &Self::Params, run: &mut RunDir) -> CliResult<()> {
        let d = load_pair(run, &p.source, &p.reference, p.level)?;
        let (s, t) = if p.center { (center(&d.x), center(&d.y)) } else { (d.x.clone(), d.y.clone()) };
        let m = procrustes(&s, &t)?;
        let aligned = m.apply(&s)?;
        let rel = m.residual / t.values().norm().max(f64::MIN_POSITIVE);
        run.write("aligned.csv", write_features(&aligned))?;
        run.write(
            "procrustes.csv",
            kv_csv(&[("residual", m.residual), ("relative_residual", rel), ("n", d.n() as f64), ("d", s.d() as f64)]),
        )?;
        run.value("residual", m.residual);
        run.value("relative_residual", rel);
        Ok(())
    }
}

// project2d -----------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectParams {
    /// `name=path` feature files; the first is the alignment reference.
    pub inputs: Vec<String>,
    pub level: Level,
    /// Procrustes-align every input onto the first over shared sample ids.
    pub align: bool,
}

impl Default for ProjectParams {
    fn default() -> Self {
        ProjectParams {
            inputs: Vec::new(),
            level: Level::Backbone,
            align: true,
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct ProjectArgs {
    /// `name=path`, repeatable.
    #[arg(long = "input")]
    inputs: Option<Vec<String>>,
    #[arg(long, value_parser = parse_level)]
    level: Option<Level>,
    #[arg(long)]
    align: Option<bool>,
}

impl Command for ProjectArgs {
    const NAME: &'static str = "project2d";
    type Params = ProjectParams;

    fn apply(&self, p: &mut Self::Params) {
        overlay!(p, self; inputs, level, align);
    }

    fn run(p: &Self::Params, run: &mut RunDir) -> CliResult<()> {
        if p.inputs.is_empty() {
            return Err(CliError::Config("project2d needs at least one `name=path` input".into()));
        }
        let mut models: Vec<(String, FeatureMatrix)> = Vec::new();
        for spec in &p.inputs {
            let (name, path) = spec
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("input {spec:?} is not name=path")))?;
            let path = PathBuf::from(path);
            run.input(&path)?;
            let m = load_features(&path, p.level, Branch::Vision).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            models.push((name.to_string(), m));
        }
        if p.align && models.len() > 1 {
            let reference = models[0].1.clone();
            for (_, m) in models.iter_mut().skip(1) {
                let d = pair(m, &reference, Split::Train)?;
                let q = procrustes(&center(&d.dataset.x), &center(&d.dataset.y))?;
                *m = q.apply(&center(m))?;
            }
            models[0].1 = center(&models[0].1);
        }
        let t = project_2d(&models)?;
        run.write("projection.csv", t.to_csv())?;
        run.write("centers.csv", t.centers_csv())?;
        run.value("points", t.points.len() as f64);
        Ok(())
    }
}
