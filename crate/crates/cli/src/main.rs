mod commands;
mod config;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::drive::{BonArgs, DualSweepArgs, GenBenchmarkArgs, ScoreArgs, ScorerTrainArgs, SelectArgs, WinsArgs};
use commands::features::{CcaArgs, CkaArgs, GenFeaturesArgs, ProcrustesArgs, ProjectArgs};
use commands::gate::{GateEvalArgs, GateRulesArgs, GateTrainArgs};
use commands::report::ReportArgs;
use commands::sae::{SaeEvalArgs, SaeSweepArgs, SaeTrainArgs, ShuffleControlArgs};
use commands::Command;
use error::{CliError, CliResult};
use run::RunDir;

/// Representation, behaviour and selection analyses for paired driving policies.
#[derive(Parser, Debug)]
#[command(name = "dualdrive", version)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; replaces every seed inside the command block.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for this run.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Planted shared/unique feature pair.
    GenFeatures(GenFeaturesArgs),
    /// Synthetic driving benchmark with fast and slow policy rollouts.
    GenBenchmark(GenBenchmarkArgs),
    /// Linear CKA between two feature files.
    Cka(CkaArgs),
    /// Whitened CCA spectrum, mean@k and aligned energy.
    Cca(CcaArgs),
    /// Orthogonal alignment of one feature space onto another.
    Procrustes(ProcrustesArgs),
    /// Shared 2D PCA projection of several feature sets.
    Project2d(ProjectArgs),
    /// Train the shared/unique autoencoder.
    SaeTrain(SaeTrainArgs),
    /// Evaluate a checkpoint on a feature pair.
    SaeEval(SaeEvalArgs),
    /// Train over a grid of cross weights and reconstruction modes.
    SaeSweep(SaeSweepArgs),
    /// Retrain on shuffled pairs and compare alignment.
    ShuffleControl(ShuffleControlArgs),
    /// Rule-based gates from autoencoder energies.
    GateRules(GateRulesArgs),
    /// Learned gate on raw features.
    GateTrain(GateTrainArgs),
    /// Realized score of a decisions file.
    GateEval(GateEvalArgs),
    /// Sub-scores and advantage records for a benchmark.
    Score(ScoreArgs),
    /// Oracle best-of-two and best-of-n over interpolated candidates.
    Bon(BonArgs),
    /// Train the sub-score predictor.
    ScorerTrain(ScorerTrainArgs),
    /// Scorer-driven candidate selection.
    Select(SelectArgs),
    /// Fast/slow routing trade-off over confidence thresholds.
    DualSweep(DualSweepArgs),
    /// Significant-win counts.
    Wins(WinsArgs),
    /// Verify run manifests and aggregate summary tables.
    Report(ReportArgs),
}

fn execute<C: Command>(args: &C, cli: &Cli) -> CliResult<()> {
    let loaded = config::load(cli.config.as_deref())?;
    let mut params: C::Params = loaded.block(C::NAME)?;
    args.apply(&mut params);
    let explicit = cli.seed.or(loaded.seed);
    if let Some(s) = explicit {
        C::set_seed(&mut params, s);
    }
    let out = config::resolve_out(cli.out.clone(), &loaded, C::NAME);
    let resolved = serde_json::to_value(&params).map_err(|e| CliError::Config(e.to_string()))?;
    let mut run = RunDir::new(out, C::NAME, explicit.unwrap_or(0), resolved);
    log::info!("{} -> {}", C::NAME, run.dir().display());
    C::run(&params, &mut run)?;
    run.finish()
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Cmd::GenFeatures(a) => execute(a, cli),
        Cmd::GenBenchmark(a) => execute(a, cli),
        Cmd::Cka(a) => execute(a, cli),
        Cmd::Cca(a) => execute(a, cli),
        Cmd::Procrustes(a) => execute(a, cli),
        Cmd::Project2d(a) => execute(a, cli),
        Cmd::SaeTrain(a) => execute(a, cli),
        Cmd::SaeEval(a) => execute(a, cli),
        Cmd::SaeSweep(a) => execute(a, cli),
        Cmd::ShuffleControl(a) => execute(a, cli),
        Cmd::GateRules(a) => execute(a, cli),
        Cmd::GateTrain(a) => execute(a, cli),
        Cmd::GateEval(a) => execute(a, cli),
        Cmd::Score(a) => execute(a, cli),
        Cmd::Bon(a) => execute(a, cli),
        Cmd::ScorerTrain(a) => execute(a, cli),
        Cmd::Select(a) => execute(a, cli),
        Cmd::DualSweep(a) => execute(a, cli),
        Cmd::Wins(a) => execute(a, cli),
        Cmd::Report(a) => execute(a, cli),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dualdrive {}: {e}", cli.command_name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

impl Cli {
    fn command_name(&self) -> &'static str {
        macro_rules! name {
            ($($v:ident => $t:ty),* $(,)?) => {
                match &self.command { $(Cmd::$v(_) => <$t as Command>::NAME,)* }
            };
        }
        name!(
            GenFeatures => GenFeaturesArgs,
            GenBenchmark => GenBenchmarkArgs,
            Cka => CkaArgs,
            Cca => CcaArgs,
            Procrustes => ProcrustesArgs,
            Project2d => ProjectArgs,
            SaeTrain => SaeTrainArgs,
            SaeEval => SaeEvalArgs,
            SaeSweep => SaeSweepArgs,
            ShuffleControl => ShuffleControlArgs,
            GateRules => GateRulesArgs,
            GateTrain => GateTrainArgs,
            GateEval => GateEvalArgs,
            Score => ScoreArgs,
            Bon => BonArgs,
            ScorerTrain => ScorerTrainArgs,
            Select => SelectArgs,
            DualSweep => DualSweepArgs,
            Wins => WinsArgs,
            Report => ReportArgs,
        )
    }
}
