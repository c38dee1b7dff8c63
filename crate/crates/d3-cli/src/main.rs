mod cmd;
mod config;
mod reports;
mod runtime;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cmd::ablate::Axis;
use config::{ExperimentConfig, ExperimentKind};
use runtime::{CliError, Env};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "d3", version, about = "discrepancy-pair deepfake detection workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config JSON; built-in defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replace the config's seed list with this single run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Write artifacts under this directory instead of the config's out_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the synthetic benchmark manifest (and optionally the images)
    Synth {
        #[command(flatten)]
        common: Common,
        /// Also write every sample as a PNG under <out>/images
        #[arg(long)]
        materialize: bool,
    },
    /// Train detector heads on the benchmark train split
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate trained checkpoints on the test split
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Measure accuracy as the number of training generators grows
    #[command(name = "scale-sweep")]
    ScaleSweep {
        #[command(flatten)]
        common: Common,
    },
    /// Measure accuracy under blur and jpeg degradations
    Robust {
        #[command(flatten)]
        common: Common,
    },
    /// Swap one component at a time and compare test accuracy
    Ablate {
        #[arg(value_enum)]
        axis: AxisArg,
        #[command(flatten)]
        common: Common,
    },
    /// Render occlusion sensitivity maps for fake test samples
    Occlude {
        #[command(flatten)]
        common: Common,
    },
    /// Summarize an existing report.json
    Report {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Disruption,
    PatchSize,
    Head,
    Branch,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let ok = matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = err.print();
            return if ok { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.exit_code())
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth { common, materialize } => {
            let env = Env::prepare(load(&common, None)?)?;
            cmd::synth::run(&env, materialize)
        }
        Command::Train { common } => {
            let env = Env::prepare(load(&common, Some(ExperimentKind::TrainEval))?)?;
            cmd::train_eval::train(&env)
        }
        Command::Eval { common } => {
            let env = Env::prepare(load(&common, Some(ExperimentKind::TrainEval))?)?;
            cmd::train_eval::eval(&env)
        }
        Command::ScaleSweep { common } => {
            let env = Env::prepare(load(&common, Some(ExperimentKind::ScaleSweep))?)?;
            cmd::sweep::run(&env)
        }
        Command::Robust { common } => {
            let env = Env::prepare(load(&common, Some(ExperimentKind::Robustness))?)?;
            cmd::robust::run(&env)
        }
        Command::Ablate { axis, common } => {
            let (axis, kind) = match axis {
                AxisArg::Disruption => (Axis::Disruption, ExperimentKind::DisruptionAblation),
                AxisArg::PatchSize => (Axis::PatchSize, ExperimentKind::PatchSizeAblation),
                AxisArg::Head => (Axis::Head, ExperimentKind::HeadAblation),
                AxisArg::Branch => (Axis::Branch, ExperimentKind::BranchAblation),
            };
            let env = Env::prepare(load(&common, Some(kind))?)?;
            cmd::ablate::run(&env, axis)
        }
        Command::Occlude { common } => {
            let env = Env::prepare(load(&common, Some(ExperimentKind::Occlusion))?)?;
            cmd::occlude::run(&env)
        }
        Command::Report { common } => {
            let cfg = load(&common, None)?;
            cmd::inspect::run(&cfg.out_dir)
        }
    }
}

/// Loads the config, applies CLI overrides, and checks that the declared
/// experiment kind matches the subcommand (`synth` and `report` accept any).
fn load(common: &Common, expect: Option<ExperimentKind>) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path).map_err(CliError::Validation)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply_overrides(common.seed, common.out.clone());
    if let Some(expect) = expect {
        if cfg.experiment != expect {
            return Err(CliError::Validation(format!(
                "config declares experiment \"{}\" but this subcommand needs \"{}\"",
                cfg.experiment.name(),
                expect.name()
            )));
        }
    }
    Ok(cfg)
}
