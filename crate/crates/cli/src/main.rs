use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use m3d_cli::commands::{cmd_ablate, cmd_condense, cmd_eval, cmd_export_images, cmd_moments, Axis};
use m3d_cli::{CliResult, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "m3d", version, about = "Dataset condensation by moment-matching MMD")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

impl Common {
    fn resolve(&self) -> CliResult<RunConfig> {
        RunConfig::resolve(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Condense the training split into a synthetic set.
    Condense(Common),
    /// Train classifiers on a checkpoint and report test accuracy.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Moment distances between the training split and a checkpoint.
    Moments {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Sweep the kernel or iterations-per-model.
    Ablate {
        #[arg(long, value_enum)]
        axis: Axis,
        #[command(flatten)]
        common: Common,
    },
    /// Write the checkpoint's images as PNG files.
    ExportImages {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Condense(common) => cmd_condense(&common.resolve()?).map(drop),
        Command::Eval { checkpoint, common } => cmd_eval(&common.resolve()?, &checkpoint).map(drop),
        Command::Moments { checkpoint, common } => cmd_moments(&common.resolve()?, &checkpoint).map(drop),
        Command::Ablate { axis, common } => cmd_ablate(&common.resolve()?, axis).map(drop),
        Command::ExportImages { checkpoint, out } => cmd_export_images(&checkpoint, &out).map(drop),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("m3d: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
