//! `endoscope`: kinematics, design sweeps and the teleoperation server.

mod commands;
mod exit;
mod serve;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use endoscope_core::config::Config;

use exit::CliError;

/// Environment variable naming the default configuration file.
const CONFIG_ENV: &str = "ENDOSCOPE_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "endoscope", version, about = "MRI-driven Lorentz-force endoscope simulator")]
struct Cli {
    /// Configuration file; the bundled Table I configuration when omitted.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Directory for output files (stdout still carries the primary data).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: Format,
    /// Recorded in summaries; every command is deterministic.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Diagnostics on stderr (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rod shape under fixed coil currents.
    Fk(commands::FkArgs),
    /// Currents and power for a commanded tip bend.
    Ik(commands::IkArgs),
    /// Power at the target bend against the coil/endoscope length ratio.
    DesignCurve(commands::DesignArgs),
    /// Reachable tip region under current and power caps.
    Workspace(commands::WorkspaceArgs),
    /// Grasper blocking force against current.
    Grasper(commands::GrasperArgs),
    /// Joule power table for the ablation setting.
    Ablation(commands::AblationArgs),
    /// Teleoperation server (`teleop/1` over TCP and WebSocket).
    Serve(serve::ServeArgs),
}

pub struct Context {
    pub config: Config,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub seed: u64,
    pub verbose: u8,
}

impl Context {
    pub fn note(&self, msg: impl AsRef<str>) {
        if self.verbose > 0 {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::table1(),
    };
    if let Some(dir) = &cli.out {
        std::fs::create_dir_all(dir).map_err(|e| CliError::config(format!("{}: {e}", dir.display())))?;
    }
    let ctx = Context { config, out: cli.out, format: cli.format, seed: cli.seed, verbose: cli.verbose };
    ctx.note(format!("config {:?}, seed {}", ctx.config.name, ctx.seed));
    match cli.command {
        Command::Fk(a) => commands::fk(&ctx, &a),
        Command::Ik(a) => commands::ik(&ctx, &a),
        Command::DesignCurve(a) => commands::design_curve(&ctx, &a),
        Command::Workspace(a) => commands::workspace(&ctx, &a),
        Command::Grasper(a) => commands::grasper(&ctx, &a),
        Command::Ablation(a) => commands::ablation(&ctx, &a),
        Command::Serve(a) => serve::serve(&ctx, &a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
