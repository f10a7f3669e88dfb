use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use axforge::commands::{execute, Command, Invocation, LutAction};

/// Approximate-DNN generation toolkit.
#[derive(Parser)]
#[command(name = "axforge", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "runs/latest")]
    out: PathBuf,
    /// Model manifest path.
    #[arg(long, global = true)]
    model: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a network.
    Train(Common),
    /// Float, int8 and approximate accuracy.
    Eval(Common),
    /// Neuron conductance and layer ranking.
    Conductance(Common),
    /// Gaussian-noise resilience per layer.
    Noise(Common),
    /// Conductance-guided approximate network generation.
    Xaigen(Common),
    /// Multi-objective search over multipliers and skip levels.
    Nas(Common),
    /// Analytical energy of a configuration.
    Energy(Common),
    /// Multiplier lookup tables.
    Lut {
        #[command(subcommand)]
        action: LutCmd,
    },
    /// Render plot-ready CSVs from run reports.
    Report {
        #[command(flatten)]
        common: Common,
        reports: Vec<PathBuf>,
    },
}

#[derive(Subcommand)]
enum LutCmd {
    /// Synthesize designs (the fixture ladder by default).
    Synth(Common),
    /// MAE and power of LUT files.
    Inspect {
        #[command(flatten)]
        common: Common,
        luts: Vec<PathBuf>,
    },
    /// Product tables as CSV.
    Dump {
        #[command(flatten)]
        common: Common,
        luts: Vec<PathBuf>,
    },
}

fn invocation(command: Command, common: Common, inputs: Vec<PathBuf>) -> axforge::Result<Invocation> {
    let config = match &common.config {
        Some(p) => Some(serde_json::from_str(&std::fs::read_to_string(p)?)?),
        None => None,
    };
    Ok(Invocation {
        command,
        config,
        seed: common.seed,
        model: common.model,
        inputs,
        out: common.out,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let inv = match cli.command {
        Cmd::Train(c) => invocation(Command::Train, c, vec![]),
        Cmd::Eval(c) => invocation(Command::Eval, c, vec![]),
        Cmd::Conductance(c) => invocation(Command::Conductance, c, vec![]),
        Cmd::Noise(c) => invocation(Command::Noise, c, vec![]),
        Cmd::Xaigen(c) => invocation(Command::Xaigen, c, vec![]),
        Cmd::Nas(c) => invocation(Command::Nas, c, vec![]),
        Cmd::Energy(c) => invocation(Command::Energy, c, vec![]),
        Cmd::Lut { action } => match action {
            LutCmd::Synth(c) => invocation(Command::Lut(LutAction::Synth), c, vec![]),
            LutCmd::Inspect { common, luts } => invocation(Command::Lut(LutAction::Inspect), common, luts),
            LutCmd::Dump { common, luts } => invocation(Command::Lut(LutAction::Dump), common, luts),
        },
        Cmd::Report { common, reports } => invocation(Command::Report, common, reports),
    };
    match inv.and_then(|inv| execute(&inv).map(|r| (inv, r))) {
        Ok((inv, report)) => {
            println!("{} finished in {:.1}s; report at {}", report.command, report.duration_s, inv.out.join("report.json").display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
