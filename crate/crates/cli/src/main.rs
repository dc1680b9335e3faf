use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qpburst_cli::commands::{self, Context};
use qpburst_cli::{CliError, CliResult, RunConfig};

#[derive(Parser)]
#[command(name = "qpburst", version, about = "Quasiparticle burst analysis pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to one per core.
    #[arg(long)]
    workers: Option<usize>,
    /// Run directory; defaults to `io.dir` of the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate triggered events and their truth.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Overrides `simulation.n_events`.
        #[arg(long)]
        n_events: Option<usize>,
    },
    /// Pulse features and quality cuts.
    Process {
        #[command(flatten)]
        common: Common,
    },
    /// Per-qubit r and τ_ss from average pulses.
    Calibrate {
        #[command(flatten)]
        common: Common,
    },
    /// Per-waveform posterior of E_dep and τ_ss.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Also write the post-burn-in chains of every fit.
        #[arg(long)]
        dump_chains: bool,
    },
    /// Vertices, total energies and the energy spectrum.
    Reconstruct {
        #[command(flatten)]
        common: Common,
    },
}

fn context(c: &Common, n_events: Option<usize>) -> CliResult<Context> {
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(n) = n_events {
        cfg.simulation.n_events = n;
    }
    Context::new(cfg, c.out.clone(), c.workers)
}

fn print<T: serde::Serialize>(value: &T) -> CliResult<()> {
    let text = serde_json::to_string(value).map_err(|e| CliError::Config(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate { common, n_events } => print(&commands::simulate(&context(&common, n_events)?)?),
        Command::Process { common } => print(&commands::process(&context(&common, None)?)?),
        Command::Calibrate { common } => {
            let cal = commands::calibrate(&context(&common, None)?)?;
            let rows: Vec<_> = cal
                .iter()
                .map(|c| {
                    serde_json::json!({
                        "qubit": c.qubit, "r": c.r, "r_total": c.r_total,
                        "tau_ss": c.tau_ss, "tau_total": c.tau_total,
                    })
                })
                .collect();
            print(&rows)
        }
        Command::Fit { common, dump_chains } => print(&commands::fit(&context(&common, None)?, dump_chains)?.0),
        Command::Reconstruct { common } => {
            let s = commands::reconstruct(&context(&common, None)?)?;
            print(&serde_json::json!({
                "events": s.events, "reconstructed": s.reconstructed, "fiducial": s.fiducial,
                "counts": s.spectrum.counts,
            }))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("QPBURST_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = e.report();
            eprintln!("{}", serde_json::to_string(&report).unwrap_or_else(|_| e.to_string()));
            ExitCode::from(report.exit_code as u8)
        }
    }
}
