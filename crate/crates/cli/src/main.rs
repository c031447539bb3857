use std::path::PathBuf;
use std::process::ExitCode;

use cctsens::systems::catalog;
use cctsens_cli::portrait::{run_portrait, write_portrait};
use cctsens_cli::single::run_single;
use cctsens_cli::sweep::run_sweep;
use cctsens_cli::{exit, output, CliResult, RunConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "cctsens",
    version,
    about = "Critical clearing time and its parameter sensitivity for staged DAE models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// INI configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `[output] dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one clearing time (default: the critical one) and export the trajectory.
    Run {
        #[command(flatten)]
        common: Common,
        /// Clearing time in seconds; overrides `[scenario] t_cl`.
        #[arg(long)]
        tcl: Option<f64>,
    },
    /// CCT, mechanism and sensitivity over the `[sweep]` grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Concurrent sweep points.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Phase-portrait CSV bundle.
    Portrait {
        #[command(flatten)]
        common: Common,
    },
    /// Built-in systems.
    Systems {
        #[command(subcommand)]
        action: SystemsAction,
    },
}

#[derive(Subcommand)]
enum SystemsAction {
    /// List the catalog with default parameters.
    List,
}

fn load(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn report(files: &[PathBuf]) {
    for f in files {
        eprintln!("wrote {}", f.display());
    }
}

fn dispatch(cli: Cli) -> CliResult<i32> {
    match cli.command {
        Command::Run { common, tcl } => {
            let cfg = load(&common)?;
            let rep = run_single(&cfg, tcl)?;
            report(&rep.write(&cfg.out_dir)?);
            print!("{}", rep.summary());
            Ok(exit::SUCCESS)
        }
        Command::Sweep { common, workers } => {
            let cfg = load(&common)?;
            let rep = run_sweep(&cfg, workers)?;
            let files = [
                output::write(&cfg.out_dir, "sweep.csv", &rep.to_csv())?,
                output::write(&cfg.out_dir, "sweep_summary.txt", &rep.summary())?,
            ];
            report(&files);
            print!("{}", rep.summary());
            Ok(rep.exit_code())
        }
        Command::Portrait { common } => {
            let cfg = load(&common)?;
            let data = run_portrait(&cfg)?;
            report(&write_portrait(&data, &cfg.build()?, &cfg.out_dir)?);
            print!("{}", data.summary());
            Ok(exit::SUCCESS)
        }
        Command::Systems { action: SystemsAction::List } => {
            for e in catalog() {
                let params: Vec<String> = e.defaults.iter().map(|(k, v)| format!("{k}={}", output::num(v))).collect();
                println!(
                    "{}\n  {}\n  states: {}\n  defaults: {} (active: {})",
                    e.id,
                    e.summary,
                    e.states,
                    params.join(" "),
                    e.defaults.active_name().unwrap_or("none")
                );
            }
            Ok(exit::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::CONFIG as u8 } else { exit::SUCCESS as u8 });
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
