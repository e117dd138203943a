use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use opgame::commands::{self, ScenarioOptions};
use opgame::CliError;
use opgame_core::matfun::DEFAULT_CRITICAL_TOL;

#[derive(Parser)]
#[command(name = "opgame", version, about = "Open-loop Nash equilibria of multi-issue opinion games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Report whether the game has a unique equilibrium (exit 0) or none at T (exit 2).
    Check {
        config: PathBuf,
        /// Relative tolerance for hitting a critical horizon.
        #[arg(long, default_value_t = DEFAULT_CRITICAL_TOL)]
        tol_critical: f64,
    },
    /// Solve the game and write `trajectory.csv` plus `manifest.toml`.
    Solve {
        config: PathBuf,
        /// Number of grid points on [0, T].
        #[arg(long, default_value_t = 101)]
        grid: usize,
        #[arg(long, env = opgame::OUT_ENV, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CRITICAL_TOL)]
        tol_critical: f64,
    },
    /// Run a multi-stage scenario from a config file or a named preset.
    Scenario {
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        /// Number of consecutive seeds to run.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        /// First seed; defaults to the scenario's own seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Grid points per stage.
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long, env = opgame::OUT_ENV, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        tol_critical: Option<f64>,
    },
}

fn run(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::Check { config, tol_critical } => {
            let out = commands::check(&config, tol_critical)?;
            print!("{}", out.report);
            Ok(if out.exists { 0 } else { 2 })
        }
        Command::Solve {
            config,
            grid,
            out,
            tol_critical,
        } => {
            let res = commands::solve(&config, grid, &out, tol_critical)?;
            println!("wrote {} ({} rows)", res.trajectory.display(), res.rows);
            println!("wrote {}", res.manifest.display());
            Ok(0)
        }
        Command::Scenario {
            config,
            preset,
            seeds,
            seed,
            grid,
            out,
            tol_critical,
        } => {
            let res = commands::scenario(&ScenarioOptions {
                config,
                preset,
                seeds,
                seed,
                grid,
                tol_critical,
                out,
            })?;
            println!("completed seeds: {:?}", res.completed);
            println!("wrote {}", res.manifest.display());
            Ok(res.exit_code())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // usage errors are config errors; --help and --version succeed
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
