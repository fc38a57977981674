use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use riskswitch::volterra::Mode;
use riskswitch_cli::{
    cmd_oracle, cmd_residual, cmd_solve, cmd_sweep, cmd_validate, load, Axis, CliError, Overrides, RunConfig,
};

#[derive(Parser)]
#[command(name = "riskswitch", version, about = "Risk-sensitive optimal wealth under semi-Markov regime switching")]
struct Cli {
    /// Worker threads for the parallel kernels.
    #[arg(long, env = "RISKSWITCH_THREADS", global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the configured time step.
    #[arg(long)]
    dt: Option<f64>,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn overrides(&self, paths: Option<usize>) -> Overrides {
        Overrides {
            dt: self.dt,
            seed: self.seed,
            paths,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check the model assumptions and print a JSON report.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Solve for psi, write the grid and print the optimal wealth.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a binary checkpoint of the grid.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare the solver with the Monte Carlo estimator.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimal wealth along one parameter axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// v, T or theta.
        #[arg(long)]
        axis: Axis,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Residual of the first-order equation under grid refinement.
    Residual {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Validate { common } => {
            let mut cfg = RunConfig::load(&common.config)?;
            common.overrides(None).apply(&mut cfg);
            cmd_validate(cfg, &mut out)?;
        }
        Command::Solve {
            common,
            mode,
            out: path,
            checkpoint,
        } => {
            let problem = load(&common.config, &common.overrides(None))?;
            cmd_solve(&problem, mode, path.as_deref(), checkpoint.as_deref(), &mut out)?;
        }
        Command::Oracle {
            common,
            mode,
            paths,
            out: path,
        } => {
            let problem = load(&common.config, &common.overrides(paths))?;
            cmd_oracle(&problem, mode, path.as_deref(), &mut out)?.check()?;
        }
        Command::Sweep {
            common,
            axis,
            mode,
            out: path,
        } => {
            let problem = load(&common.config, &common.overrides(None))?;
            cmd_sweep(&problem, axis, mode, path.as_deref(), &mut out)?.check()?;
        }
        Command::Residual { common, mode, out: path } => {
            let problem = load(&common.config, &common.overrides(None))?;
            cmd_residual(&problem, mode, path.as_deref(), &mut out)?.check()?;
        }
    }
    out.flush().ok();
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
