use std::path::PathBuf;
use std::process::ExitCode;

use appd::config::{RunConfig, Solver};
use appd::error::{ConfigError, EngineError};
use clap::{Parser, Subcommand};

/// Particle population density simulator for coupled noisy oscillators.
#[derive(Debug, Parser)]
#[command(name = "appd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the solver selected in the config (APPD unless `solver = "mc"`).
    Run { config: PathBuf },
    /// Run every (k, strength) pair of a sweep file.
    Sweep { sweep: PathBuf },
    /// Run the Monte Carlo baseline for a config.
    Mc { config: PathBuf },
    /// Export a 2-D marginal density grid from a finished run.
    ExportGrid {
        run_dir: PathBuf,
        /// Time of the snapshot to use (the nearest stored one is taken).
        #[arg(long = "t")]
        t: f64,
        /// Two state dimensions, e.g. `0,1`.
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,
    },
}

fn configure_threads() -> Result<(), EngineError> {
    let Ok(raw) = std::env::var("APPD_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| ConfigError::invalid("APPD_THREADS", format!("expected a positive integer, got {raw:?}")))?;
    // Fails only if a pool already exists, which cannot happen this early.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn run_config(path: &PathBuf, solver: Option<Solver>) -> Result<(), EngineError> {
    let cfg = RunConfig::load(path)?;
    let solver = solver.unwrap_or(cfg.solver);
    let summary = appd::execute(&cfg, solver, Some(&cfg.output.dir))?;
    eprintln!(
        "{} frames, {} threshold crossings of the mean, {:.2} s -> {}",
        summary.frames.len(),
        summary.spikes.len(),
        summary.wall_seconds,
        cfg.output.dir.display()
    );
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), EngineError> {
    configure_threads()?;
    match cli.command {
        Command::Run { config } => run_config(&config, None),
        Command::Mc { config } => run_config(&config, Some(Solver::Mc)),
        Command::Sweep { sweep } => {
            let plan = appd::sweep::load_plan(&sweep)?;
            eprintln!("{} runs -> {}", plan.runs.len(), plan.out.display());
            appd::sweep::run_sweep(&plan)
        }
        Command::ExportGrid { run_dir, t, dims } => {
            let dims: [usize; 2] = dims
                .try_into()
                .map_err(|_| ConfigError::invalid("--dims", "expected two comma-separated indices"))?;
            let path = appd::export_grid(&run_dir, t, dims)?;
            println!("{}", path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
