//! Parameter sweeps over the diffusion and coupling strengths.
//!
//! ```toml
//! base = "hh.toml"          # run config, relative to the sweep file
//! out = "sweep_out"
//! k = [0.5e-5, 1e-5, 2e-5, 3e-5, 4e-5]
//! strength = [0.1, 0.15, 0.2, 0.25, 0.3]
//! solvers = ["appd", "mc"]  # optional, defaults to ["appd"]
//! ```
//!
//! Every `(solver, k, strength)` triple runs in `<out>/<solver>_k<i>_c<j>`,
//! and `<out>/sweep.csv` lists the runs with their status.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Deserialize;

use crate::config::{ConfigFile, Solver};
use crate::error::{ConfigError, EngineError, Result};
use crate::output::{fmt_real, write_text};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFile {
    pub base: PathBuf,
    pub out: PathBuf,
    pub k: Vec<f64>,
    pub strength: Vec<f64>,
    #[serde(default)]
    pub solvers: Option<Vec<Solver>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub solver: Solver,
    pub k: f64,
    pub strength: f64,
    pub dir: PathBuf,
    pub config: ConfigFile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub out: PathBuf,
    pub runs: Vec<SweepRun>,
}

fn solver_tag(s: Solver) -> &'static str {
    match s {
        Solver::Appd => "appd",
        Solver::Mc => "mc",
    }
}

pub fn load_plan(path: &Path) -> std::result::Result<SweepPlan, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let sweep: SweepFile = toml::from_str(&text).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if sweep.k.is_empty() || sweep.strength.is_empty() {
        return Err(ConfigError::invalid("k", "sweep needs at least one k and one strength"));
    }
    let root = path.parent().unwrap_or(Path::new("."));
    let base = ConfigFile::load(&root.join(&sweep.base))?;
    base.resolve()?;
    let out = root.join(&sweep.out);
    let solvers = sweep.solvers.unwrap_or_else(|| vec![Solver::Appd]);

    let mut runs = Vec::new();
    for &solver in &solvers {
        for (i, &k) in sweep.k.iter().enumerate() {
            for (j, &strength) in sweep.strength.iter().enumerate() {
                let dir = out.join(format!("{}_k{i}_c{j}", solver_tag(solver)));
                let mut config = base.clone();
                config.solver = Some(solver);
                config.diffusion.k = Some(k);
                config.coupling.strength = Some(strength);
                config.output.dir = Some(dir.clone());
                config.resolve()?;
                runs.push(SweepRun {
                    solver,
                    k,
                    strength,
                    dir,
                    config,
                });
            }
        }
    }
    Ok(SweepPlan { out, runs })
}

/// Execute every run in order. A failing run is recorded in `sweep.csv`
/// and the sweep continues; the first error is returned at the end.
pub fn run_sweep(plan: &SweepPlan) -> Result<()> {
    std::fs::create_dir_all(&plan.out).map_err(|e| EngineError::io(&plan.out, e))?;
    let mut index = String::from("solver,k,strength,dir,status,wall_seconds\n");
    let mut first_error = None;
    for run in &plan.runs {
        let started = Instant::now();
        let cfg = run.config.resolve()?;
        let status = match crate::execute(&cfg, run.solver, Some(&run.dir)) {
            Ok(_) => "ok".to_string(),
            Err(e) => {
                let status = format!("failed: {}", e.to_string().replace([',', '\n'], ";"));
                first_error.get_or_insert(e);
                status
            }
        };
        index.push_str(&format!(
            "{},{},{},{},{},{:.3}\n",
            solver_tag(run.solver),
            fmt_real(run.k),
            fmt_real(run.strength),
            run.dir.display(),
            status,
            started.elapsed().as_secs_f64()
        ));
        write_text(&plan.out.join("sweep.csv"), &index)?;
    }
    first_error.map_or(Ok(()), Err)
}
