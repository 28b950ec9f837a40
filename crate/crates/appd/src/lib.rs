//! APPD simulation engine: configuration, the macro loop, the Monte Carlo
//! comparator and CSV output around the `appd-core` numerics.

pub mod config;
pub mod engine;
pub mod error;
pub mod output;
pub mod sweep;

use std::path::Path;

use appd_core::models::{HodgkinHuxley, VanDerPol};

pub use config::{RunConfig, Solver};
pub use engine::{run_appd, run_mc, RunOutput, RunSummary};
pub use error::{ConfigError, EngineError, Result};

use config::ModelConfig;

pub fn vdp_model(cfg: &RunConfig) -> Option<VanDerPol> {
    match cfg.model {
        ModelConfig::Vdp { mu } => Some(VanDerPol::new(mu, cfg.strength, cfg.k)),
        _ => None,
    }
}

pub fn hh_model(cfg: &RunConfig) -> Option<HodgkinHuxley> {
    match cfg.model {
        ModelConfig::Hh { params, .. } => Some(HodgkinHuxley::new(params, cfg.k, cfg.strength)),
        _ => None,
    }
}

/// Run `cfg` with the given solver, writing into `dir` when one is given.
pub fn execute(cfg: &RunConfig, solver: Solver, dir: Option<&Path>) -> Result<RunSummary> {
    let out = RunOutput { dir };
    match (&cfg.model, solver) {
        (ModelConfig::Vdp { .. }, Solver::Appd) => run_appd(&vdp_model(cfg).unwrap(), cfg, out),
        (ModelConfig::Vdp { .. }, Solver::Mc) => run_mc(&vdp_model(cfg).unwrap(), cfg, out),
        (ModelConfig::Hh { .. }, Solver::Appd) => run_appd(&hh_model(cfg).unwrap(), cfg, out),
        (ModelConfig::Hh { .. }, Solver::Mc) => run_mc(&hh_model(cfg).unwrap(), cfg, out),
    }
}

/// Frame index of the snapshot closest in time to `t`, and that time.
fn nearest_snapshot(run_dir: &Path, t: f64) -> Result<(usize, f64)> {
    let obs_path = run_dir.join("observables.csv");
    let text = std::fs::read_to_string(&obs_path).map_err(|e| EngineError::io(&obs_path, e))?;
    let times: Vec<f64> = text
        .lines()
        .skip(1)
        .filter_map(|l| l.split(',').next()?.parse().ok())
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (frame, &time) in times.iter().enumerate() {
        if output::particles_path(run_dir, frame).exists()
            && best.is_none_or(|(_, bt)| (time - t).abs() < (bt - t).abs())
        {
            best = Some((frame, time));
        }
    }
    best.ok_or_else(|| {
        EngineError::io(
            run_dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "run directory holds no particle snapshots"),
        )
    })
}

/// Write the 2-D marginal density of the snapshot nearest to `t` as
/// `grid_<frame>_<i>_<j>.csv` in `run_dir`. Ranges and resolution come from
/// the run's `output.grid` table when it names the same dims, otherwise from
/// the model defaults.
pub fn export_grid(run_dir: &Path, t: f64, dims: [usize; 2]) -> Result<std::path::PathBuf> {
    let cfg = RunConfig::load(&run_dir.join("resolved.cfg"))?;
    let d = cfg.dim();
    if dims[0] == dims[1] || dims[0] >= d || dims[1] >= d {
        return Err(ConfigError::invalid("--dims", format!("need two distinct dimensions below {d}")).into());
    }
    let grid_cfg = match &cfg.output.grid {
        Some(g) if g.dims == dims => g.clone(),
        _ => config::default_grid(cfg.model.name(), dims, 1),
    };
    let (frame, _) = nearest_snapshot(run_dir, t)?;
    let snap = output::particles_path(run_dir, frame);
    let grid = match d {
        2 => output::density_grid(&output::read_particles::<2>(&snap)?, dims, grid_cfg.ranges, grid_cfg.resolution),
        4 => output::density_grid(&output::read_particles::<4>(&snap)?, dims, grid_cfg.ranges, grid_cfg.resolution),
        _ => unreachable!("models are 2-D or 4-D"),
    };
    let path = output::grid_path(run_dir, frame, dims);
    output::write_grid(&path, &grid)?;
    Ok(path)
}
