//! Run configuration: a TOML document with one table per module.
//!
//! [`ConfigFile`] mirrors the file with every field optional. [`RunConfig`]
//! is the resolved form, with per-model defaults filled in and every value
//! validated. `RunConfig::to_file` gives back a `ConfigFile` with all fields
//! set, which is what gets echoed to `resolved.cfg`.

use std::path::{Path, PathBuf};

use appd_core::models::{HHParameters, V_COUPLING_EXCITATORY, V_COUPLING_INHIBITORY};
use appd_core::IntegratorConfig;
use appd_core::IntegratorMethod;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Appd,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelName {
    Vdp,
    Hh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HhMode {
    Excitatory,
    Inhibitory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodName {
    Rk4,
    Dopri,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialKind {
    LimitCycle,
    Gaussian,
    Particles,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub solver: Option<Solver>,
    pub model: ModelSection,
    #[serde(default)]
    pub diffusion: DiffusionSection,
    #[serde(default)]
    pub coupling: CouplingSection,
    #[serde(default)]
    pub time: TimeSection,
    #[serde(default)]
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub combine: CombineSection,
    #[serde(default)]
    pub prune: PruneSection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub mc: McSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub name: ModelName,
    pub mu: Option<f64>,
    pub mode: Option<HhMode>,
    pub c_m: Option<f64>,
    pub g_na: Option<f64>,
    pub e_na: Option<f64>,
    pub g_k: Option<f64>,
    pub e_k: Option<f64>,
    pub g_l: Option<f64>,
    pub e_l: Option<f64>,
    pub i_app: Option<f64>,
    pub v_threshold: Option<f64>,
    pub v_coupling: Option<f64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            name: ModelName::Vdp,
            mu: None,
            mode: None,
            c_m: None,
            g_na: None,
            e_na: None,
            g_k: None,
            e_k: None,
            g_l: None,
            e_l: None,
            i_app: None,
            v_threshold: None,
            v_coupling: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionSection {
    pub k: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSection {
    /// α for mean-field coupling, `c` for threshold coupling.
    pub strength: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub t_end: Option<f64>,
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    pub method: Option<MethodName>,
    pub substeps: Option<usize>,
    pub atol: Option<f64>,
    pub rtol: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub enabled: Option<bool>,
    pub tolerance: Option<f64>,
    pub variance_cap: Option<Vec<f64>>,
    pub max_splits: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombineSection {
    pub enabled: Option<bool>,
    pub cell_side: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneSection {
    pub w_min: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub kind: Option<InitialKind>,
    /// Particle count for the limit-cycle seed.
    pub n: Option<usize>,
    pub sigma0: Option<f64>,
    /// Center of the `gaussian` initial condition.
    pub center: Option<Vec<f64>>,
    pub t_transient: Option<f64>,
    pub search_horizon: Option<f64>,
    pub step: Option<f64>,
    pub particles: Option<Vec<ParticleSpec>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleSpec {
    pub weight: f64,
    pub center: Vec<f64>,
    /// Square-root factor, one inner array per row.
    pub sqrt_factor: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    pub n: Option<usize>,
    pub seed: Option<u64>,
    /// Euler–Maruyama steps per macro step.
    pub substeps: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    /// Macro steps per observable row.
    pub stride: Option<usize>,
    /// Observable rows per particle snapshot; 0 disables snapshots.
    pub snapshot_every: Option<usize>,
    pub grid: Option<GridSection>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dims: Option<[usize; 2]>,
    pub ranges: Option<[[f64; 2]; 2]>,
    pub resolution: Option<[usize; 2]>,
    /// Observable rows per grid export.
    pub every: Option<usize>,
}

// ---------------------------------------------------------------------------
// Resolved configuration

#[derive(Debug, Clone, PartialEq)]
pub enum ModelConfig {
    Vdp { mu: f64 },
    Hh { params: HHParameters, mode: HhMode },
}

impl ModelConfig {
    pub fn dim(&self) -> usize {
        match self {
            Self::Vdp { .. } => 2,
            Self::Hh { .. } => 4,
        }
    }

    pub fn name(&self) -> ModelName {
        match self {
            Self::Vdp { .. } => ModelName::Vdp,
            Self::Hh { .. } => ModelName::Hh,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialConfig {
    LimitCycle {
        n: usize,
        sigma0: f64,
        t_transient: f64,
        search_horizon: f64,
        step: f64,
    },
    Gaussian {
        center: Vec<f64>,
        sigma0: f64,
    },
    Particles(Vec<ParticleSpec>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    pub n: usize,
    pub seed: u64,
    pub substeps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub dims: [usize; 2],
    pub ranges: [[f64; 2]; 2],
    pub resolution: [usize; 2],
    pub every: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub stride: usize,
    pub snapshot_every: usize,
    pub grid: Option<GridConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub solver: Solver,
    pub model: ModelConfig,
    pub k: f64,
    pub strength: f64,
    pub t_end: f64,
    pub dt: f64,
    pub integrator: IntegratorConfig,
    pub split_enabled: bool,
    pub tolerance: f64,
    pub variance_cap: Vec<f64>,
    pub max_splits: usize,
    pub combine_enabled: bool,
    pub cell_side: Vec<f64>,
    pub w_min: f64,
    pub initial: InitialConfig,
    pub mc: McConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// Number of macro steps covering `[0, t_end]`.
    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt - 1e-9).ceil().max(1.0) as usize
    }
}

struct Defaults {
    k: f64,
    strength: f64,
    t_end: f64,
    dt: f64,
    substeps: usize,
    variance_cap: f64,
    cell_side: f64,
    initial: InitialKind,
    n_particles: usize,
    sigma0: f64,
    mc_n: usize,
    w_min: f64,
}

fn defaults(name: ModelName) -> Defaults {
    match name {
        ModelName::Vdp => Defaults {
            k: 0.05,
            strength: 0.5,
            t_end: 100.0,
            dt: 0.1,
            substeps: 10,
            variance_cap: 0.25,
            cell_side: 6.0 / 40.0,
            initial: InitialKind::LimitCycle,
            n_particles: 100,
            sigma0: 0.05,
            mc_n: 10_000,
            w_min: 1e-6,
        },
        ModelName::Hh => Defaults {
            k: 0.5e-5,
            strength: 0.2,
            t_end: 50.0,
            dt: 0.01,
            substeps: 10,
            variance_cap: 0.0025,
            cell_side: 1.0 / 40.0,
            initial: InitialKind::Gaussian,
            n_particles: 40,
            sigma0: 0.005,
            mc_n: 5_000,
            w_min: 1e-12,
        },
    }
}

/// Plotting window per state dimension.
pub fn default_range(model: ModelName, dim: usize) -> [f64; 2] {
    match (model, dim) {
        (ModelName::Vdp, _) => [-3.0, 3.0],
        (ModelName::Hh, 0) => [-0.2, 1.2],
        (ModelName::Hh, _) => [0.0, 1.0],
    }
}

pub const DEFAULT_GRID_RESOLUTION: usize = 200;

pub fn default_grid(model: ModelName, dims: [usize; 2], every: usize) -> GridConfig {
    GridConfig {
        dims,
        ranges: [default_range(model, dims[0]), default_range(model, dims[1])],
        resolution: [DEFAULT_GRID_RESOLUTION; 2],
        every,
    }
}

fn positive(key: &str, value: f64) -> Result<f64, ConfigError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(ConfigError::invalid(key, format!("must be positive and finite, got {value}")))
    }
}

fn nonnegative(key: &str, value: f64) -> Result<f64, ConfigError> {
    if value >= 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(ConfigError::invalid(key, format!("must be non-negative and finite, got {value}")))
    }
}

fn at_least_one(key: &str, value: usize) -> Result<usize, ConfigError> {
    if value >= 1 {
        Ok(value)
    } else {
        Err(ConfigError::invalid(key, "must be at least 1"))
    }
}

fn per_dim(key: &str, values: Option<Vec<f64>>, fill: f64, d: usize) -> Result<Vec<f64>, ConfigError> {
    let values = values.unwrap_or_else(|| vec![fill; d]);
    if values.len() != d {
        return Err(ConfigError::invalid(key, format!("expected {d} entries, got {}", values.len())));
    }
    for &v in &values {
        positive(key, v)?;
    }
    Ok(values)
}

impl ConfigFile {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    pub fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let m = &self.model;
        let def = defaults(m.name);
        let model = match m.name {
            ModelName::Vdp => {
                let hh_only = [
                    ("mode", m.mode.is_some()),
                    ("c_m", m.c_m.is_some()),
                    ("g_na", m.g_na.is_some()),
                    ("e_na", m.e_na.is_some()),
                    ("g_k", m.g_k.is_some()),
                    ("e_k", m.e_k.is_some()),
                    ("g_l", m.g_l.is_some()),
                    ("e_l", m.e_l.is_some()),
                    ("i_app", m.i_app.is_some()),
                    ("v_threshold", m.v_threshold.is_some()),
                    ("v_coupling", m.v_coupling.is_some()),
                ];
                if let Some((key, _)) = hh_only.iter().find(|(_, set)| *set) {
                    return Err(ConfigError::invalid(format!("model.{key}"), "only applies to model `hh`"));
                }
                ModelConfig::Vdp {
                    mu: positive("model.mu", m.mu.unwrap_or(1.5))?,
                }
            }
            ModelName::Hh => {
                if m.mu.is_some() {
                    return Err(ConfigError::invalid("model.mu", "only applies to model `vdp`"));
                }
                let mode = m.mode.unwrap_or(HhMode::Excitatory);
                let base = HHParameters::default();
                let v_coupling_default = match mode {
                    HhMode::Excitatory => V_COUPLING_EXCITATORY,
                    HhMode::Inhibitory => V_COUPLING_INHIBITORY,
                };
                let params = HHParameters {
                    c_m: positive("model.c_m", m.c_m.unwrap_or(base.c_m))?,
                    g_na: nonnegative("model.g_na", m.g_na.unwrap_or(base.g_na))?,
                    e_na: m.e_na.unwrap_or(base.e_na),
                    g_k: nonnegative("model.g_k", m.g_k.unwrap_or(base.g_k))?,
                    e_k: m.e_k.unwrap_or(base.e_k),
                    g_l: nonnegative("model.g_l", m.g_l.unwrap_or(base.g_l))?,
                    e_l: m.e_l.unwrap_or(base.e_l),
                    i_app: m.i_app.unwrap_or(base.i_app),
                    v_threshold: m.v_threshold.unwrap_or(base.v_threshold),
                    v_coupling: m.v_coupling.unwrap_or(v_coupling_default),
                };
                ModelConfig::Hh { params, mode }
            }
        };
        let d = model.dim();

        let method = self.integrator.method.unwrap_or(MethodName::Rk4);
        let integrator = IntegratorConfig {
            substeps: at_least_one("integrator.substeps", self.integrator.substeps.unwrap_or(def.substeps))?,
            method: match method {
                MethodName::Rk4 => {
                    if self.integrator.atol.is_some() || self.integrator.rtol.is_some() {
                        return Err(ConfigError::invalid("integrator.atol", "tolerances need method = \"dopri\""));
                    }
                    IntegratorMethod::Rk4
                }
                MethodName::Dopri => IntegratorMethod::DormandPrince {
                    atol: positive("integrator.atol", self.integrator.atol.unwrap_or(1e-10))?,
                    rtol: positive("integrator.rtol", self.integrator.rtol.unwrap_or(1e-8))?,
                },
            },
        };

        let w_min = self.prune.w_min.unwrap_or(def.w_min);
        if !(0.0..=1e-6).contains(&w_min) {
            return Err(ConfigError::invalid("prune.w_min", "must lie in [0, 1e-6]"));
        }

        let initial = self.resolve_initial(&model, &def)?;

        let mc = McConfig {
            n: at_least_one("mc.n", self.mc.n.unwrap_or(def.mc_n))?,
            seed: self.mc.seed.unwrap_or(1),
            substeps: at_least_one("mc.substeps", self.mc.substeps.unwrap_or(10))?,
        };

        let out = &self.output;
        let grid = match &out.grid {
            None => None,
            Some(g) => {
                let dims = g.dims.unwrap_or([0, 1]);
                if dims[0] == dims[1] || dims[0] >= d || dims[1] >= d {
                    return Err(ConfigError::invalid(
                        "output.grid.dims",
                        format!("need two distinct dimensions below {d}"),
                    ));
                }
                let mut grid = default_grid(model.name(), dims, g.every.unwrap_or(10));
                if let Some(r) = g.ranges {
                    for range in &r {
                        if !(range[0] < range[1]) {
                            return Err(ConfigError::invalid("output.grid.ranges", "each range needs min < max"));
                        }
                    }
                    grid.ranges = r;
                }
                if let Some(res) = g.resolution {
                    at_least_one("output.grid.resolution", res[0].min(res[1]))?;
                    grid.resolution = res;
                }
                at_least_one("output.grid.every", grid.every)?;
                Some(grid)
            }
        };

        Ok(RunConfig {
            solver: self.solver.unwrap_or(Solver::Appd),
            k: nonnegative("diffusion.k", self.diffusion.k.unwrap_or(def.k))?,
            strength: nonnegative("coupling.strength", self.coupling.strength.unwrap_or(def.strength))?,
            t_end: positive("time.t_end", self.time.t_end.unwrap_or(def.t_end))?,
            dt: positive("time.dt", self.time.dt.unwrap_or(def.dt))?,
            integrator,
            split_enabled: self.split.enabled.unwrap_or(true),
            tolerance: positive("split.tolerance", self.split.tolerance.unwrap_or(0.05))?,
            variance_cap: per_dim("split.variance_cap", self.split.variance_cap.clone(), def.variance_cap, d)?,
            max_splits: self.split.max_splits.unwrap_or(8),
            combine_enabled: self.combine.enabled.unwrap_or(true),
            cell_side: per_dim("combine.cell_side", self.combine.cell_side.clone(), def.cell_side, d)?,
            w_min,
            initial,
            mc,
            output: OutputConfig {
                dir: out.dir.clone().unwrap_or_else(|| PathBuf::from("appd_out")),
                stride: at_least_one("output.stride", out.stride.unwrap_or(1))?,
                snapshot_every: out.snapshot_every.unwrap_or(10),
                grid,
            },
            model,
        })
    }

    fn resolve_initial(&self, model: &ModelConfig, def: &Defaults) -> Result<InitialConfig, ConfigError> {
        let s = &self.initial;
        let d = model.dim();
        let kind = s.kind.unwrap_or(if s.particles.is_some() {
            InitialKind::Particles
        } else {
            def.initial
        });
        let unused = |key: &str, set: bool| {
            if set {
                Err(ConfigError::invalid(
                    format!("initial.{key}"),
                    format!("not used by initial kind {kind:?}"),
                ))
            } else {
                Ok(())
            }
        };
        let sigma0 = || positive("initial.sigma0", s.sigma0.unwrap_or(def.sigma0));
        match kind {
            InitialKind::LimitCycle => {
                unused("center", s.center.is_some())?;
                unused("particles", s.particles.is_some())?;
                Ok(InitialConfig::LimitCycle {
                    n: at_least_one("initial.n", s.n.unwrap_or(def.n_particles))?,
                    sigma0: sigma0()?,
                    t_transient: nonnegative("initial.t_transient", s.t_transient.unwrap_or(50.0))?,
                    search_horizon: positive("initial.search_horizon", s.search_horizon.unwrap_or(200.0))?,
                    step: positive("initial.step", s.step.unwrap_or(1e-3))?,
                })
            }
            InitialKind::Gaussian => {
                for (key, set) in [
                    ("n", s.n.is_some()),
                    ("t_transient", s.t_transient.is_some()),
                    ("search_horizon", s.search_horizon.is_some()),
                    ("step", s.step.is_some()),
                    ("particles", s.particles.is_some()),
                ] {
                    unused(key, set)?;
                }
                let center = match &s.center {
                    Some(c) => c.clone(),
                    None => rest_state(model),
                };
                if center.len() != d || !center.iter().all(|x| x.is_finite()) {
                    return Err(ConfigError::invalid("initial.center", format!("expected {d} finite entries")));
                }
                Ok(InitialConfig::Gaussian {
                    center,
                    sigma0: sigma0()?,
                })
            }
            InitialKind::Particles => {
                for (key, set) in [
                    ("n", s.n.is_some()),
                    ("sigma0", s.sigma0.is_some()),
                    ("center", s.center.is_some()),
                    ("t_transient", s.t_transient.is_some()),
                    ("search_horizon", s.search_horizon.is_some()),
                    ("step", s.step.is_some()),
                ] {
                    unused(key, set)?;
                }
                let particles = s
                    .particles
                    .clone()
                    .ok_or_else(|| ConfigError::invalid("initial.particles", "required for kind \"particles\""))?;
                if particles.is_empty() {
                    return Err(ConfigError::invalid("initial.particles", "needs at least one particle"));
                }
                for p in &particles {
                    if !(p.weight > 0.0) || !p.weight.is_finite() {
                        return Err(ConfigError::invalid("initial.particles.weight", "must be positive"));
                    }
                    if p.center.len() != d {
                        return Err(ConfigError::invalid("initial.particles.center", format!("expected {d} entries")));
                    }
                    if p.sqrt_factor.len() != d || p.sqrt_factor.iter().any(|r| r.len() != d) {
                        return Err(ConfigError::invalid(
                            "initial.particles.sqrt_factor",
                            format!("expected a {d}x{d} matrix"),
                        ));
                    }
                }
                Ok(InitialConfig::Particles(particles))
            }
        }
    }
}

/// Resting state of the uncoupled model: the origin for Van der Pol, the
/// gating equilibrium at 0 mV for Hodgkin–Huxley.
fn rest_state(model: &ModelConfig) -> Vec<f64> {
    match model {
        ModelConfig::Vdp { .. } => vec![0.0; 2],
        ModelConfig::Hh { .. } => {
            let (m, n, h) = appd_core::models::hh_gating_equilibrium(0.0);
            vec![0.0, m, n, h]
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        ConfigFile::load(path)?.resolve()
    }

    /// Fully populated file form of this configuration.
    pub fn to_file(&self) -> ConfigFile {
        let model = match &self.model {
            ModelConfig::Vdp { mu } => ModelSection {
                name: ModelName::Vdp,
                mu: Some(*mu),
                ..ModelSection::default()
            },
            ModelConfig::Hh { params: p, mode } => ModelSection {
                name: ModelName::Hh,
                mu: None,
                mode: Some(*mode),
                c_m: Some(p.c_m),
                g_na: Some(p.g_na),
                e_na: Some(p.e_na),
                g_k: Some(p.g_k),
                e_k: Some(p.e_k),
                g_l: Some(p.g_l),
                e_l: Some(p.e_l),
                i_app: Some(p.i_app),
                v_threshold: Some(p.v_threshold),
                v_coupling: Some(p.v_coupling),
            },
        };
        let integrator = match self.integrator.method {
            IntegratorMethod::Rk4 => IntegratorSection {
                method: Some(MethodName::Rk4),
                substeps: Some(self.integrator.substeps),
                atol: None,
                rtol: None,
            },
            IntegratorMethod::DormandPrince { atol, rtol } => IntegratorSection {
                method: Some(MethodName::Dopri),
                substeps: Some(self.integrator.substeps),
                atol: Some(atol),
                rtol: Some(rtol),
            },
        };
        let initial = match &self.initial {
            InitialConfig::LimitCycle {
                n,
                sigma0,
                t_transient,
                search_horizon,
                step,
            } => InitialSection {
                kind: Some(InitialKind::LimitCycle),
                n: Some(*n),
                sigma0: Some(*sigma0),
                t_transient: Some(*t_transient),
                search_horizon: Some(*search_horizon),
                step: Some(*step),
                ..InitialSection::default()
            },
            InitialConfig::Gaussian { center, sigma0 } => InitialSection {
                kind: Some(InitialKind::Gaussian),
                center: Some(center.clone()),
                sigma0: Some(*sigma0),
                ..InitialSection::default()
            },
            InitialConfig::Particles(ps) => InitialSection {
                kind: Some(InitialKind::Particles),
                particles: Some(ps.clone()),
                ..InitialSection::default()
            },
        };
        ConfigFile {
            solver: Some(self.solver),
            model,
            diffusion: DiffusionSection { k: Some(self.k) },
            coupling: CouplingSection {
                strength: Some(self.strength),
            },
            time: TimeSection {
                t_end: Some(self.t_end),
                dt: Some(self.dt),
            },
            integrator,
            split: SplitSection {
                enabled: Some(self.split_enabled),
                tolerance: Some(self.tolerance),
                variance_cap: Some(self.variance_cap.clone()),
                max_splits: Some(self.max_splits),
            },
            combine: CombineSection {
                enabled: Some(self.combine_enabled),
                cell_side: Some(self.cell_side.clone()),
            },
            prune: PruneSection { w_min: Some(self.w_min) },
            initial,
            mc: McSection {
                n: Some(self.mc.n),
                seed: Some(self.mc.seed),
                substeps: Some(self.mc.substeps),
            },
            output: OutputSection {
                dir: Some(self.output.dir.clone()),
                stride: Some(self.output.stride),
                snapshot_every: Some(self.output.snapshot_every),
                grid: self.output.grid.as_ref().map(|g| GridSection {
                    dims: Some(g.dims),
                    ranges: Some(g.ranges),
                    resolution: Some(g.resolution),
                    every: Some(g.every),
                }),
            },
        }
    }

    /// TOML text of the resolved configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(&self.to_file()).expect("resolved config always serializes")
    }
}
