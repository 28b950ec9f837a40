//! The APPD macro loop and the Monte Carlo comparator.
//!
//! Per macro step: refresh the frozen coupling, record a frame, propagate
//! every particle, split, combine, prune and renormalize.

use std::path::Path;
use std::time::Instant;

use appd_core::adaptivity::{combine_pass, refine_particle, CombineGrid, SplitConstants, SplitPolicy};
use appd_core::coupling::{refresh_coupling, CouplingState};
use appd_core::lskf::propagate;
use appd_core::mc::{count_crossings, em_update, noise_factor, Ensemble};
use appd_core::models::{limit_cycle_seed, CoupledField, LimitCycleOptions, Model};
use appd_core::particle::{mixture_moments, DiffusionSpec, DomainBox, GaussianParticle, Population, StateVector};
use appd_core::{AppdError, IntegratorConfig};
use rayon::prelude::*;

use crate::config::{InitialConfig, RunConfig};
use crate::error::Result;
use crate::output::{self, FrameSink, ObservableFrame};

/// Everything the APPD step needs besides the model and the population.
#[derive(Debug, Clone)]
pub struct EngineSettings<const D: usize> {
    pub dt: f64,
    pub integrator: IntegratorConfig,
    pub split: Option<SplitPolicy<D>>,
    pub constants: SplitConstants,
    pub combine: Option<CombineGrid<D>>,
    pub w_min: f64,
}

impl<const D: usize> EngineSettings<D> {
    pub fn from_config(cfg: &RunConfig) -> Self {
        let vec = |v: &[f64]| StateVector::<D>::from_fn(|i, _| v[i]);
        Self {
            dt: cfg.dt,
            integrator: cfg.integrator,
            split: cfg.split_enabled.then(|| SplitPolicy {
                linearity_tolerance: cfg.tolerance,
                variance_cap: vec(&cfg.variance_cap),
                max_splits: cfg.max_splits,
            }),
            constants: SplitConstants::DEFAULT,
            combine: cfg.combine_enabled.then(|| CombineGrid::new(vec(&cfg.cell_side))),
            w_min: cfg.w_min,
        }
    }
}

/// Drop particles lighter than `w_min` and rescale the rest to unit total
/// weight. Returns the discarded mass.
pub fn prune_and_renormalize<const D: usize>(particles: &mut Vec<GaussianParticle<D>>, w_min: f64) -> Result<f64> {
    let mut dropped = 0.0;
    particles.retain(|p| {
        if p.weight < w_min {
            dropped += p.weight;
            false
        } else {
            true
        }
    });
    if particles.is_empty() {
        return Err(AppdError::AllParticlesPruned.into());
    }
    let total: f64 = particles.iter().map(|p| p.weight).sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(AppdError::EmptyMixture.into());
    }
    let scale = 1.0 / total;
    for p in particles.iter_mut() {
        p.weight *= scale;
    }
    Ok(dropped)
}

pub struct AppdSimulation<'m, M: ?Sized, const D: usize> {
    pub model: &'m M,
    pub settings: EngineSettings<D>,
    pub population: Population<D>,
    pub step_index: usize,
    pub dropped_mass: f64,
    domain: DomainBox<D>,
    diffusion: DiffusionSpec<D>,
}

impl<'m, M: Model<D> + ?Sized, const D: usize> AppdSimulation<'m, M, D> {
    pub fn new(model: &'m M, settings: EngineSettings<D>, particles: Vec<GaussianParticle<D>>) -> Self {
        Self {
            domain: model.domain(),
            diffusion: model.diffusion(),
            population: Population::new(particles, CouplingState::new(model.coupling())),
            model,
            settings,
            step_index: 0,
            dropped_mass: 0.0,
        }
    }

    pub fn time(&self) -> f64 {
        self.population.time
    }

    /// Measure the coupling functional on the current population.
    pub fn refresh_coupling(&mut self) -> Result<()> {
        self.population.coupling = refresh_coupling(&self.population.coupling, &self.population.particles, self.model)?;
        Ok(())
    }

    pub fn frame(&self) -> Result<ObservableFrame> {
        let moments = mixture_moments(&self.population.particles)?;
        let mean: Vec<f64> = moments.mean.iter().copied().collect();
        Ok(ObservableFrame {
            time: self.population.time,
            total_weight: moments.total_weight,
            n_particles: self.population.len(),
            mean_v_mv: self.model.voltage_scale().map_or(f64::NAN, |s| s * mean[0]),
            mean,
            q: self.population.coupling.q,
            coupling_value: self.population.coupling.frozen_value,
        })
    }

    /// Propagate, split, combine and prune with the coupling currently frozen.
    pub fn advance(&mut self) -> Result<()> {
        let t0 = self.population.time;
        let t1 = (self.step_index + 1) as f64 * self.settings.dt;
        let field = CoupledField {
            model: self.model,
            coupling_value: self.population.coupling.frozen_value,
        };
        let s = &self.settings;
        let (domain, diffusion) = (&self.domain, &self.diffusion);

        let moved: Vec<GaussianParticle<D>> = self
            .population
            .particles
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                propagate(p, &field, diffusion, domain, t0, t1, &s.integrator).map_err(|e| match e {
                    AppdError::IntegrationFailure { time, min_step, .. } => AppdError::IntegrationFailure {
                        time,
                        particle: Some(i),
                        min_step,
                    },
                    other => other,
                })
            })
            .collect::<std::result::Result<_, _>>()?;

        let split = match &s.split {
            Some(policy) => moved
                .par_iter()
                .map(|p| refine_particle(p, &field, policy, &s.constants, domain))
                .collect::<std::result::Result<Vec<_>, _>>()?
                .into_iter()
                .flatten()
                .collect(),
            None => moved,
        };

        let mut combined = match &s.combine {
            Some(grid) => combine_pass(&split, grid)?,
            None => split,
        };
        self.dropped_mass += prune_and_renormalize(&mut combined, s.w_min)?;

        self.population.particles = combined;
        self.population.time = t1;
        self.step_index += 1;
        Ok(())
    }
}

/// Initial population from the configuration.
pub fn initial_particles<M: Model<D> + ?Sized, const D: usize>(
    model: &M,
    init: &InitialConfig,
) -> Result<Vec<GaussianParticle<D>>> {
    Ok(match init {
        InitialConfig::LimitCycle {
            n,
            sigma0,
            t_transient,
            search_horizon,
            step,
        } => {
            let opts = LimitCycleOptions {
                t_transient: *t_transient,
                search_horizon: *search_horizon,
                step: *step,
            };
            limit_cycle_seed(model, *n, *sigma0, &opts)?.particles
        }
        InitialConfig::Gaussian { center, sigma0 } => {
            vec![GaussianParticle::isotropic(1.0, StateVector::<D>::from_fn(|i, _| center[i]), *sigma0)]
        }
        InitialConfig::Particles(specs) => {
            let mut ps: Vec<GaussianParticle<D>> = specs
                .iter()
                .map(|s| {
                    GaussianParticle::new(
                        s.weight,
                        StateVector::<D>::from_fn(|i, _| s.center[i]),
                        nalgebra::SMatrix::<f64, D, D>::from_fn(|r, c| s.sqrt_factor[r][c]),
                    )
                })
                .collect();
            prune_and_renormalize(&mut ps, 0.0)?;
            ps
        }
    })
}

/// What a finished run hands back besides the files it wrote.
#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub frames: Vec<ObservableFrame>,
    /// Upward crossings of the model's section by the population mean.
    pub spikes: Vec<f64>,
    pub dropped_mass: f64,
    pub wall_seconds: f64,
    /// Wall time and particle count at the start of every macro step (APPD only).
    pub step_profile: Vec<(f64, usize)>,
}

/// Where a run writes, if anywhere.
pub struct RunOutput<'a> {
    pub dir: Option<&'a Path>,
}

struct Recorder<'a> {
    dir: Option<&'a Path>,
    sink: Option<FrameSink>,
    cfg: &'a RunConfig,
    frames: Vec<ObservableFrame>,
}

impl<'a> Recorder<'a> {
    fn new(dir: Option<&'a Path>, cfg: &'a RunConfig, d: usize) -> Result<Self> {
        let sink = match dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| crate::error::EngineError::io(dir, e))?;
                output::write_text(&dir.join("resolved.cfg"), &cfg.to_toml())?;
                Some(FrameSink::create(dir, d)?)
            }
            None => None,
        };
        Ok(Self {
            dir,
            sink,
            cfg,
            frames: Vec::new(),
        })
    }

    fn record<const D: usize>(&mut self, frame: ObservableFrame, particles: Option<&[GaussianParticle<D>]>) -> Result<()> {
        let index = self.frames.len();
        if let Some(sink) = &mut self.sink {
            sink.push(&frame)?;
        }
        self.frames.push(frame);
        let (Some(dir), Some(particles)) = (self.dir, particles) else {
            return Ok(());
        };
        let out = &self.cfg.output;
        if out.snapshot_every > 0 && index % out.snapshot_every == 0 {
            output::write_particles(&output::particles_path(dir, index), particles)?;
        }
        if let Some(g) = &out.grid {
            if index % g.every == 0 {
                let grid = output::density_grid(particles, g.dims, g.ranges, g.resolution);
                output::write_grid(&output::grid_path(dir, index, g.dims), &grid)?;
            }
        }
        Ok(())
    }

    fn finish<M: Model<D> + ?Sized, const D: usize>(
        self,
        model: &M,
        dropped_mass: f64,
        started: Instant,
        step_profile: Vec<(f64, usize)>,
    ) -> Result<RunSummary> {
        let section = model.section();
        let times: Vec<f64> = self.frames.iter().map(|f| f.time).collect();
        let series: Vec<f64> = self.frames.iter().map(|f| f.mean[section.dim]).collect();
        let spikes = output::upward_crossings(&times, &series, section.value);
        if let Some(dir) = self.dir {
            output::write_spikes(&dir.join("spikes.csv"), &spikes)?;
        }
        Ok(RunSummary {
            frames: self.frames,
            spikes,
            dropped_mass,
            wall_seconds: started.elapsed().as_secs_f64(),
            step_profile,
        })
    }
}

/// Run the APPD solver. Frames are taken at the start of every
/// `output.stride`-th step and once more at the end.
pub fn run_appd<M: Model<D> + ?Sized, const D: usize>(model: &M, cfg: &RunConfig, out: RunOutput) -> Result<RunSummary> {
    let started = Instant::now();
    let mut rec = Recorder::new(out.dir, cfg, D)?;
    let particles = initial_particles(model, &cfg.initial)?;
    let mut sim = AppdSimulation::new(model, EngineSettings::from_config(cfg), particles);
    let n_steps = cfg.n_steps();
    let mut profile = Vec::with_capacity(n_steps);

    let result = (|| -> Result<()> {
        for step in 0..n_steps {
            sim.refresh_coupling()?;
            if step % cfg.output.stride == 0 {
                rec.record(sim.frame()?, Some(&sim.population.particles))?;
            }
            profile.push((started.elapsed().as_secs_f64(), sim.population.len()));
            sim.advance()?;
        }
        sim.refresh_coupling()?;
        rec.record(sim.frame()?, Some(&sim.population.particles))
    })();
    result?;
    rec.finish(model, sim.dropped_mass, started, profile)
}

fn ensemble_frame<M: Model<D> + ?Sized, const D: usize>(model: &M, e: &Ensemble<D>) -> ObservableFrame {
    let mean: Vec<f64> = e.mean().iter().copied().collect();
    ObservableFrame {
        time: e.time,
        total_weight: 1.0,
        n_particles: e.len(),
        mean_v_mv: model.voltage_scale().map_or(f64::NAN, |s| s * mean[0]),
        mean,
        q: e.coupling.q,
        coupling_value: e.coupling.frozen_value,
    }
}

/// Run the Monte Carlo baseline with the same initial density, macro step
/// and coupling cadence as the APPD solver.
pub fn run_mc<M: Model<D> + ?Sized, const D: usize>(model: &M, cfg: &RunConfig, out: RunOutput) -> Result<RunSummary> {
    use appd_core::coupling::CouplingKind;

    let started = Instant::now();
    let mut rec = Recorder::new(out.dir, cfg, D)?;
    let domain = model.domain();
    let mixture = initial_particles(model, &cfg.initial)?;
    let mut e = Ensemble::from_mixture(&mixture, cfg.mc.n, cfg.mc.seed, model.coupling(), &domain)?;

    let sub = cfg.mc.substeps;
    let h = cfg.dt / sub as f64;
    let noise = noise_factor(&model.diffusion(), h);
    let threshold = match model.coupling() {
        CouplingKind::Threshold { threshold, .. } => Some(threshold),
        _ => None,
    };
    let n_steps = cfg.n_steps();
    // Crossings counted over the step that just ended.
    let mut last_crossings = 0usize;

    let measure = |e: &Ensemble<D>, crossings: usize| -> f64 {
        match e.coupling.kind {
            CouplingKind::None => 0.0,
            CouplingKind::MeanField { observable_dim, .. } => {
                let sum: f64 = e.states.iter().map(|x| x[observable_dim]).sum();
                sum / e.len() as f64
            }
            CouplingKind::Threshold { .. } => crossings as f64 / (e.len() as f64 * cfg.dt),
        }
    };

    for step in 0..n_steps {
        e.coupling = e.coupling.advance(measure(&e, last_crossings));
        if step % cfg.output.stride == 0 {
            rec.record::<D>(ensemble_frame(model, &e), None)?;
        }
        let field = CoupledField {
            model,
            coupling_value: e.coupling.frozen_value,
        };
        let crossings: Vec<usize> = e
            .states
            .par_iter_mut()
            .zip(e.rngs.par_iter_mut())
            .map(|(x, rng)| {
                let mut count = 0;
                for _ in 0..sub {
                    let next = em_update(x, rng, &field, &noise, h, &domain);
                    if let Some(th) = threshold {
                        count += count_crossings(std::slice::from_ref(x), std::slice::from_ref(&next), th);
                    }
                    *x = next;
                }
                count
            })
            .collect();
        last_crossings = crossings.iter().sum();
        e.time = (step + 1) as f64 * cfg.dt;
        if let Some(bad) = e.states.iter().find(|x| !x.iter().all(|c| c.is_finite())) {
            return Err(AppdError::NonFiniteVelocity {
                point: bad.iter().copied().collect(),
            }
            .into());
        }
    }
    e.coupling = e.coupling.advance(measure(&e, last_crossings));
    rec.record::<D>(ensemble_frame(model, &e), None)?;
    rec.finish(model, 0.0, started, Vec::new())
}
