//! Oscillator models: Van der Pol with mean-field coupling and the scaled
//! four-dimensional Hodgkin–Huxley neuron with threshold coupling.

use alloc::vec::Vec;

use nalgebra::{Vector2, Vector4};

use crate::coupling::{CouplingKind, CouplingState};
use crate::lskf::VelocityField;
use crate::particle::{DiffusionSpec, DomainBox, GaussianParticle, Population, StateVector};
use crate::{AppdError, Result};

/// Upward crossing of `x[dim]` through `value`, used as a Poincaré section.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Section {
    pub dim: usize,
    pub value: f64,
}

pub trait Model<const D: usize>: Send + Sync {
    fn name(&self) -> &'static str;

    /// Dynamic velocity `v_d(x)`.
    fn dynamic_velocity(&self, x: &StateVector<D>) -> StateVector<D>;

    /// Coupling velocity `w_c(x)·value` for a frozen coupling value.
    fn coupling_velocity(&self, x: &StateVector<D>, value: f64) -> StateVector<D>;

    fn domain(&self) -> DomainBox<D>;

    fn diffusion(&self) -> DiffusionSpec<D>;

    fn coupling(&self) -> CouplingKind;

    fn section(&self) -> Section;

    /// A point from which the uncoupled dynamics settles onto the limit cycle.
    fn reference_state(&self) -> StateVector<D>;

    /// Factor turning component 0 into millivolts, for neuron models.
    fn voltage_scale(&self) -> Option<f64> {
        None
    }

    /// Total velocity with the coupling value frozen.
    fn field(&self, coupling_value: f64) -> CoupledField<'_, Self, D>
    where
        Self: Sized,
    {
        CoupledField {
            model: self,
            coupling_value,
        }
    }
}

/// `v(x) = v_d(x) + w_c(x)·value` for a fixed coupling value.
pub struct CoupledField<'a, M: ?Sized, const D: usize> {
    pub model: &'a M,
    pub coupling_value: f64,
}

impl<M: Model<D> + ?Sized, const D: usize> VelocityField<D> for CoupledField<'_, M, D> {
    #[inline]
    fn velocity(&self, x: &StateVector<D>) -> StateVector<D> {
        let mut v = self.model.dynamic_velocity(x);
        if self.coupling_value != 0.0 {
            v += self.model.coupling_velocity(x, self.coupling_value);
        }
        v
    }
}

// ---------------------------------------------------------------------------
// Van der Pol

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VanDerPol {
    pub mu: f64,
    /// Mean-field coupling coefficient α.
    pub alpha: f64,
    /// Isotropic diffusion coefficient.
    pub k: f64,
}

impl VanDerPol {
    pub fn new(mu: f64, alpha: f64, k: f64) -> Self {
        Self { mu, alpha, k }
    }
}

/// `v₁ = μ(x₁ − x₁³/3 − x₂) + mean_field`, `v₂ = x₁/μ`.
#[inline]
pub fn vdp_velocity(x: &Vector2<f64>, mu: f64, mean_field: f64) -> Vector2<f64> {
    let x1 = x[0];
    Vector2::new(mu * (x1 - x1 * x1 * x1 / 3.0 - x[1]) + mean_field, x1 / mu)
}

impl Model<2> for VanDerPol {
    fn name(&self) -> &'static str {
        "vdp"
    }

    fn dynamic_velocity(&self, x: &Vector2<f64>) -> Vector2<f64> {
        vdp_velocity(x, self.mu, 0.0)
    }

    fn coupling_velocity(&self, _x: &Vector2<f64>, value: f64) -> Vector2<f64> {
        Vector2::new(value, 0.0)
    }

    fn domain(&self) -> DomainBox<2> {
        DomainBox::unbounded()
    }

    fn diffusion(&self) -> DiffusionSpec<2> {
        DiffusionSpec::isotropic(self.k)
    }

    fn coupling(&self) -> CouplingKind {
        CouplingKind::MeanField {
            alpha: self.alpha,
            observable_dim: 0,
        }
    }

    fn section(&self) -> Section {
        // x₂ increases where x₁ > 0, so this is the x₂ = 0 upward crossing.
        Section { dim: 1, value: 0.0 }
    }

    fn reference_state(&self) -> Vector2<f64> {
        Vector2::new(2.0, 0.0)
    }
}

// ---------------------------------------------------------------------------
// Hodgkin–Huxley
//
// State storage order is (0.01·V, m, n, h), V in mV relative to rest.

pub const HH_VOLTAGE_SCALE: f64 = 100.0;
pub const V_COUPLING_EXCITATORY: f64 = 50.0;
pub const V_COUPLING_INHIBITORY: f64 = -35.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HHParameters {
    /// Membrane capacitance, µF/cm².
    pub c_m: f64,
    pub g_na: f64,
    pub e_na: f64,
    pub g_k: f64,
    pub e_k: f64,
    pub g_l: f64,
    pub e_l: f64,
    /// Applied current, µA/cm². Depolarizing when positive.
    pub i_app: f64,
    /// Firing threshold, mV.
    pub v_threshold: f64,
    /// Reversal potential of the coupling conductance, mV.
    pub v_coupling: f64,
}

impl Default for HHParameters {
    fn default() -> Self {
        Self {
            c_m: 1.0,
            g_na: 120.0,
            e_na: 115.0,
            g_k: 36.0,
            e_k: -12.0,
            g_l: 0.3,
            e_l: 10.613,
            i_app: 10.0,
            v_threshold: 45.0,
            v_coupling: V_COUPLING_EXCITATORY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HHRates {
    pub alpha_m: f64,
    pub beta_m: f64,
    pub alpha_h: f64,
    pub beta_h: f64,
    pub alpha_n: f64,
    pub beta_n: f64,
}

const EXP_ARG_LIMIT: f64 = 500.0;

#[inline]
fn guarded_exp(x: f64) -> f64 {
    libm::exp(x.clamp(-EXP_ARG_LIMIT, EXP_ARG_LIMIT))
}

/// `u / (1 − e^(−u))`, with its limit 1 at `u = 0`.
#[inline]
fn relative_rate(u: f64) -> f64 {
    if u.abs() < 1e-7 {
        1.0 + u / 2.0 + u * u / 12.0
    } else {
        u / -libm::expm1(-u.clamp(-EXP_ARG_LIMIT, EXP_ARG_LIMIT))
    }
}

/// Channel opening/closing rates (1/ms) at membrane potential `v` (mV).
pub fn hh_rates(v: f64) -> HHRates {
    HHRates {
        // 0.1(V−25)/(1−exp(−(V−25)/10))
        alpha_m: relative_rate((v - 25.0) / 10.0),
        beta_m: 4.0 * guarded_exp(-v / 18.0),
        alpha_h: 0.07 * guarded_exp(-v / 20.0),
        beta_h: 1.0 / (1.0 + guarded_exp(-(v - 30.0) / 10.0)),
        // 0.01(V−10)/(1−exp(−(V−10)/10))
        alpha_n: 0.1 * relative_rate((v - 10.0) / 10.0),
        beta_n: 0.125 * guarded_exp(-v / 80.0),
    }
}

/// Unscaled `dV/dt` in mV/ms. Gating variables are taken as given.
#[inline]
pub fn membrane_derivative(v: f64, m: f64, n: f64, h: f64, p: &HHParameters, g_coupling: f64) -> f64 {
    let i_na = p.g_na * m * m * m * h * (v - p.e_na);
    let i_k = p.g_k * n * n * n * n * (v - p.e_k);
    let i_l = p.g_l * (v - p.e_l);
    let i_c = g_coupling * (v - p.v_coupling);
    (-i_na - i_k - i_l - i_c + p.i_app) / p.c_m
}

/// Scaled velocity of `x = (0.01·V, m, n, h)`. Gating components are clamped
/// to `[0, 1]` before the kinetics are evaluated.
#[inline]
pub fn hh_velocity(x: &Vector4<f64>, p: &HHParameters, g_coupling: f64) -> Vector4<f64> {
    let v = HH_VOLTAGE_SCALE * x[0];
    let m = x[1].clamp(0.0, 1.0);
    let n = x[2].clamp(0.0, 1.0);
    let h = x[3].clamp(0.0, 1.0);
    let r = hh_rates(v);
    Vector4::new(
        membrane_derivative(v, m, n, h, p, g_coupling) / HH_VOLTAGE_SCALE,
        r.alpha_m * (1.0 - m) - r.beta_m * m,
        r.alpha_n * (1.0 - n) - r.beta_n * n,
        r.alpha_h * (1.0 - h) - r.beta_h * h,
    )
}

/// Steady-state gating values `(m∞, n∞, h∞)` at potential `v`.
pub fn hh_gating_equilibrium(v: f64) -> (f64, f64, f64) {
    let r = hh_rates(v);
    (
        r.alpha_m / (r.alpha_m + r.beta_m),
        r.alpha_n / (r.alpha_n + r.beta_n),
        r.alpha_h / (r.alpha_h + r.beta_h),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HodgkinHuxley {
    pub params: HHParameters,
    /// Isotropic diffusion coefficient in scaled units.
    pub k: f64,
    /// Threshold coupling coefficient `c`.
    pub c: f64,
}

impl HodgkinHuxley {
    pub fn new(params: HHParameters, k: f64, c: f64) -> Self {
        Self { params, k, c }
    }

    pub fn excitatory(k: f64, c: f64) -> Self {
        Self::new(HHParameters::default(), k, c)
    }

    pub fn inhibitory(k: f64, c: f64) -> Self {
        Self::new(
            HHParameters {
                v_coupling: V_COUPLING_INHIBITORY,
                ..HHParameters::default()
            },
            k,
            c,
        )
    }

    pub fn threshold_scaled(&self) -> f64 {
        self.params.v_threshold / HH_VOLTAGE_SCALE
    }
}

impl Model<4> for HodgkinHuxley {
    fn name(&self) -> &'static str {
        "hh"
    }

    fn dynamic_velocity(&self, x: &Vector4<f64>) -> Vector4<f64> {
        hh_velocity(x, &self.params, 0.0)
    }

    fn coupling_velocity(&self, x: &Vector4<f64>, g: f64) -> Vector4<f64> {
        let v = HH_VOLTAGE_SCALE * x[0];
        Vector4::new(-g * (v - self.params.v_coupling) / (self.params.c_m * HH_VOLTAGE_SCALE), 0.0, 0.0, 0.0)
    }

    fn domain(&self) -> DomainBox<4> {
        DomainBox {
            bounds: [None, Some((0.0, 1.0)), Some((0.0, 1.0)), Some((0.0, 1.0))],
        }
    }

    fn diffusion(&self) -> DiffusionSpec<4> {
        DiffusionSpec::isotropic(self.k)
    }

    fn coupling(&self) -> CouplingKind {
        CouplingKind::Threshold {
            threshold: self.threshold_scaled(),
            c: self.c,
        }
    }

    fn section(&self) -> Section {
        Section {
            dim: 0,
            value: self.threshold_scaled(),
        }
    }

    fn reference_state(&self) -> Vector4<f64> {
        let (m, n, h) = hh_gating_equilibrium(0.0);
        Vector4::new(0.0, m, n, h)
    }

    fn voltage_scale(&self) -> Option<f64> {
        Some(HH_VOLTAGE_SCALE)
    }
}

// ---------------------------------------------------------------------------
// Deterministic trajectories and limit-cycle seeding

#[inline]
fn rk4<M: Model<D> + ?Sized, const D: usize>(model: &M, x: &StateVector<D>, h: f64) -> StateVector<D> {
    let f = |y: &StateVector<D>| model.dynamic_velocity(y);
    let k1 = f(x);
    let k2 = f(&(x + k1 * (0.5 * h)));
    let k3 = f(&(x + k2 * (0.5 * h)));
    let k4 = f(&(x + k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Integrate the uncoupled, noise-free dynamics with fixed RK4 steps.
pub fn integrate_trajectory<M: Model<D> + ?Sized, const D: usize>(
    model: &M,
    x0: &StateVector<D>,
    duration: f64,
    step: f64,
) -> StateVector<D> {
    let n = libm::ceil(duration / step).max(1.0) as usize;
    let h = duration / n as f64;
    let mut x = *x0;
    for _ in 0..n {
        x = rk4(model, &x, h);
    }
    x
}

/// Times of upward crossings of `section` along the uncoupled trajectory
/// from `x0`, linearly interpolated within each step.
pub fn section_crossings<M: Model<D> + ?Sized, const D: usize>(
    model: &M,
    x0: &StateVector<D>,
    duration: f64,
    step: f64,
    section: Section,
) -> Vec<f64> {
    let n = libm::ceil(duration / step).max(1.0) as usize;
    let h = duration / n as f64;
    let mut x = *x0;
    let mut out = Vec::new();
    for i in 0..n {
        let next = rk4(model, &x, h);
        let (a, b) = (x[section.dim], next[section.dim]);
        if a < section.value && b >= section.value {
            out.push((i as f64 + (section.value - a) / (b - a)) * h);
        }
        x = next;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitCycleOptions {
    /// Transient discarded before looking for section crossings.
    pub t_transient: f64,
    /// How long to keep looking for two crossings after the transient.
    pub search_horizon: f64,
    /// RK4 step of the reference trajectory.
    pub step: f64,
}

impl Default for LimitCycleOptions {
    fn default() -> Self {
        Self {
            t_transient: 50.0,
            search_horizon: 200.0,
            step: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitCycle<const D: usize> {
    pub period: f64,
    /// State on the section at the start of the recorded period.
    pub start: StateVector<D>,
    /// Component-wise bounding box of the orbit over one period.
    pub lower: StateVector<D>,
    pub upper: StateVector<D>,
}

/// Settle onto the uncoupled limit cycle and measure its period from two
/// consecutive upward section crossings.
pub fn detect_limit_cycle<M: Model<D> + ?Sized, const D: usize>(
    model: &M,
    opts: &LimitCycleOptions,
) -> Result<LimitCycle<D>> {
    let section = model.section();
    let h = opts.step;
    let mut x = integrate_trajectory(model, &model.reference_state(), opts.t_transient, h);

    let steps = libm::ceil(opts.search_horizon / h) as usize;
    let mut crossings: Vec<(f64, StateVector<D>)> = Vec::new();
    for i in 0..steps {
        let next = rk4(model, &x, h);
        let (a, b) = (x[section.dim], next[section.dim]);
        if a < section.value && b >= section.value {
            let frac = (section.value - a) / (b - a);
            crossings.push(((i as f64 + frac) * h, rk4(model, &x, frac * h)));
            if crossings.len() == 2 {
                break;
            }
        }
        x = next;
    }
    if crossings.len() < 2 {
        return Err(AppdError::NoOscillationDetected {
            horizon: opts.t_transient + opts.search_horizon,
        });
    }
    let period = crossings[1].0 - crossings[0].0;
    let start = crossings[1].1;

    let mut lower = start;
    let mut upper = start;
    let n = libm::ceil(period / h) as usize;
    let hh = period / n as f64;
    let mut y = start;
    for _ in 0..n {
        y = rk4(model, &y, hh);
        lower = lower.inf(&y);
        upper = upper.sup(&y);
    }
    Ok(LimitCycle {
        period,
        start,
        lower,
        upper,
    })
}

/// Place `n` particles at equal time spacing along one period of the
/// uncoupled limit cycle, each with covariance `sigma0²·I` and weight `1/n`.
pub fn limit_cycle_seed<M: Model<D> + ?Sized, const D: usize>(
    model: &M,
    n: usize,
    sigma0: f64,
    opts: &LimitCycleOptions,
) -> Result<Population<D>> {
    assert!(n >= 1, "need at least one particle");
    let cycle = detect_limit_cycle(model, opts)?;
    let spacing = cycle.period / n as f64;
    let weight = 1.0 / n as f64;
    let mut x = cycle.start;
    let mut particles = Vec::with_capacity(n);
    for _ in 0..n {
        particles.push(GaussianParticle::isotropic(weight, x, sigma0));
        x = integrate_trajectory(model, &x, spacing, opts.step);
    }
    Ok(Population::new(particles, CouplingState::new(model.coupling())))
}
