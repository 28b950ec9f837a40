//! Deterministic time update of a single Gaussian particle.
//!
//! The columns `Mᵢ` of the square-root factor are points on one level set of
//! the particle. Under drift `v` and constant diffusion `K` they evolve as
//!
//! ```text
//! dMᵢ/dt = ½(v(x₀+Mᵢ) − v(x₀−Mᵢ)) + K(Mᵀ)⁻¹eᵢ
//! dx₀/dt = (1/2d) Σᵢ [v(x₀+Mᵢ) + v(x₀−Mᵢ)]
//! ```
//!
//! and the `d×(d+1)` system is handed to an explicit Runge–Kutta solver.

use alloc::vec::Vec;

use crate::linalg;
use crate::particle::{DiffusionSpec, DomainBox, GaussianParticle, SqrtFactor, StateVector, RANK_TOLERANCE};
use crate::{AppdError, Result};

/// Convection velocity, frozen for the duration of a macro step.
pub trait VelocityField<const D: usize> {
    fn velocity(&self, x: &StateVector<D>) -> StateVector<D>;
}

impl<F, const D: usize> VelocityField<D> for F
where
    F: Fn(&StateVector<D>) -> StateVector<D>,
{
    fn velocity(&self, x: &StateVector<D>) -> StateVector<D> {
        self(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IntegratorMethod {
    /// Classic fixed-step fourth-order Runge–Kutta.
    Rk4,
    /// Dormand–Prince 5(4) with per-component mixed error control.
    DormandPrince { atol: f64, rtol: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    /// Fixed RK4 substeps per macro step; initial step count for the adaptive pair.
    pub substeps: usize,
    pub method: IntegratorMethod,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            substeps: 10,
            method: IntegratorMethod::Rk4,
        }
    }
}

impl IntegratorConfig {
    pub fn rk4(substeps: usize) -> Self {
        Self {
            substeps,
            method: IntegratorMethod::Rk4,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.substeps >= 1
            && match self.method {
                IntegratorMethod::Rk4 => true,
                IntegratorMethod::DormandPrince { atol, rtol } => atol > 0.0 && rtol > 0.0,
            }
    }
}

const DIRECT_INVERSE_CONDITION: f64 = 1e8;

/// `K·(Mᵀ)⁻¹`, as a pseudo-inverse for ill-conditioned `M`: directions whose
/// singular value is at most `RANK_TOLERANCE·σ_max` are dropped.
pub fn diffusion_term<const D: usize>(m: &SqrtFactor<D>, k: &DiffusionSpec<D>) -> SqrtFactor<D> {
    if k.matrix.iter().all(|&x| x == 0.0) {
        return SqrtFactor::<D>::zeros();
    }
    // Well-conditioned factors take the direct inverse; the rank cutoff can
    // only matter when the Frobenius condition number is enormous.
    if let Some(inv) = m.try_inverse() {
        if m.norm() * inv.norm() <= DIRECT_INVERSE_CONDITION {
            return k.matrix * inv.transpose();
        }
    }
    // Mᵀ = V S Uᵀ, so its pseudo-inverse is U S⁺ Vᵀ.
    let svd = linalg::svd(m);
    let cutoff = RANK_TOLERANCE * svd.max_singular_value();
    let mut scaled_u = svd.u;
    for i in 0..D {
        let s = svd.singular_values[i];
        let inv = if s > cutoff && s > 0.0 { 1.0 / s } else { 0.0 };
        scaled_u.column_mut(i).scale_mut(inv);
    }
    k.matrix * (scaled_u * svd.v.transpose())
}

/// Offset to use for an off-center evaluation point: if `center + offset`
/// leaves the domain, the antipodal point `center − offset` is used instead.
pub fn reflect_offset<const D: usize>(
    center: &StateVector<D>,
    offset: &StateVector<D>,
    domain: &DomainBox<D>,
) -> StateVector<D> {
    if domain.contains(&(center + offset)) {
        *offset
    } else {
        -offset
    }
}

fn checked_velocity<V: VelocityField<D>, const D: usize>(v: &V, x: &StateVector<D>) -> Result<StateVector<D>> {
    let out = v.velocity(x);
    if out.iter().all(|c| c.is_finite()) {
        Ok(out)
    } else {
        Err(AppdError::NonFiniteVelocity {
            point: x.iter().copied().collect::<Vec<_>>(),
        })
    }
}

/// Right-hand side of the level-set ODE: `(dx₀/dt, dM/dt)`.
pub fn level_set_derivative<V: VelocityField<D>, const D: usize>(
    x0: &StateVector<D>,
    m: &SqrtFactor<D>,
    v: &V,
    k: &DiffusionSpec<D>,
    domain: &DomainBox<D>,
) -> Result<(StateVector<D>, SqrtFactor<D>)> {
    let mut dx0 = StateVector::<D>::zeros();
    let mut dm = diffusion_term(m, k);
    for i in 0..D {
        let column: StateVector<D> = m.column(i).into_owned();
        let plus = x0 + reflect_offset(x0, &column, domain);
        let minus = x0 + reflect_offset(x0, &(-column), domain);
        let v_plus = checked_velocity(v, &plus)?;
        let v_minus = checked_velocity(v, &minus)?;
        let mut col = dm.column_mut(i);
        col += (v_plus - v_minus) * 0.5;
        dx0 += v_plus + v_minus;
    }
    dx0 /= 2.0 * D as f64;
    Ok((dx0, dm))
}

#[derive(Debug, Clone, Copy)]
struct LevelSet<const D: usize> {
    center: StateVector<D>,
    factor: SqrtFactor<D>,
}

impl<const D: usize> LevelSet<D> {
    /// `self + h·Σ cᵢ·kᵢ`
    fn offset(&self, h: f64, terms: &[(f64, &LevelSet<D>)]) -> LevelSet<D> {
        let mut out = *self;
        for (c, k) in terms {
            if *c != 0.0 {
                out.center.axpy(h * c, &k.center, 1.0);
                out.factor.zip_apply(&k.factor, |a, b| *a += h * c * b);
            }
        }
        out
    }
}

struct Rhs<'a, V, const D: usize> {
    v: &'a V,
    k: &'a DiffusionSpec<D>,
    domain: &'a DomainBox<D>,
}

impl<V: VelocityField<D>, const D: usize> Rhs<'_, V, D> {
    fn eval(&self, y: &LevelSet<D>) -> Result<LevelSet<D>> {
        let (center, factor) = level_set_derivative(&y.center, &y.factor, self.v, self.k, self.domain)?;
        Ok(LevelSet { center, factor })
    }
}

fn rk4_step<V: VelocityField<D>, const D: usize>(rhs: &Rhs<V, D>, y: &LevelSet<D>, h: f64) -> Result<LevelSet<D>> {
    let k1 = rhs.eval(y)?;
    let k2 = rhs.eval(&y.offset(h, &[(0.5, &k1)]))?;
    let k3 = rhs.eval(&y.offset(h, &[(0.5, &k2)]))?;
    let k4 = rhs.eval(&y.offset(h, &[(1.0, &k3)]))?;
    Ok(y.offset(h, &[(1.0 / 6.0, &k1), (1.0 / 3.0, &k2), (1.0 / 3.0, &k3), (1.0 / 6.0, &k4)]))
}

// Dormand–Prince 5(4) tableau.
const DP_A21: f64 = 1.0 / 5.0;
const DP_A31: f64 = 3.0 / 40.0;
const DP_A32: f64 = 9.0 / 40.0;
const DP_A41: f64 = 44.0 / 45.0;
const DP_A42: f64 = -56.0 / 15.0;
const DP_A43: f64 = 32.0 / 9.0;
const DP_A51: f64 = 19372.0 / 6561.0;
const DP_A52: f64 = -25360.0 / 2187.0;
const DP_A53: f64 = 64448.0 / 6561.0;
const DP_A54: f64 = -212.0 / 729.0;
const DP_A61: f64 = 9017.0 / 3168.0;
const DP_A62: f64 = -355.0 / 33.0;
const DP_A63: f64 = 46732.0 / 5247.0;
const DP_A64: f64 = 49.0 / 176.0;
const DP_A65: f64 = -5103.0 / 18656.0;
const DP_B1: f64 = 35.0 / 384.0;
const DP_B3: f64 = 500.0 / 1113.0;
const DP_B4: f64 = 125.0 / 192.0;
const DP_B5: f64 = -2187.0 / 6784.0;
const DP_B6: f64 = 11.0 / 84.0;
// Fifth-order weights minus embedded fourth-order weights.
const DP_E1: f64 = 71.0 / 57600.0;
const DP_E3: f64 = -71.0 / 16695.0;
const DP_E4: f64 = 71.0 / 1920.0;
const DP_E5: f64 = -17253.0 / 339200.0;
const DP_E6: f64 = 22.0 / 525.0;
const DP_E7: f64 = -1.0 / 40.0;

fn dopri_integrate<V: VelocityField<D>, const D: usize>(
    rhs: &Rhs<V, D>,
    mut y: LevelSet<D>,
    t0: f64,
    t1: f64,
    initial_steps: usize,
    atol: f64,
    rtol: f64,
) -> Result<LevelSet<D>> {
    let span = t1 - t0;
    let min_step = 1e-12 * span.abs().max(1e-300);
    let mut t = t0;
    let mut h = span / initial_steps as f64;
    let mut k1 = rhs.eval(&y)?;

    while t < t1 {
        if t + h > t1 {
            h = t1 - t;
        }
        let k2 = rhs.eval(&y.offset(h, &[(DP_A21, &k1)]))?;
        let k3 = rhs.eval(&y.offset(h, &[(DP_A31, &k1), (DP_A32, &k2)]))?;
        let k4 = rhs.eval(&y.offset(h, &[(DP_A41, &k1), (DP_A42, &k2), (DP_A43, &k3)]))?;
        let k5 = rhs.eval(&y.offset(h, &[(DP_A51, &k1), (DP_A52, &k2), (DP_A53, &k3), (DP_A54, &k4)]))?;
        let k6 = rhs.eval(&y.offset(
            h,
            &[(DP_A61, &k1), (DP_A62, &k2), (DP_A63, &k3), (DP_A64, &k4), (DP_A65, &k5)],
        ))?;
        let y_new = y.offset(h, &[(DP_B1, &k1), (DP_B3, &k3), (DP_B4, &k4), (DP_B5, &k5), (DP_B6, &k6)]);
        let k7 = rhs.eval(&y_new)?;
        let err = LevelSet {
            center: StateVector::<D>::zeros(),
            factor: SqrtFactor::<D>::zeros(),
        }
        .offset(h, &[(DP_E1, &k1), (DP_E3, &k3), (DP_E4, &k4), (DP_E5, &k5), (DP_E6, &k6), (DP_E7, &k7)]);

        let mut sum = 0.0;
        let mut count = 0usize;
        let mut accumulate = |e: f64, a: f64, b: f64| {
            let scale = atol + rtol * a.abs().max(b.abs());
            sum += (e / scale) * (e / scale);
            count += 1;
        };
        for i in 0..D {
            accumulate(err.center[i], y.center[i], y_new.center[i]);
        }
        for i in 0..D * D {
            accumulate(err.factor[i], y.factor[i], y_new.factor[i]);
        }
        let norm = libm::sqrt(sum / count as f64);

        if norm <= 1.0 {
            t += h;
            y = y_new;
            k1 = k7;
        }
        let factor = if norm == 0.0 {
            5.0
        } else if norm.is_finite() {
            (0.9 * libm::pow(norm, -0.2)).clamp(0.2, 5.0)
        } else {
            0.2
        };
        h *= factor;
        if h < min_step && t < t1 {
            return Err(AppdError::IntegrationFailure {
                time: t,
                particle: None,
                min_step,
            });
        }
    }
    Ok(y)
}

/// Advance center and factor from `t0` to `t1` under the frozen field `v`.
/// The weight is carried over untouched.
pub fn propagate<V: VelocityField<D>, const D: usize>(
    p: &GaussianParticle<D>,
    v: &V,
    k: &DiffusionSpec<D>,
    domain: &DomainBox<D>,
    t0: f64,
    t1: f64,
    cfg: &IntegratorConfig,
) -> Result<GaussianParticle<D>> {
    debug_assert!(t1 > t0, "propagate needs t1 > t0");
    let rhs = Rhs { v, k, domain };
    let mut y = LevelSet {
        center: p.center,
        factor: p.sqrt_factor,
    };
    let substeps = cfg.substeps.max(1);
    match cfg.method {
        IntegratorMethod::Rk4 => {
            let h = (t1 - t0) / substeps as f64;
            for _ in 0..substeps {
                y = rk4_step(&rhs, &y, h)?;
            }
        }
        IntegratorMethod::DormandPrince { atol, rtol } => {
            y = dopri_integrate(&rhs, y, t0, t1, substeps, atol, rtol)?;
        }
    }
    Ok(GaussianParticle {
        weight: p.weight,
        center: y.center,
        sqrt_factor: y.factor,
    })
}
