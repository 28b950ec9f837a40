//! Coupling velocity frozen over one macro step.
//!
//! The coupling term has the form `v_c(x) = w_c(x)·L[u]`. Two functionals
//! are provided: the mean-field average of one state component, and the
//! upward probability flux `Q` across a threshold hyperplane of component 0
//! (which drives a conductance `G = 20·Q·c`).

use crate::lskf::VelocityField;
use crate::models::{CoupledField, Model};
use crate::particle::{marginal_density_1d, total_weight, GaussianParticle};
use crate::{AppdError, Result};

/// Synaptic conductance per unit flux: `G = 20·Q·c`.
pub const CONDUCTANCE_PER_FLUX: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CouplingKind {
    None,
    /// `α·∫ y_dim u(y) dy`
    MeanField { alpha: f64, observable_dim: usize },
    /// Flux across `x₀ = threshold` (scaled voltage units) with strength `c`.
    Threshold { threshold: f64, c: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingState {
    pub kind: CouplingKind,
    /// `α·L[u]` for mean-field coupling, `G_coupling` for threshold coupling.
    pub frozen_value: f64,
    /// Flux used for the current step (threshold coupling only).
    pub q: f64,
    /// Instantaneous flux measured at the start of the previous step.
    pub q_prev: f64,
}

impl CouplingState {
    pub fn new(kind: CouplingKind) -> Self {
        Self {
            kind,
            frozen_value: 0.0,
            q: 0.0,
            q_prev: 0.0,
        }
    }

    /// Fold in a fresh measurement of the coupling functional: the weighted
    /// mean for mean-field coupling, the instantaneous flux for threshold
    /// coupling. Threshold coupling uses the average of this flux and the
    /// previous one.
    pub fn advance(&self, measurement: f64) -> Self {
        match self.kind {
            CouplingKind::None => *self,
            CouplingKind::MeanField { alpha, .. } => Self {
                frozen_value: alpha * measurement,
                ..*self
            },
            CouplingKind::Threshold { c, .. } => {
                let flux = measurement.max(0.0);
                let q = 0.5 * (flux + self.q_prev);
                Self {
                    kind: self.kind,
                    frozen_value: CONDUCTANCE_PER_FLUX * q * c,
                    q,
                    q_prev: flux,
                }
            }
        }
    }
}

/// `∫ y_dim u(y) dy / ∫ u`, exact for a Gaussian mixture.
pub fn mean_field_functional<const D: usize>(particles: &[GaussianParticle<D>], dim: usize) -> Result<f64> {
    let total = total_weight(particles);
    if !(total > 0.0) {
        return Err(AppdError::EmptyMixture);
    }
    let weighted: f64 = particles.iter().map(|p| p.weight * p.center[dim]).sum();
    Ok(weighted / total)
}

/// Upward flux across `x₀ = threshold`: each particle contributes its
/// marginal density on the hyperplane times the positive part of the
/// normal velocity, evaluated at the particle center moved onto the plane.
pub fn threshold_flux<V: VelocityField<D>, const D: usize>(
    particles: &[GaussianParticle<D>],
    v: &V,
    threshold: f64,
) -> f64 {
    particles
        .iter()
        .map(|p| {
            let density = marginal_density_1d(p, 0, threshold);
            if density == 0.0 {
                return 0.0;
            }
            let mut on_plane = p.center;
            on_plane[0] = threshold;
            density * v.velocity(&on_plane)[0].max(0.0)
        })
        .sum()
}

/// New frozen coupling for the step starting now, measured on `particles`
/// with the velocity field of the step that just ended.
pub fn refresh_coupling<M: Model<D> + ?Sized, const D: usize>(
    state: &CouplingState,
    particles: &[GaussianParticle<D>],
    model: &M,
) -> Result<CouplingState> {
    match state.kind {
        CouplingKind::None => Ok(*state),
        CouplingKind::MeanField { observable_dim, .. } => {
            Ok(state.advance(mean_field_functional(particles, observable_dim)?))
        }
        CouplingKind::Threshold { threshold, .. } => {
            let field = CoupledField {
                model,
                coupling_value: state.frozen_value,
            };
            Ok(state.advance(threshold_flux(particles, &field, threshold)))
        }
    }
}
