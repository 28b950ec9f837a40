//! Gaussian particles, populations, and the density/moment queries on them.

use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{SMatrix, SVector};

use crate::coupling::CouplingState;
use crate::linalg;
use crate::{AppdError, Result};

/// A point in the model's state space. For Hodgkin–Huxley component 0 is
/// `0.01·V` so that all components share one magnitude scale.
pub type StateVector<const D: usize> = SVector<f64, D>;

/// Any square root `M` of a covariance, `Σ = M·Mᵀ`. Columns are level-set
/// points relative to the particle center.
pub type SqrtFactor<const D: usize> = SMatrix<f64, D, D>;

/// Singular values of a factor below this fraction of the largest one are
/// treated as dropped directions.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Floor applied to marginal variances before dividing by them.
pub const VARIANCE_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParticle<const D: usize> {
    pub weight: f64,
    pub center: StateVector<D>,
    pub sqrt_factor: SqrtFactor<D>,
}

impl<const D: usize> GaussianParticle<D> {
    pub fn new(weight: f64, center: StateVector<D>, sqrt_factor: SqrtFactor<D>) -> Self {
        Self {
            weight,
            center,
            sqrt_factor,
        }
    }

    /// Particle with covariance `sigma²·I`.
    pub fn isotropic(weight: f64, center: StateVector<D>, sigma: f64) -> Self {
        Self::new(weight, center, SqrtFactor::<D>::identity() * sigma)
    }

    pub fn covariance(&self) -> SMatrix<f64, D, D> {
        self.sqrt_factor * self.sqrt_factor.transpose()
    }

    /// `Σ[dim][dim]`, the squared norm of row `dim` of the factor.
    pub fn marginal_variance(&self, dim: usize) -> f64 {
        self.sqrt_factor.row(dim).norm_squared()
    }
}

/// Constant diffusion matrix `K` of `∂u/∂t = ∇·K∇u − ∇·(v u)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionSpec<const D: usize> {
    pub matrix: SMatrix<f64, D, D>,
}

impl<const D: usize> DiffusionSpec<D> {
    pub fn isotropic(k: f64) -> Self {
        Self {
            matrix: SMatrix::<f64, D, D>::identity() * k,
        }
    }

    pub fn zero() -> Self {
        Self::isotropic(0.0)
    }
}

/// Axis-aligned box with optional bounds per dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainBox<const D: usize> {
    pub bounds: [Option<(f64, f64)>; D],
}

impl<const D: usize> DomainBox<D> {
    pub fn unbounded() -> Self {
        Self { bounds: [None; D] }
    }

    pub fn contains(&self, x: &StateVector<D>) -> bool {
        self.bounds.iter().zip(x.iter()).all(|(b, &xi)| match b {
            Some((lo, hi)) => xi >= *lo && xi <= *hi,
            None => true,
        })
    }

    /// Nearest point of the box.
    pub fn clamp(&self, x: &StateVector<D>) -> StateVector<D> {
        let mut out = *x;
        for (i, b) in self.bounds.iter().enumerate() {
            if let Some((lo, hi)) = b {
                out[i] = out[i].clamp(*lo, *hi);
            }
        }
        out
    }

    /// Mirror-reflect bounded coordinates back into the box
    /// (`x ← 2·lo − x` below, `x ← 2·hi − x` above).
    pub fn reflect(&self, x: &StateVector<D>) -> StateVector<D> {
        let mut out = *x;
        for (i, b) in self.bounds.iter().enumerate() {
            if let Some((lo, hi)) = *b {
                let mut xi = out[i];
                // A handful of bounces covers any step that is not absurdly large.
                for _ in 0..8 {
                    if xi < lo {
                        xi = 2.0 * lo - xi;
                    } else if xi > hi {
                        xi = 2.0 * hi - xi;
                    } else {
                        break;
                    }
                }
                out[i] = xi.clamp(lo, hi);
            }
        }
        out
    }
}

/// A density represented as a weighted sum of Gaussian particles, together
/// with the simulation clock and the coupling frozen for the current step.
#[derive(Debug, Clone, PartialEq)]
pub struct Population<const D: usize> {
    pub particles: Vec<GaussianParticle<D>>,
    pub time: f64,
    pub coupling: CouplingState,
}

impl<const D: usize> Population<D> {
    pub fn new(particles: Vec<GaussianParticle<D>>, coupling: CouplingState) -> Self {
        Self {
            particles,
            time: 0.0,
            coupling,
        }
    }

    pub fn total_weight(&self) -> f64 {
        total_weight(&self.particles)
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }
}

pub fn total_weight<const D: usize>(particles: &[GaussianParticle<D>]) -> f64 {
    particles.iter().map(|p| p.weight).sum()
}

/// `w·N(x; center, M·Mᵀ)`, evaluated through an SVD of the factor so that
/// neither `Σ` nor its inverse is formed.
pub fn kernel_density<const D: usize>(p: &GaussianParticle<D>, x: &StateVector<D>) -> Result<f64> {
    let svd = linalg::svd(&p.sqrt_factor);
    let s_max = svd.max_singular_value();
    let s_min = svd.min_singular_value();
    if s_max == 0.0 || s_min <= RANK_TOLERANCE * s_max {
        return Err(AppdError::DegenerateParticle { singular_value: s_min });
    }
    if p.weight == 0.0 {
        return Ok(0.0);
    }
    // M = U S Vᵀ, so ‖M⁻¹r‖ = ‖S⁻¹ Uᵀ r‖ and det(Σ)^½ = Π s.
    let projected = svd.u.transpose() * (x - p.center);
    let mut mahalanobis = 0.0;
    let mut log_sqrt_det = 0.0;
    for i in 0..D {
        let z = projected[i] / svd.singular_values[i];
        mahalanobis += z * z;
        log_sqrt_det += libm::log(svd.singular_values[i]);
    }
    let log_norm = -0.5 * D as f64 * libm::log(2.0 * PI) - log_sqrt_det;
    Ok(p.weight * libm::exp(log_norm - 0.5 * mahalanobis))
}

/// Mixture density `Σᵢ wᵢ Kᵢ(x − xᵢ)`.
pub fn population_density<const D: usize>(
    particles: &[GaussianParticle<D>],
    x: &StateVector<D>,
) -> Result<f64> {
    particles.iter().map(|p| kernel_density(p, x)).sum()
}

/// One-dimensional Gaussian density.
#[inline]
pub fn normal_pdf(value: f64, mean: f64, variance: f64) -> f64 {
    let variance = variance.max(VARIANCE_FLOOR);
    let z = value - mean;
    libm::exp(-0.5 * z * z / variance) / libm::sqrt(2.0 * PI * variance)
}

/// Weighted density of the particle's marginal along `dim` at `value`.
pub fn marginal_density_1d<const D: usize>(p: &GaussianParticle<D>, dim: usize, value: f64) -> f64 {
    assert!(dim < D, "dimension {dim} out of range for a {D}-dimensional particle");
    if p.weight == 0.0 {
        return 0.0;
    }
    p.weight * normal_pdf(value, p.center[dim], p.marginal_variance(dim))
}

/// First two moments of a Gaussian mixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments<const D: usize> {
    pub mean: StateVector<D>,
    pub covariance: SMatrix<f64, D, D>,
    pub total_weight: f64,
}

/// Exact mean and covariance of the normalized mixture:
/// `μ = Σ wₙμₙ / Σ wₘ`, `Σ = Σ wₙ(Σₙ + (μₙ−μ)(μₙ−μ)ᵀ) / Σ wₘ`.
pub fn mixture_moments<const D: usize>(particles: &[GaussianParticle<D>]) -> Result<Moments<D>> {
    let total = total_weight(particles);
    if !(total > 0.0) {
        return Err(AppdError::EmptyMixture);
    }
    let mut mean = StateVector::<D>::zeros();
    for p in particles {
        mean.axpy(p.weight, &p.center, 1.0);
    }
    mean /= total;

    let mut covariance = SMatrix::<f64, D, D>::zeros();
    for p in particles {
        let offset = p.center - mean;
        covariance += (p.covariance() + offset * offset.transpose()) * p.weight;
    }
    covariance /= total;

    Ok(Moments {
        mean,
        covariance,
        total_weight: total,
    })
}
