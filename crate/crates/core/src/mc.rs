//! Direct Monte Carlo: an ensemble of discrete oscillators advanced by
//! Euler–Maruyama under the same drift, noise and coupling as the particles.

use alloc::vec::Vec;

use nalgebra::SMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::coupling::{CouplingKind, CouplingState};
use crate::linalg::psd_sqrt_factor;
use crate::lskf::VelocityField;
use crate::particle::{DiffusionSpec, DomainBox, GaussianParticle, StateVector};
use crate::{AppdError, Result};

/// Independent generator for neuron `index`, reproducible from the run seed
/// alone.
pub fn neuron_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

#[derive(Debug, Clone)]
pub struct Ensemble<const D: usize> {
    pub states: Vec<StateVector<D>>,
    pub rngs: Vec<ChaCha8Rng>,
    pub seed: u64,
    pub time: f64,
    pub coupling: CouplingState,
}

impl<const D: usize> Ensemble<D> {
    pub fn new(states: Vec<StateVector<D>>, seed: u64, coupling: CouplingKind) -> Self {
        let rngs = (0..states.len()).map(|i| neuron_rng(seed, i)).collect();
        Self {
            states,
            rngs,
            seed,
            time: 0.0,
            coupling: CouplingState::new(coupling),
        }
    }

    /// Draw `n` neurons from a Gaussian mixture. Neuron `i` samples component
    /// `⌊i·m/n⌋` (so each of `m` equal-weight components gets an equal share)
    /// using its own stream; the domain box is enforced by reflection.
    pub fn from_mixture(
        mixture: &[GaussianParticle<D>],
        n: usize,
        seed: u64,
        coupling: CouplingKind,
        domain: &DomainBox<D>,
    ) -> Result<Self> {
        if mixture.is_empty() || n == 0 {
            return Err(AppdError::EmptyMixture);
        }
        let mut e = Self::new(Vec::with_capacity(n), seed, coupling);
        e.rngs = (0..n).map(|i| neuron_rng(seed, i)).collect();
        let m = mixture.len();
        for (i, rng) in e.rngs.iter_mut().enumerate() {
            let p = &mixture[i * m / n];
            let xi = StateVector::<D>::from_fn(|_, _| StandardNormal.sample(rng));
            e.states.push(domain.reflect(&(p.center + p.sqrt_factor * xi)));
        }
        Ok(e)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn mean(&self) -> StateVector<D> {
        let mut m = StateVector::<D>::zeros();
        for x in &self.states {
            m += x;
        }
        m / self.states.len() as f64
    }
}

/// `L` with `L·Lᵀ = 2K·dt`, the noise amplitude of one Euler–Maruyama step.
pub fn noise_factor<const D: usize>(k: &DiffusionSpec<D>, dt: f64) -> SMatrix<f64, D, D> {
    psd_sqrt_factor(&(k.matrix * (2.0 * dt)))
}

/// One Euler–Maruyama step of a single oscillator:
/// `x ← x + v(x)·dt + L·ξ`, then reflection into the domain.
#[inline]
pub fn em_update<V: VelocityField<D>, const D: usize>(
    x: &StateVector<D>,
    rng: &mut ChaCha8Rng,
    v: &V,
    noise: &SMatrix<f64, D, D>,
    dt: f64,
    domain: &DomainBox<D>,
) -> StateVector<D> {
    let xi = StateVector::<D>::from_fn(|_, _| StandardNormal.sample(rng));
    domain.reflect(&(x + v.velocity(x) * dt + noise * xi))
}

/// Advance every oscillator by one Euler–Maruyama step and the clock by `dt`.
pub fn em_step<V: VelocityField<D>, const D: usize>(
    e: &mut Ensemble<D>,
    v: &V,
    k: &DiffusionSpec<D>,
    dt: f64,
    domain: &DomainBox<D>,
) {
    let noise = noise_factor(k, dt);
    for (x, rng) in e.states.iter_mut().zip(e.rngs.iter_mut()) {
        *x = em_update(x, rng, v, &noise, dt, domain);
    }
    e.time += dt;
}

/// Number of oscillators whose component 0 moved from below `threshold`
/// to at or above it.
pub fn count_crossings<const D: usize>(before: &[StateVector<D>], after: &[StateVector<D>], threshold: f64) -> usize {
    before
        .iter()
        .zip(after)
        .filter(|(b, a)| b[0] < threshold && a[0] >= threshold)
        .count()
}

/// Upward crossings per oscillator per unit time.
pub fn mc_threshold_flux<const D: usize>(
    before: &[StateVector<D>],
    after: &[StateVector<D>],
    threshold: f64,
    dt: f64,
) -> f64 {
    debug_assert_eq!(before.len(), after.len());
    count_crossings(before, after, threshold) as f64 / (before.len() as f64 * dt)
}
