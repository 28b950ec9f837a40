//! Asymmetric particle population density (APPD) method.
//!
//! A population of coupled noisy oscillators is represented by its density
//! `u(x)`, approximated as a weighted sum of anisotropic Gaussian particles.
//! Each particle tracks a square-root factor `M` of its covariance and is
//! advanced by the level-set ODE; particles whose footprint is no longer
//! locally linear are split into three, and crowded particles are merged
//! cell-by-cell on a hash grid.
//!
//! The crate is `no_std` (it needs `alloc`). IO, configuration and the
//! parallel driver live in the `appd` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod adaptivity;
pub mod coupling;
pub mod error;
pub mod linalg;
pub mod lskf;
pub mod mc;
pub mod models;
pub mod particle;

pub use adaptivity::{CombineGrid, SplitConstants, SplitPolicy};
pub use coupling::{CouplingKind, CouplingState};
pub use error::AppdError;
pub use lskf::{IntegratorConfig, IntegratorMethod, VelocityField};
pub use models::{HodgkinHuxley, Model, VanDerPol};
pub use particle::{DiffusionSpec, DomainBox, GaussianParticle, Population, SqrtFactor, StateVector};

pub type Result<T> = core::result::Result<T, AppdError>;
