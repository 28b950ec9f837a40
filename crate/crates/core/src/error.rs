use alloc::vec::Vec;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AppdError {
    #[error("degenerate particle: singular value {singular_value:e} is below the rank tolerance")]
    DegenerateParticle { singular_value: f64 },

    #[error("mixture has zero total weight")]
    EmptyMixture,

    #[error("non-finite velocity at {point:?}")]
    NonFiniteVelocity { point: Vec<f64> },

    #[error("cannot split along a zero-length direction")]
    ZeroDirection,

    #[error("integration failed at t = {time} (particle {particle:?}): step size fell below {min_step:e}")]
    IntegrationFailure {
        time: f64,
        particle: Option<usize>,
        min_step: f64,
    },

    #[error("no oscillation detected before t = {horizon}")]
    NoOscillationDetected { horizon: f64 },

    #[error("every particle was pruned")]
    AllParticlesPruned,
}
