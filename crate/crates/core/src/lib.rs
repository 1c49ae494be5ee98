//! Reverse diffusion Monte Carlo.
//!
//! Draws samples from an unnormalized density `exp(-f*)` by simulating the
//! time-discretized reverse of an Ornstein–Uhlenbeck diffusion. The score of
//! each intermediate marginal is estimated by Monte Carlo over the posterior of
//! the diffusion's starting point, so only `f*` and `∇f*` are needed.
//! Classical Langevin samplers are included as baselines, together with the
//! metrics and the config-driven harness used to compare them.

pub mod ensemble;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod oracles;
pub mod ou;
pub mod rng;
pub mod samplers;
pub mod score;
pub mod targets;

pub use ensemble::ParticleEnsemble;
pub use error::{Error, Result};
pub use rng::{NoiseSource, Seeded, Silent, StreamSource};
