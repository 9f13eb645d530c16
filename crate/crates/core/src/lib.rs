//! Energy-constrained dynamic targeting for Earth-observing satellites.
//!
//! A satellite flies along a classified ground strip. Each step it may fire a
//! pointable primary sensor at the best target inside its radar disc, paying
//! battery charge, or stay off and recharge. This crate provides the
//! simulator, heuristic baselines, an exact dynamic-programming oracle,
//! tabular Q-learning trained by backward sweeps, behavioral cloning of the
//! oracle with a small MLP, and an experiment harness.

pub mod baselines;
pub mod bclone;
pub mod bench;
pub mod dporacle;
pub mod error;
pub mod qlearn;
pub mod satsim;
pub mod worldgen;

pub use error::{Error, Result};
pub use satsim::{Action, Aim, EpisodeLog, Observation, Policy, SatState, Satellite};
pub use worldgen::{EnvStrip, GenParams, RewardClass, RewardModel, Scenario};

/// Deterministic, platform-independent PRNG used everywhere a seed appears.
pub type SeedRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeedRng {
    use rand::SeedableRng;
    SeedRng::seed_from_u64(seed)
}
