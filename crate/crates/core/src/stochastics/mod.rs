//! Randomness, time grids, and forward stepping.

pub mod grid;
pub mod noise;
pub mod rng;
pub mod rollout;
pub mod step;

pub use grid::{shotgun_grid, uniform_grid, GridKind, TimeGrid};
pub use noise::{sample_noise, JumpDraw, Layout, NoiseBundle};
pub use rng::{KeyedRng, StreamTag};
pub use rollout::{rollout, rollout_with_noise, scheme_grids, CouplingData, RolloutBundle, Scheme};
pub use step::{em_forward_step, heun_drift, heun_forward_step, jump_forward_step, Coupling};

#[cfg(test)]
mod tests;
