//! Neural solvers for terminal-value PDEs trained with discretized
//! forward–backward SDE self-consistency losses.
//!
//! * [`problems`]: coefficients and the benchmark catalog.
//! * [`stochastics`]: keyed randomness, grids, forward steps and rollouts.
//! * [`surrogate`]: the network `u_θ(t, x)` with exact derivatives.
//! * [`losses`]: every training objective and its θ-gradient.
//! * [`biaslab`]: Monte Carlo checks of the bias and variance theory.
//! * [`training`]: Adam, schedules, reference data, RL2 and the training loop.

pub mod biaslab;
pub mod error;
pub mod losses;
pub mod problems;
pub mod stochastics;
pub mod surrogate;
pub mod training;

pub use error::{Error, Result};
