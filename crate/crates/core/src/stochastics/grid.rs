use rand::Rng;
use serde::{Deserialize, Serialize};

use super::rng::{KeyedRng, StreamTag};
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridKind {
    Uniform,
    ShotgunRandomized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t: Vec<f64>,
    pub dt: Vec<f64>,
    pub kind: GridKind,
}

impl TimeGrid {
    pub fn n_steps(&self) -> usize {
        self.dt.len()
    }

    pub fn t_end(&self) -> f64 {
        self.t[self.t.len() - 1]
    }
}

/// `t_n = n T / N`.
pub fn uniform_grid(n_steps: usize, t_end: f64) -> Result<TimeGrid> {
    if n_steps == 0 {
        return Err(invalid("n_steps must be at least 1"));
    }
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(invalid("t_end must be positive"));
    }
    let dt = t_end / n_steps as f64;
    let mut t: Vec<f64> = (0..=n_steps).map(|n| t_end * n as f64 / n_steps as f64).collect();
    t[n_steps] = t_end;
    Ok(TimeGrid {
        t,
        dt: vec![dt; n_steps],
        kind: GridKind::Uniform,
    })
}

/// Grid with a random first step: `Δt = T/(N−1)`, `t_1 ~ U(0, Δt)`,
/// `t_n = t_1 + (n−1)Δt` for interior nodes and `t_N = T`.
///
/// The first node is floored at `1e-8 Δt` so no step has zero length.
pub fn shotgun_grid(n_steps: usize, t_end: f64, seed: u64) -> Result<TimeGrid> {
    if n_steps < 2 {
        return Err(invalid("shotgun grid needs n_steps >= 2"));
    }
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(invalid("t_end must be positive"));
    }
    let big = t_end / (n_steps - 1) as f64;
    let u: f64 = KeyedRng::new(seed).stream(StreamTag::Grid, [0, 0, 0]).gen();
    let t1 = (u * big).max(1e-8 * big);
    let mut t = Vec::with_capacity(n_steps + 1);
    t.push(0.0);
    for n in 1..n_steps {
        t.push(t1 + (n - 1) as f64 * big);
    }
    t.push(t_end);
    let dt = t.windows(2).map(|w| w[1] - w[0]).collect();
    Ok(TimeGrid {
        t,
        dt,
        kind: GridKind::ShotgunRandomized,
    })
}
