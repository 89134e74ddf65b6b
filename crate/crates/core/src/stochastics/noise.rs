use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::grid::TimeGrid;
use super::rng::{KeyedRng, StreamTag};
use crate::error::{invalid, Result};
use crate::problems::{JumpSpec, Vector};

/// Shape of a noise bundle: batch `b`, steps `n`, shots `m`, dimension `d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub batch: usize,
    pub steps: usize,
    pub shots: usize,
    pub dim: usize,
}

impl Layout {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.steps == 0 || self.shots == 0 || self.dim == 0 {
            return Err(invalid(format!("layout entries must be >= 1, got {self:?}")));
        }
        Ok(())
    }

    #[inline]
    pub fn index(&self, b: usize, n: usize, i: usize) -> usize {
        (b * self.steps + n) * self.shots + i
    }

    pub fn len(&self) -> usize {
        self.batch * self.steps * self.shots
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Jumps falling in one step: their count is `sizes.len()`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JumpDraw {
    pub sizes: Vec<f64>,
}

impl JumpDraw {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    pub fn total(&self) -> f64 {
        self.sizes.iter().sum()
    }
}

/// All randomness used by one batch, indexed `[b][n][i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseBundle {
    pub layout: Layout,
    pub seed: u64,
    pub dw: Vec<Vector>,
    pub fine_dw: Option<Vec<Vector>>,
    pub jumps: Option<Vec<JumpDraw>>,
}

impl NoiseBundle {
    pub fn dw(&self, b: usize, n: usize, i: usize) -> &Vector {
        &self.dw[self.layout.index(b, n, i)]
    }

    pub fn fine(&self, b: usize, n: usize, i: usize) -> Option<&Vector> {
        self.fine_dw.as_ref().map(|f| &f[self.layout.index(b, n, i)])
    }

    pub fn jump(&self, b: usize, n: usize, i: usize) -> Option<&JumpDraw> {
        self.jumps.as_ref().map(|j| &j[self.layout.index(b, n, i)])
    }
}

fn grid_for(grids: &[TimeGrid], b: usize) -> &TimeGrid {
    if grids.len() == 1 {
        &grids[0]
    } else {
        &grids[b]
    }
}

/// Brownian increment for entry `(b, n, i)` with variance `dt`.
pub fn brownian_increment(rng: &KeyedRng, b: usize, n: usize, i: usize, d: usize, dt: f64) -> Vector {
    rng.normal_vector(StreamTag::Brownian, [b as u64, n as u64, i as u64], d, dt.sqrt())
}

/// Jump record for entry `(b, n, i)` over a step of length `dt`.
pub fn jump_draw(rng: &KeyedRng, spec: &JumpSpec, b: usize, n: usize, i: usize, dt: f64) -> Result<JumpDraw> {
    let mean = spec.lambda * dt;
    if mean <= 0.0 {
        return Ok(JumpDraw::default());
    }
    let mut stream = rng.stream(StreamTag::Jump, [b as u64, n as u64, i as u64]);
    let poisson = Poisson::new(mean).map_err(|e| invalid(format!("poisson intensity: {e}")))?;
    let count = poisson.sample(&mut stream) as usize;
    let sizes_dist =
        Normal::new(spec.mu_phi, spec.sigma_phi).map_err(|e| invalid(format!("jump sizes: {e}")))?;
    Ok(JumpDraw {
        sizes: (0..count).map(|_| sizes_dist.sample(&mut stream)).collect(),
    })
}

/// Draws the Brownian increments (variance `dt_n` of the batch element's grid),
/// optional fine increments of variance `fine_tau`, and optional jumps.
///
/// `grids` holds either one shared grid or one grid per batch element.
pub fn sample_noise(
    layout: Layout,
    grids: &[TimeGrid],
    fine_tau: Option<f64>,
    jump_spec: Option<&JumpSpec>,
    seed: u64,
) -> Result<NoiseBundle> {
    layout.validate()?;
    if grids.len() != 1 && grids.len() != layout.batch {
        return Err(invalid("need one shared grid or one grid per batch element"));
    }
    if grids.iter().any(|g| g.n_steps() != layout.steps) {
        return Err(invalid("grid step count does not match the layout"));
    }
    if let Some(tau) = fine_tau {
        if !(tau > 0.0) {
            return Err(invalid("fine step tau must be positive"));
        }
    }
    let rng = KeyedRng::new(seed);
    let d = layout.dim;
    let mut dw = Vec::with_capacity(layout.len());
    let mut fine = fine_tau.map(|_| Vec::with_capacity(layout.len()));
    let mut jumps = jump_spec.map(|_| Vec::with_capacity(layout.len()));
    for b in 0..layout.batch {
        let grid = grid_for(grids, b);
        for n in 0..layout.steps {
            let dt = grid.dt[n];
            for i in 0..layout.shots {
                dw.push(brownian_increment(&rng, b, n, i, d, dt));
                if let (Some(f), Some(tau)) = (fine.as_mut(), fine_tau) {
                    f.push(rng.normal_vector(StreamTag::Fine, [b as u64, n as u64, i as u64], d, tau.sqrt()));
                }
                if let (Some(j), Some(spec)) = (jumps.as_mut(), jump_spec) {
                    j.push(jump_draw(&rng, spec, b, n, i, dt)?);
                }
            }
        }
    }
    Ok(NoiseBundle {
        layout,
        seed,
        dw,
        fine_dw: fine,
        jumps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastics::grid::uniform_grid;

    #[test]
    fn brownian_moments() {
        let rng = KeyedRng::new(2024);
        let n = 1_000_000usize;
        let (mut s, mut s2) = (0.0, 0.0);
        for k in 0..n {
            let v = brownian_increment(&rng, k, 0, 0, 1, 0.01)[0];
            s += v;
            s2 += v * v;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        let stderr = (0.01 / n as f64).sqrt();
        assert!(mean.abs() < 4.0 * stderr, "mean {mean}");
        assert!((var / 0.01 - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn jump_count_mean() {
        let spec = JumpSpec { lambda: 0.01, mu_phi: 0.01, sigma_phi: 0.01, tau_diff: 0.1, epsilon: 0.1 };
        let rng = KeyedRng::new(99);
        let n = 10_000_000usize;
        let total: usize = (0..n).map(|k| jump_draw(&rng, &spec, k, 0, 0, 0.01).unwrap().count()).sum();
        let mean = total as f64 / n as f64;
        assert!((mean / 1e-4 - 1.0).abs() < 0.05, "jump mean {mean}");
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let grid = uniform_grid(3, 1.0).unwrap();
        let layout = Layout { batch: 2, steps: 3, shots: 4, dim: 3 };
        let spec = JumpSpec { lambda: 5.0, mu_phi: 0.1, sigma_phi: 0.2, tau_diff: 0.1, epsilon: 0.1 };
        let a = sample_noise(layout, std::slice::from_ref(&grid), Some(1e-3), Some(&spec), 17).unwrap();
        let b = sample_noise(layout, std::slice::from_ref(&grid), Some(1e-3), Some(&spec), 17).unwrap();
        assert_eq!(a, b);
        let c = sample_noise(layout, &[grid], Some(1e-3), Some(&spec), 18).unwrap();
        assert_ne!(a.dw, c.dw);
        let rng = KeyedRng::new(17);
        assert_eq!(a.dw(1, 2, 3), &brownian_increment(&rng, 1, 2, 3, 3, 1.0 / 3.0));
    }

    #[test]
    fn layout_rejects_zero() {
        let grid = uniform_grid(1, 1.0).unwrap();
        let layout = Layout { batch: 0, steps: 1, shots: 1, dim: 1 };
        assert!(sample_noise(layout, &[grid], None, None, 0).is_err());
    }
}
