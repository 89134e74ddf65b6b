//! Stochastic Heun self-consistency loss.

use super::require_scheme;
use crate::error::{invalid, Result};
use crate::problems::{PdeProblem, Vector};
use crate::stochastics::{RolloutBundle, Scheme};
use crate::surrogate::{Objective, PointAdjoint, PointEval, PointQuery};

struct Side {
    t: f64,
    x: Vector,
    q: usize,
    sigma_dw: Vector,
    kappa: Vector,
}

struct Step {
    dt: f64,
    start: Side,
    bar: Side,
    next: usize,
}

/// Each step queries the weighted Laplacian at the current state and at the predictor.
pub struct HeunObjective {
    problem: PdeProblem,
    batch: usize,
    queries: Vec<PointQuery>,
    steps: Vec<Step>,
}

impl HeunObjective {
    pub fn new(problem: &PdeProblem, bundle: &RolloutBundle) -> Result<Self> {
        require_scheme(bundle, bundle.scheme == Scheme::Heun, "Heun loss")?;
        let bars = bundle.x_heun_bar.as_ref().ok_or_else(|| invalid("bundle lacks predictor states"))?;
        let (batch, n_steps) = (bundle.batch(), bundle.n_steps());
        let mut queries = Vec::new();
        let mut main_idx = vec![vec![0usize; n_steps + 1]; batch];
        let mut sigmas = vec![Vec::with_capacity(n_steps); batch];
        for b in 0..batch {
            let g = bundle.grid(b);
            for n in 0..=n_steps {
                main_idx[b][n] = queries.len();
                let x = bundle.x_main[b][n].clone();
                if n < n_steps {
                    let y = bundle.coupling_main(b, n).map(|c| c.y);
                    let sigma = problem.sigma(g.t[n], &x, y)?;
                    sigmas[b].push(sigma.clone());
                    queries.push(PointQuery { t: g.t[n], x, grad: true, time: false, sigma: Some(sigma) });
                } else {
                    queries.push(PointQuery::value(g.t[n], x));
                }
            }
        }
        let mut steps = Vec::with_capacity(batch * n_steps);
        for b in 0..batch {
            let g = bundle.grid(b);
            for n in 0..n_steps {
                let dw = bundle.noise.dw(b, n, 0);
                let x = bundle.x_main[b][n].clone();
                let c = bundle.coupling_main(b, n);
                let kappa = problem.stratonovich_correction(g.t[n], &x, c.map(|c| c.y), c.map(|c| &c.z))?;
                let start = Side { t: g.t[n], sigma_dw: &sigmas[b][n] * dw, x, q: main_idx[b][n], kappa };

                let xb = bars[b][n].clone();
                let cb = bundle.coupling_bar(b, n);
                let tb = g.t[n + 1];
                let sigma_b = problem.sigma(tb, &xb, cb.map(|c| c.y))?;
                let kappa_b = problem.stratonovich_correction(tb, &xb, cb.map(|c| c.y), cb.map(|c| &c.z))?;
                let q = queries.len();
                queries.push(PointQuery { t: tb, x: xb.clone(), grad: true, time: false, sigma: Some(sigma_b.clone()) });
                let bar = Side { t: tb, sigma_dw: &sigma_b * dw, x: xb, q, kappa: kappa_b };
                steps.push(Step { dt: g.dt[n], start, bar, next: main_idx[b][n + 1] });
            }
        }
        Ok(HeunObjective { problem: problem.clone(), batch, queries, steps })
    }

    /// `Δy = φᴴ dt + Zᵀσ ΔW` with `φᴴ = φ − ½c − ½ Z·κ`, and its partials.
    fn increment(&self, side: &Side, dt: f64, e: &PointEval) -> Result<(f64, f64, Vector)> {
        let y = e.value;
        let z = e.grad()?;
        let c = e.wlap()?;
        let phi = self.problem.phi(side.t, &side.x, y, z);
        let phi_h = phi - 0.5 * c - 0.5 * z.dot(&side.kappa);
        let dy = phi_h * dt + z.dot(&side.sigma_dw);
        let (py, pz) = self.problem.phi_partials(side.t, &side.x, y, z);
        let mut dz = pz * dt;
        dz.axpy(-0.5 * dt, &side.kappa, 1.0);
        dz += &side.sigma_dw;
        Ok((dy, py * dt, dz))
    }
}

impl Objective for HeunObjective {
    fn queries(&self) -> &[PointQuery] {
        &self.queries
    }

    fn combine(&self, evals: &[PointEval], mut adjoints: Option<&mut [PointAdjoint]>) -> Result<f64> {
        let scale = 1.0 / self.batch as f64;
        let mut total = 0.0;
        for step in &self.steps {
            let e0 = &evals[step.start.q];
            let eb = &evals[step.bar.q];
            let (dy0, dy0_y, dy0_z) = self.increment(&step.start, step.dt, e0)?;
            let (dyb, dyb_y, dyb_z) = self.increment(&step.bar, step.dt, eb)?;
            let err = evals[step.next].value - e0.value - 0.5 * (dy0 + dyb);
            total += scale * err * err;
            let Some(adj) = adjoints.as_deref_mut() else { continue };
            let w = 2.0 * scale * err;
            adj[step.next].value += w;
            adj[step.start.q].value += -w * (1.0 + 0.5 * dy0_y);
            adj[step.start.q].add_grad(&dy0_z, -0.5 * w);
            adj[step.start.q].wlap += 0.25 * w * step.dt;
            adj[step.bar.q].value += -0.5 * w * dyb_y;
            adj[step.bar.q].add_grad(&dyb_z, -0.5 * w);
            adj[step.bar.q].wlap += 0.25 * w * step.dt;
        }
        Ok(total)
    }
}
