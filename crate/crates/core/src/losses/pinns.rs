//! Residual loss along forward paths and the soft terminal penalty.

use super::require_scheme;
use crate::error::{Error, Result};
use crate::problems::{PdeProblem, Vector};
use crate::stochastics::{RolloutBundle, Scheme};
use crate::surrogate::{Objective, PointAdjoint, PointEval, PointQuery};

/// `(1/(BN)) Σ (∂t u + μ·∇u + ½ Tr[σᵀ∇²uσ] − φ)²` at the main-path nodes `n < N`.
pub struct FsPinnsObjective {
    problem: PdeProblem,
    scale: f64,
    queries: Vec<PointQuery>,
    mus: Vec<Vector>,
}

impl FsPinnsObjective {
    pub fn new(problem: &PdeProblem, bundle: &RolloutBundle) -> Result<Self> {
        require_scheme(bundle, bundle.scheme == Scheme::Em, "FS-PINNs loss")?;
        if problem.jump_spec.is_some() {
            return Err(Error::Incompatible("FS-PINNs has no jump term".into()));
        }
        let (batch, n_steps) = (bundle.batch(), bundle.n_steps());
        let mut queries = Vec::with_capacity(batch * n_steps);
        let mut mus = Vec::with_capacity(batch * n_steps);
        for b in 0..batch {
            let g = bundle.grid(b);
            for n in 0..n_steps {
                let x = bundle.x_main[b][n].clone();
                let y = bundle.coupling_main(b, n).map(|c| c.y);
                let sigma = problem.sigma(g.t[n], &x, y)?;
                mus.push(problem.mu(g.t[n], &x));
                queries.push(PointQuery { t: g.t[n], x, grad: true, time: true, sigma: Some(sigma) });
            }
        }
        Ok(FsPinnsObjective {
            problem: problem.clone(),
            scale: 1.0 / (batch * n_steps) as f64,
            queries,
            mus,
        })
    }
}

impl Objective for FsPinnsObjective {
    fn queries(&self) -> &[PointQuery] {
        &self.queries
    }

    fn combine(&self, evals: &[PointEval], mut adjoints: Option<&mut [PointAdjoint]>) -> Result<f64> {
        let mut total = 0.0;
        for (k, (q, e)) in self.queries.iter().zip(evals).enumerate() {
            let z = e.grad()?;
            let mu = &self.mus[k];
            let phi = self.problem.phi(q.t, &q.x, e.value, z);
            let res = e.time()? + mu.dot(z) + 0.5 * e.wlap()? - phi;
            total += self.scale * res * res;
            if let Some(adj) = adjoints.as_deref_mut() {
                let w = 2.0 * self.scale * res;
                let (py, pz) = self.problem.phi_partials(q.t, &q.x, e.value, z);
                adj[k].time += w;
                adj[k].wlap += 0.5 * w;
                adj[k].value += -w * py;
                adj[k].add_grad(&(mu - pz), w);
            }
        }
        Ok(total)
    }
}

/// `(1/B) Σ_b (Y_N − g)² + ‖Z_N − ∇g‖²` at the terminal main-path states.
pub struct TerminalObjective {
    problem: PdeProblem,
    scale: f64,
    queries: Vec<PointQuery>,
}

impl TerminalObjective {
    pub fn new(problem: &PdeProblem, bundle: &RolloutBundle) -> Result<Self> {
        let n = bundle.n_steps();
        let queries = (0..bundle.batch())
            .map(|b| PointQuery::with_grad(bundle.grid(b).t[n], bundle.x_main[b][n].clone()))
            .collect();
        Ok(TerminalObjective { problem: problem.clone(), scale: 1.0 / bundle.batch() as f64, queries })
    }
}

impl Objective for TerminalObjective {
    fn queries(&self) -> &[PointQuery] {
        &self.queries
    }

    fn combine(&self, evals: &[PointEval], mut adjoints: Option<&mut [PointAdjoint]>) -> Result<f64> {
        let mut total = 0.0;
        for (k, (q, e)) in self.queries.iter().zip(evals).enumerate() {
            let dv = e.value - self.problem.g(&q.x);
            let dg = e.grad()? - self.problem.grad_g(&q.x);
            total += self.scale * (dv * dv + dg.norm_squared());
            if let Some(adj) = adjoints.as_deref_mut() {
                adj[k].value += 2.0 * self.scale * dv;
                adj[k].add_grad(&dg, 2.0 * self.scale);
            }
        }
        Ok(total)
    }
}
