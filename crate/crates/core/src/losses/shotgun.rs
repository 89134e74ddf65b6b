//! Antithetic fine-step losses on randomized grids.

use super::em::Aggregate;
use super::require_scheme;
use crate::error::{invalid, Error, Result};
use crate::problems::{PdeProblem, Vector};
use crate::stochastics::{RolloutBundle, Scheme};
use crate::surrogate::{Objective, PointAdjoint, PointEval, PointQuery};

struct Step {
    t: f64,
    x: Vector,
    main: usize,
    plus: Vec<usize>,
    minus: Vec<usize>,
}

/// Shotgun (squared shot mean) and its two-group debiased variant.
pub struct ShotgunFamily {
    problem: PdeProblem,
    aggregate: Aggregate,
    tau: f64,
    batch: usize,
    queries: Vec<PointQuery>,
    steps: Vec<Step>,
}

impl ShotgunFamily {
    pub fn new(problem: &PdeProblem, bundle: &RolloutBundle, aggregate: Aggregate, tau: f64) -> Result<Self> {
        let Scheme::Shotgun { shots, tau: bundle_tau } = bundle.scheme else {
            return require_scheme(bundle, false, "shotgun loss").map(|_| unreachable!());
        };
        if tau != bundle_tau {
            return Err(Error::Incompatible(format!("loss tau {tau} differs from bundle tau {bundle_tau}")));
        }
        let need = aggregate.shots();
        if need == 0 {
            return Err(invalid("shot counts must be >= 1"));
        }
        if shots < need {
            return Err(Error::Incompatible(format!("loss needs {need} shots, bundle has {shots}")));
        }
        let plus = bundle.x_shotgun_plus.as_ref().ok_or_else(|| invalid("bundle lacks antithetic states"))?;
        let minus = bundle.x_shotgun_minus.as_ref().ok_or_else(|| invalid("bundle lacks antithetic states"))?;
        let mut queries = Vec::new();
        let mut steps = Vec::new();
        for b in 0..bundle.batch() {
            let g = bundle.grid(b);
            for n in 0..bundle.n_steps() {
                let t = g.t[n];
                let x = bundle.x_main[b][n].clone();
                let main = queries.len();
                queries.push(PointQuery::with_grad(t, x.clone()));
                let mut p = Vec::with_capacity(need);
                let mut m = Vec::with_capacity(need);
                for i in 0..need {
                    p.push(queries.len());
                    queries.push(PointQuery::value(t + tau, plus[b][n][i].clone()));
                    m.push(queries.len());
                    queries.push(PointQuery::value(t + tau, minus[b][n][i].clone()));
                }
                steps.push(Step { t, x, main, plus: p, minus: m });
            }
        }
        Ok(ShotgunFamily { problem: problem.clone(), aggregate, tau, batch: bundle.batch(), queries, steps })
    }
}

impl Objective for ShotgunFamily {
    fn queries(&self) -> &[PointQuery] {
        &self.queries
    }

    fn combine(&self, evals: &[PointEval], mut adjoints: Option<&mut [PointAdjoint]>) -> Result<f64> {
        let scale = 1.0 / self.batch as f64;
        let mut total = 0.0;
        let mut e = Vec::new();
        let mut w = Vec::new();
        for step in &self.steps {
            let main = &evals[step.main];
            let y = main.value;
            let z = main.grad()?;
            let phi = self.problem.phi(step.t, &step.x, y, z);
            e.clear();
            for (&p, &m) in step.plus.iter().zip(&step.minus) {
                e.push((evals[p].value + evals[m].value - 2.0 * y) / (2.0 * self.tau) - phi);
            }
            total += self.aggregate.apply(&e, scale, &mut w);
            let Some(adj) = adjoints.as_deref_mut() else { continue };
            let (py, pz) = self.problem.phi_partials(step.t, &step.x, y, z);
            let sum_w: f64 = w.iter().sum();
            for (i, &wi) in w.iter().enumerate() {
                adj[step.plus[i]].value += wi / (2.0 * self.tau);
                adj[step.minus[i]].value += wi / (2.0 * self.tau);
            }
            adj[step.main].value += -sum_w * (1.0 / self.tau + py);
            adj[step.main].add_grad(&pz, -sum_w);
        }
        Ok(total)
    }
}
