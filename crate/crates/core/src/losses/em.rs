//! Euler–Maruyama self-consistency losses: single shot, shot-averaged and
//! the two-group product.

use super::require_scheme;
use crate::error::{invalid, Error, Result};
use crate::problems::{PdeProblem, Vector};
use crate::stochastics::{RolloutBundle, Scheme};
use crate::surrogate::{Field, Objective, PointAdjoint, PointEval, PointQuery};

/// How the per-shot errors of one step become a loss term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregate {
    /// `(mean of M errors)²`.
    SquaredMean(usize),
    /// `mean(group 1) × mean(group 2)` over disjoint groups of `M₁` and `M₂` shots.
    GroupProduct(usize, usize),
}

impl Aggregate {
    pub fn shots(&self) -> usize {
        match *self {
            Aggregate::SquaredMean(m) => m,
            Aggregate::GroupProduct(m1, m2) => m1 + m2,
        }
    }

    /// Loss term and `∂term/∂e_i`.
    pub(crate) fn apply(&self, e: &[f64], scale: f64, weights: &mut Vec<f64>) -> f64 {
        weights.clear();
        match *self {
            Aggregate::SquaredMean(m) => {
                let mean = e[..m].iter().sum::<f64>() / m as f64;
                weights.extend(std::iter::repeat_n(scale * 2.0 * mean / m as f64, m));
                scale * mean * mean
            }
            Aggregate::GroupProduct(m1, m2) => {
                let g1 = e[..m1].iter().sum::<f64>() / m1 as f64;
                let g2 = e[m1..m1 + m2].iter().sum::<f64>() / m2 as f64;
                weights.extend(std::iter::repeat_n(scale * g2 / m1 as f64, m1));
                weights.extend(std::iter::repeat_n(scale * g1 / m2 as f64, m2));
                scale * g1 * g2
            }
        }
    }
}

struct Step {
    t: f64,
    dt: f64,
    x: Vector,
    main: usize,
    /// Query index of each shot's next value.
    next: Vec<usize>,
    /// `σ ΔW_i`, frozen.
    sigma_dw: Vec<Vector>,
    /// Query indices of `u(t, x + z_k 𝟙)` for each shot.
    jumps: Vec<Vec<usize>>,
}

/// EM, Multi-Shot EM and Un-EM on a main path with candidate shots.
pub struct EmFamily {
    problem: PdeProblem,
    aggregate: Aggregate,
    batch: usize,
    queries: Vec<PointQuery>,
    steps: Vec<Step>,
    compensator: f64,
}

impl EmFamily {
    pub fn new(problem: &PdeProblem, bundle: &RolloutBundle, aggregate: Aggregate) -> Result<Self> {
        require_scheme(
            bundle,
            matches!(bundle.scheme, Scheme::Em | Scheme::MultiShot { .. } | Scheme::Jump { .. }),
            "EM-type loss",
        )?;
        let shots = aggregate.shots();
        if shots == 0 || matches!(aggregate, Aggregate::GroupProduct(0, _) | Aggregate::GroupProduct(_, 0)) {
            return Err(invalid("shot counts must be >= 1"));
        }
        if bundle.scheme.shots() < shots {
            return Err(Error::Incompatible(format!(
                "loss needs {shots} shots, bundle has {}",
                bundle.scheme.shots()
            )));
        }
        let (batch, n_steps) = (bundle.batch(), bundle.n_steps());
        let mut queries = Vec::new();
        let mut main_idx = vec![vec![0usize; n_steps + 1]; batch];
        for b in 0..batch {
            let g = bundle.grid(b);
            for n in 0..=n_steps {
                main_idx[b][n] = queries.len();
                let x = bundle.x_main[b][n].clone();
                queries.push(if n < n_steps { PointQuery::with_grad(g.t[n], x) } else { PointQuery::value(g.t[n], x) });
            }
        }
        let compensator = problem.jump_spec.map_or(0.0, |s| s.lambda * s.mu_phi);
        let mut steps = Vec::with_capacity(batch * n_steps);
        for b in 0..batch {
            let g = bundle.grid(b);
            for n in 0..n_steps {
                let x = bundle.x_main[b][n].clone();
                let y = bundle.coupling_main(b, n).map(|c| c.y);
                let sigma = problem.sigma(g.t[n], &x, y)?;
                let mut next = Vec::with_capacity(shots);
                let mut sigma_dw = Vec::with_capacity(shots);
                let mut jumps = Vec::with_capacity(shots);
                for i in 0..shots {
                    if i == 0 {
                        next.push(main_idx[b][n + 1]);
                    } else {
                        next.push(queries.len());
                        queries.push(PointQuery::value(g.t[n + 1], bundle.candidate(b, n + 1, i).clone()));
                    }
                    sigma_dw.push(&sigma * bundle.noise.dw(b, n, i));
                    let mut idx = Vec::new();
                    if let Some(j) = bundle.noise.jump(b, n, i) {
                        for &z in &j.sizes {
                            idx.push(queries.len());
                            queries.push(PointQuery::value(g.t[n], x.add_scalar(z)));
                        }
                    }
                    jumps.push(idx);
                }
                steps.push(Step { t: g.t[n], dt: g.dt[n], x, main: main_idx[b][n], next, sigma_dw, jumps });
            }
        }
        Ok(EmFamily { problem: problem.clone(), aggregate, batch, queries, steps, compensator })
    }

    fn shot_errors(&self, step: &Step, evals: &[PointEval], e: &mut Vec<f64>) -> Result<(f64, f64, Vector)> {
        let main = &evals[step.main];
        let y = main.value;
        let z = main.grad()?;
        let phi = self.problem.phi(step.t, &step.x, y, z);
        let comp = self.compensator * z.sum() * step.dt;
        e.clear();
        for i in 0..self.aggregate.shots() {
            let jump: f64 = step.jumps[i].iter().map(|&q| evals[q].value - y).sum();
            let pred = y + phi * step.dt + z.dot(&step.sigma_dw[i]) + jump - comp;
            e.push(evals[step.next[i]].value - pred);
        }
        let (py, pz) = self.problem.phi_partials(step.t, &step.x, y, z);
        Ok((phi, py, pz))
    }
}

impl Objective for EmFamily {
    fn queries(&self) -> &[PointQuery] {
        &self.queries
    }

    fn combine(&self, evals: &[PointEval], mut adjoints: Option<&mut [PointAdjoint]>) -> Result<f64> {
        let scale = 1.0 / self.batch as f64;
        let mut total = 0.0;
        let mut e = Vec::new();
        let mut w = Vec::new();
        for step in &self.steps {
            let (_, py, pz) = self.shot_errors(step, evals, &mut e)?;
            total += self.aggregate.apply(&e, scale, &mut w);
            let Some(adj) = adjoints.as_deref_mut() else { continue };
            let mut main_value = 0.0;
            let mut main_grad = Vector::zeros(step.x.len());
            for (i, &wi) in w.iter().enumerate() {
                adj[step.next[i]].value += wi;
                let k = step.jumps[i].len() as f64;
                main_value += wi * (-1.0 - py * step.dt + k);
                main_grad.axpy(-wi, &step.sigma_dw[i], 1.0);
                main_grad.axpy(-wi * step.dt, &pz, 1.0);
                if self.compensator != 0.0 {
                    main_grad.add_scalar_mut(wi * self.compensator * step.dt);
                }
                for &q in &step.jumps[i] {
                    adj[q].value -= wi;
                }
            }
            adj[step.main].value += main_value;
            adj[step.main].add_grad(&main_grad, 1.0);
        }
        Ok(total)
    }
}

/// Per-sample errors `[b][n][i]` and, for two groups, their averages `[b][n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepErrors {
    pub err: Vec<Vec<Vec<f64>>>,
    pub group1: Option<Vec<Vec<f64>>>,
    pub group2: Option<Vec<Vec<f64>>>,
}

/// Raw EM one-step errors of every shot of a bundle.
pub fn em_step_errors(
    field: &dyn Field,
    problem: &PdeProblem,
    bundle: &RolloutBundle,
    groups: Option<(usize, usize)>,
) -> Result<StepErrors> {
    let shots = groups.map_or(bundle.scheme.shots(), |(a, b)| a + b);
    let fam = EmFamily::new(problem, bundle, Aggregate::SquaredMean(shots))?;
    let evals = field.evaluate(&fam.queries)?;
    let n_steps = bundle.n_steps();
    let mut err = vec![Vec::with_capacity(n_steps); bundle.batch()];
    let mut e = Vec::new();
    for (k, step) in fam.steps.iter().enumerate() {
        fam.shot_errors(step, &evals, &mut e)?;
        err[k / n_steps].push(e.clone());
    }
    let avg = |lo: usize, hi: usize| -> Vec<Vec<f64>> {
        err.iter()
            .map(|row| row.iter().map(|s| s[lo..hi].iter().sum::<f64>() / (hi - lo) as f64).collect())
            .collect()
    };
    let (group1, group2) = match groups {
        Some((m1, m2)) => (Some(avg(0, m1)), Some(avg(m1, m1 + m2))),
        None => (None, None),
    };
    Ok(StepErrors { err, group1, group2 })
}
