//! Parameterized solution field `u_θ(t, x)` and its derivatives.

pub mod checkpoint;
mod field;
mod mlp;

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::problems::{PdeProblem, Vector};

pub use field::{Field, PointAdjoint, PointEval, PointQuery};
pub(crate) use field::validate_queries;
pub use mlp::{ActDerivs, Activation, Mlp, NetworkConfig, Precision, LEAKY_SLOPE};
use mlp::{Jet, Tape};

/// Largest number of activation entries a block keeps alive per jet.
const BLOCK_ENTRIES: usize = 1 << 16;

/// Largest number of activation entries kept between evaluation and backprop.
const TAPE_CACHE_ENTRIES: usize = 1 << 25;

fn backprop_order(class: Class) -> usize {
    match class {
        Class::Value => 1,
        Class::First => 2,
        Class::Second => 3,
    }
}

#[derive(Clone, Debug)]
pub enum Constraint {
    None,
    /// `ũ(t, x) = g(x) + (T − t) net(t, x)`.
    Hard(Box<PdeProblem>),
}

#[derive(Debug)]
pub struct Surrogate {
    net: Mlp,
    constraint: Constraint,
    wlap_calls: AtomicU64,
}

impl Clone for Surrogate {
    fn clone(&self) -> Self {
        Surrogate {
            net: self.net.clone(),
            constraint: self.constraint.clone(),
            wlap_calls: AtomicU64::new(self.wlap_calls.load(Ordering::Relaxed)),
        }
    }
}

/// Scalar objective built from point queries of a surrogate.
pub trait Objective {
    fn queries(&self) -> &[PointQuery];

    /// Objective value from the evaluations; when `adjoints` is given, also
    /// accumulates `∂objective/∂output` for every query into it.
    fn combine(&self, evals: &[PointEval], adjoints: Option<&mut [PointAdjoint]>) -> Result<f64>;
}

/// Which derivatives a block of points needs.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Class {
    Value,
    First,
    Second,
}

fn class_of(q: &PointQuery) -> Class {
    if q.sigma.is_some() {
        Class::Second
    } else if q.grad || q.time {
        Class::First
    } else {
        Class::Value
    }
}

impl Surrogate {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        Ok(Surrogate::from_net(Mlp::new(config)?))
    }

    pub fn from_net(net: Mlp) -> Self {
        Surrogate { net, constraint: Constraint::None, wlap_calls: AtomicU64::new(0) }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn config(&self) -> &NetworkConfig {
        self.net.config()
    }

    pub fn constraint(&self) -> &Constraint {
        &self.constraint
    }

    pub fn is_hard(&self) -> bool {
        matches!(self.constraint, Constraint::Hard(_))
    }

    pub fn params(&self) -> Vec<f64> {
        self.net.params()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        self.net.set_params(params)
    }

    pub fn n_params(&self) -> usize {
        self.net.n_params()
    }

    pub fn reset_wlap_calls(&self) {
        self.wlap_calls.store(0, Ordering::Relaxed);
    }

    fn input_rows(&self, queries: &[&PointQuery]) -> Array2<f64> {
        let n0 = self.net.config().input_dim;
        let mut z = Array2::zeros((queries.len(), n0));
        for (p, q) in queries.iter().enumerate() {
            z[(p, 0)] = q.t;
            for j in 1..n0 {
                z[(p, j)] = q.x[j - 1];
            }
        }
        z
    }

    fn sigma_directions(&self, queries: &[&PointQuery]) -> Vec<Array2<f64>> {
        let n0 = self.net.config().input_dim;
        let d = n0 - 1;
        (0..d)
            .map(|k| {
                let mut v = Array2::zeros((queries.len(), n0));
                for (p, q) in queries.iter().enumerate() {
                    let s = q.sigma.as_ref().expect("second-order query");
                    for j in 0..d {
                        v[(p, j + 1)] = s[(j, k)];
                    }
                }
                v
            })
            .collect()
    }

    fn block_size(&self, class: Class) -> usize {
        let cfg = self.net.config();
        let jets = match class {
            Class::Value => 1,
            Class::First => 2,
            Class::Second => cfg.input_dim + 1,
        };
        (BLOCK_ENTRIES / (cfg.width * cfg.hidden_layers * jets).max(1)).clamp(8, 512)
    }

    /// Raw network outputs for one block of same-class queries, plus the
    /// tape a later backward pass can reuse when `keep` is set.
    fn eval_block(&self, queries: &[&PointQuery], class: Class, keep: bool) -> (Vec<PointEval>, Option<Tape>) {
        let z = self.input_rows(queries);
        if class == Class::Value && !keep {
            let v = self.net.forward_values(&z);
            return (v.iter().map(|&value| PointEval { value, ..Default::default() }).collect(), None);
        }
        let order = match (class, keep) {
            (_, true) => backprop_order(class),
            (Class::Second, false) => 2,
            _ => 1,
        };
        let tape = self.net.forward_tape(&z, order);
        if class == Class::Value {
            let evals = tape.value.iter().map(|&value| PointEval { value, ..Default::default() }).collect();
            return (evals, Some(tape));
        }
        let grad = self.net.input_gradient(&tape);
        let wlap = (class == Class::Second).then(|| {
            let mut total = Array1::<f64>::zeros(queries.len());
            for dir in self.sigma_directions(queries) {
                total += &self.net.directional(&tape, &dir).1;
            }
            total
        });
        let evals = queries
            .iter()
            .enumerate()
            .map(|(p, q)| {
                let row = grad.row(p);
                PointEval {
                    value: tape.value[p],
                    grad: (q.grad || q.sigma.is_some())
                        .then(|| Vector::from_iterator(row.len() - 1, row.iter().skip(1).copied())),
                    time: q.time.then_some(row[0]),
                    wlap: wlap.as_ref().map(|w| w[p]),
                }
            })
            .collect();
        (evals, keep.then_some(tape))
    }

    fn grouped(&self, queries: &[PointQuery]) -> Vec<(Class, Vec<usize>)> {
        let mut groups = Vec::new();
        for class in [Class::Value, Class::First, Class::Second] {
            let idx: Vec<usize> = (0..queries.len()).filter(|&i| class_of(&queries[i]) == class).collect();
            for chunk in idx.chunks(self.block_size(class)) {
                groups.push((class, chunk.to_vec()));
            }
        }
        groups
    }

    /// Raw network evaluation (no constraint) of every query, with one
    /// tape per block when `keep` is set.
    fn eval_raw(&self, queries: &[PointQuery], keep: bool) -> (Vec<PointEval>, Option<Vec<Tape>>) {
        let groups = self.grouped(queries);
        let blocks: Vec<(Vec<PointEval>, Option<Tape>)> = groups
            .par_iter()
            .map(|(class, idx)| {
                let qs: Vec<&PointQuery> = idx.iter().map(|&i| &queries[i]).collect();
                self.eval_block(&qs, *class, keep)
            })
            .collect();
        let mut out = vec![PointEval::default(); queries.len()];
        let mut tapes = Vec::with_capacity(if keep { groups.len() } else { 0 });
        for ((_, idx), (block, tape)) in groups.iter().zip(blocks) {
            for (&i, e) in idx.iter().zip(block) {
                out[i] = e;
            }
            tapes.extend(tape);
        }
        (out, keep.then_some(tapes))
    }

    /// Whether the forward tapes of `queries` are small enough to keep for the backward pass.
    fn fits_tapes(&self, queries: &[PointQuery]) -> bool {
        let cfg = self.net.config();
        (queries.len() * cfg.width * cfg.hidden_layers * 4) <= TAPE_CACHE_ENTRIES
    }

    fn evaluate_inner(&self, queries: &[PointQuery], keep: bool) -> Result<(Vec<PointEval>, Option<Vec<Tape>>)> {
        validate_queries(self.dim(), queries)?;
        let n_wlap = queries.iter().filter(|q| q.sigma.is_some()).count() as u64;
        self.wlap_calls.fetch_add(n_wlap, Ordering::Relaxed);
        let (mut raw, tapes) = self.eval_raw(queries, keep);
        if let Constraint::Hard(problem) = &self.constraint {
            let t_end = problem.t_end;
            for (q, e) in queries.iter().zip(raw.iter_mut()) {
                let tau = t_end - q.t;
                let n = e.value;
                if let Some(dt) = e.time.as_mut() {
                    *dt = -n + tau * *dt;
                }
                if let Some(w) = e.wlap.as_mut() {
                    let s = q.sigma.as_ref().expect("sigma");
                    let hess = problem.hess_g(&q.x);
                    *w = (s.transpose() * hess * s).trace() + tau * *w;
                }
                if let Some(g) = e.grad.as_mut() {
                    *g = problem.grad_g(&q.x) + &*g * tau;
                }
                e.value = problem.g(&q.x) + tau * n;
            }
        }
        for e in &raw {
            if !e.value.is_finite() {
                return Err(Error::NonFinite("surrogate value".into()));
            }
        }
        Ok((raw, tapes))
    }

    /// Gradient with respect to θ of `Σ_q adjoint_q · output_q`.
    pub fn backprop(&self, queries: &[PointQuery], adjoints: &[PointAdjoint]) -> Result<Vec<f64>> {
        self.backprop_inner(queries, adjoints, None)
    }

    fn backprop_inner(&self, queries: &[PointQuery], adjoints: &[PointAdjoint], tapes: Option<Vec<Tape>>) -> Result<Vec<f64>> {
        if queries.len() != adjoints.len() {
            return Err(invalid("one adjoint per query is required"));
        }
        validate_queries(self.net.config().input_dim - 1, queries)?;
        let raw_adj: Vec<PointAdjoint> = match &self.constraint {
            Constraint::None => adjoints.to_vec(),
            Constraint::Hard(p) => queries
                .iter()
                .zip(adjoints)
                .map(|(q, a)| {
                    let tau = p.t_end - q.t;
                    PointAdjoint {
                        value: tau * a.value - a.time,
                        grad: a.grad.as_ref().map(|g| g * tau),
                        time: tau * a.time,
                        wlap: tau * a.wlap,
                    }
                })
                .collect(),
        };
        let groups = self.grouped(queries);
        if tapes.as_ref().is_some_and(|t| t.len() != groups.len()) {
            return Err(invalid("cached tapes do not match the query blocks"));
        }
        let mut cached: Vec<Option<Tape>> = match tapes {
            Some(t) => t.into_iter().map(Some).collect(),
            None => (0..groups.len()).map(|_| None).collect(),
        };
        let n0 = self.net.config().input_dim;
        let parts: Vec<Vec<f64>> = groups
            .par_iter()
            .zip(cached.par_iter_mut())
            .map(|((class, idx), cache)| {
                let qs: Vec<&PointQuery> = idx.iter().map(|&i| &queries[i]).collect();
                let tape = match cache.take() {
                    Some(t) => t,
                    None => self.net.forward_tape(&self.input_rows(&qs), backprop_order(*class)),
                };
                let ubar = Array1::from_iter(idx.iter().map(|&i| raw_adj[i].value));
                let mut jets = Vec::new();
                if *class != Class::Value {
                    let mut dir = Array2::zeros((idx.len(), n0));
                    let mut any = false;
                    for (p, &i) in idx.iter().enumerate() {
                        let a = &raw_adj[i];
                        dir[(p, 0)] = a.time;
                        if let Some(g) = &a.grad {
                            for j in 0..n0 - 1 {
                                dir[(p, j + 1)] = g[j];
                            }
                        }
                        any |= a.time != 0.0 || a.grad.as_ref().is_some_and(|g| g.iter().any(|&v| v != 0.0));
                    }
                    if any {
                        jets.push(Jet { dir, w1: Some(Array1::ones(idx.len())), w2: None });
                    }
                }
                if *class == Class::Second {
                    let w2 = Array1::from_iter(idx.iter().map(|&i| raw_adj[i].wlap));
                    if w2.iter().any(|&v| v != 0.0) {
                        for dir in self.sigma_directions(&qs) {
                            jets.push(Jet { dir, w1: None, w2: Some(w2.clone()) });
                        }
                    }
                }
                self.net.backprop(&tape, &ubar, &jets)
            })
            .collect();
        let mut total = vec![0.0; self.n_params()];
        for part in parts {
            for (t, v) in total.iter_mut().zip(part) {
                *t += v;
            }
        }
        if let Some(bad) = total.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter gradient entry {bad}")));
        }
        Ok(total)
    }
}

impl Field for Surrogate {
    fn dim(&self) -> usize {
        self.net.config().input_dim - 1
    }

    fn wlap_calls(&self) -> u64 {
        self.wlap_calls.load(Ordering::Relaxed)
    }

    fn evaluate(&self, queries: &[PointQuery]) -> Result<Vec<PointEval>> {
        Ok(self.evaluate_inner(queries, false)?.0)
    }
}

/// Wraps an unconstrained surrogate so that `ũ(T, ·) = g` and `∇ũ(T, ·) = ∇g` hold exactly.
pub fn apply_hard_constraint(raw: Surrogate, problem: &PdeProblem) -> Result<Surrogate> {
    if raw.is_hard() {
        return Err(invalid("surrogate already carries a constraint"));
    }
    crate::error::check_dim(problem.d + 1, raw.config().input_dim)?;
    Ok(Surrogate {
        net: raw.net,
        constraint: Constraint::Hard(Box::new(problem.clone())),
        wlap_calls: raw.wlap_calls,
    })
}

/// Value and exact θ-gradient of an objective.
pub fn param_gradient(objective: &dyn Objective, s: &Surrogate) -> Result<(f64, Vec<f64>)> {
    let queries = objective.queries();
    let (evals, tapes) = s.evaluate_inner(queries, s.fits_tapes(queries))?;
    let mut adjoints = vec![PointAdjoint::default(); queries.len()];
    let value = objective.combine(&evals, Some(&mut adjoints))?;
    if !value.is_finite() {
        return Err(Error::NonFinite("objective value".into()));
    }
    let grad = s.backprop_inner(queries, &adjoints, tapes)?;
    Ok((value, grad))
}

/// Objective value without gradients.
pub fn objective_value(objective: &dyn Objective, field: &dyn Field) -> Result<f64> {
    let evals = field.evaluate(objective.queries())?;
    objective.combine(&evals, None)
}
