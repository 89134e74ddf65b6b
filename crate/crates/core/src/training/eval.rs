use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::problems::{exact_solution, hjb_reference_mc, Benchmark, PdeProblem, Vector};
use crate::stochastics::noise::{brownian_increment, jump_draw};
use crate::stochastics::{em_forward_step, jump_forward_step, uniform_grid, KeyedRng, StreamTag};
use crate::surrogate::{Field, PointQuery};

/// Monte Carlo samples per node for the HJB reference values.
pub const HJB_REFERENCE_SAMPLES: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSource {
    Exact,
    MonteCarlo,
    InitialValue,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSet {
    pub seed: u64,
    pub source: ReferenceSource,
    pub trajectories: Vec<Vec<EvalPoint>>,
}

impl EvalSet {
    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn n_points(&self) -> usize {
        self.trajectories.iter().map(Vec::len).sum()
    }
}

fn source_for(problem: &PdeProblem) -> Result<ReferenceSource> {
    if problem.has_exact() {
        Ok(ReferenceSource::Exact)
    } else if problem.benchmark == Some(Benchmark::Hjb) {
        Ok(ReferenceSource::MonteCarlo)
    } else if problem.reference_u0.is_some() {
        Ok(ReferenceSource::InitialValue)
    } else {
        Err(Error::Incompatible(format!(
            "problem {} (d = {}) has no reference solution",
            problem.name, problem.d
        )))
    }
}

/// Forward EM paths on a uniform grid, labelled with reference values.
///
/// Problems without a closed form are labelled by the HJB Monte Carlo
/// estimator, or reduce to the single pair `(0, x0, reference_u0)`.
pub fn generate_reference_trajectories(problem: &PdeProblem, count: usize, n_steps: usize, seed: u64) -> Result<EvalSet> {
    let source = source_for(problem)?;
    let mut set = EvalSet { seed, source, trajectories: Vec::new() };
    if count == 0 {
        return Ok(set);
    }
    if source == ReferenceSource::InitialValue {
        let u = problem.reference_u0.expect("checked above");
        set.trajectories.push(vec![EvalPoint { t: 0.0, x: problem.x0.iter().copied().collect(), u }]);
        return Ok(set);
    }
    let grid = uniform_grid(n_steps, problem.t_end)?;
    let rng = KeyedRng::new(seed);
    for b in 0..count {
        let mut x = problem.x0.clone();
        let mut path = Vec::with_capacity(n_steps + 1);
        for n in 0..=n_steps {
            let t = grid.t[n];
            let u = match source {
                ReferenceSource::Exact => exact_solution(problem, t, &x)?,
                _ => {
                    let mc_seed = rng.derive(StreamTag::Reference, [b as u64, n as u64, 0]);
                    hjb_reference_mc(problem, &x, t, HJB_REFERENCE_SAMPLES, mc_seed)?.0
                }
            };
            path.push(EvalPoint { t, x: x.iter().copied().collect(), u });
            if n == n_steps {
                break;
            }
            let dt = grid.dt[n];
            let dw = brownian_increment(&rng, b, n, 0, problem.d, dt);
            x = match &problem.jump_spec {
                Some(spec) => {
                    let draw = jump_draw(&rng, spec, b, n, 0, dt)?;
                    jump_forward_step(problem, t, &x, dt, &dw, &draw)?.0
                }
                None => {
                    let y = problem.fully_coupled().then_some(u);
                    em_forward_step(problem, t, &x, dt, &dw, y)?
                }
            };
        }
        set.trajectories.push(path);
    }
    Ok(set)
}

/// Trajectory-wise relative L2 error, averaged over the set.
pub fn rl2(field: &dyn Field, set: &EvalSet) -> Result<f64> {
    if set.is_empty() {
        return Err(invalid("rl2 needs a non-empty evaluation set"));
    }
    let queries: Vec<PointQuery> = set
        .trajectories
        .iter()
        .flatten()
        .map(|p| PointQuery::value(p.t, Vector::from_column_slice(&p.x)))
        .collect();
    let evals = field.evaluate(&queries)?;
    let mut at = 0;
    let mut total = 0.0;
    for path in &set.trajectories {
        let (mut num, mut den) = (0.0, 0.0);
        for p in path {
            let diff = p.u - evals[at].value;
            num += diff * diff;
            den += p.u * p.u;
            at += 1;
        }
        if den == 0.0 {
            return Err(invalid("reference values are all zero on a trajectory"));
        }
        total += (num / den).sqrt();
    }
    Ok(total / set.trajectories.len() as f64)
}
