//! Training objectives built on rollout bundles.
//!
//! Training losses use raw one-step differences summed over steps and
//! averaged over the batch. Each loss is an [`Objective`] so that its value
//! and exact θ-gradient come from the same query set.

mod em;
mod heun;
mod onestep;
mod pinns;
mod shotgun;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::problems::PdeProblem;
use crate::stochastics::{RolloutBundle, Scheme};
use crate::surrogate::{objective_value, Field, Objective, PointAdjoint, PointEval, PointQuery};

pub use em::{em_step_errors, Aggregate, EmFamily, StepErrors};
pub use heun::HeunObjective;
pub use onestep::{err_em, err_heun, err_shotgun, shot_average, Normalization};
pub use pinns::{FsPinnsObjective, TerminalObjective};
pub use shotgun::ShotgunFamily;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    Em,
    MultishotEm { m: usize },
    Shotgun { m: usize, tau: f64 },
    Heun,
    Unem { m1: usize, m2: usize },
    Unshotgun { m1: usize, m2: usize, tau: f64 },
    Fspinns,
}

impl Method {
    pub const NAMES: [&'static str; 7] = ["em", "multishot_em", "shotgun", "heun", "unem", "unshotgun", "fspinns"];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Em => "em",
            Method::MultishotEm { .. } => "multishot_em",
            Method::Shotgun { .. } => "shotgun",
            Method::Heun => "heun",
            Method::Unem { .. } => "unem",
            Method::Unshotgun { .. } => "unshotgun",
            Method::Fspinns => "fspinns",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok_tau = |tau: f64| tau > 0.0 && tau.is_finite();
        let ok = match *self {
            Method::MultishotEm { m } => m >= 1,
            Method::Shotgun { m, tau } => m >= 1 && ok_tau(tau),
            Method::Unem { m1, m2 } => m1 >= 1 && m2 >= 1,
            Method::Unshotgun { m1, m2, tau } => m1 >= 1 && m2 >= 1 && ok_tau(tau),
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid loss hyperparameters {self:?}")))
        }
    }

    /// Stepping scheme whose bundle this method consumes.
    pub fn scheme(&self, problem: &PdeProblem) -> Result<Scheme> {
        self.validate()?;
        let jump = problem.jump_spec.is_some();
        let scheme = match (*self, jump) {
            (Method::Em, false) | (Method::Fspinns, false) => Scheme::Em,
            (Method::Em, true) => Scheme::Jump { shots: 1 },
            (Method::MultishotEm { m }, false) => Scheme::MultiShot { shots: m },
            (Method::MultishotEm { m }, true) => Scheme::Jump { shots: m },
            (Method::Unem { m1, m2 }, false) => Scheme::MultiShot { shots: m1 + m2 },
            (Method::Unem { m1, m2 }, true) => Scheme::Jump { shots: m1 + m2 },
            (Method::Shotgun { m, tau }, false) => Scheme::Shotgun { shots: m, tau },
            (Method::Unshotgun { m1, m2, tau }, false) => Scheme::Shotgun { shots: m1 + m2, tau },
            (Method::Heun, false) => Scheme::Heun,
            (other, true) => {
                return Err(Error::Incompatible(format!(
                    "method {} is not defined for the jump problem {}",
                    other.name(),
                    problem.name
                )))
            }
        };
        Ok(scheme)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TerminalMode {
    Soft { weight: f64 },
    Hard,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub method: Method,
    pub constraint: TerminalMode,
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        self.method.validate()?;
        if let TerminalMode::Soft { weight } = self.constraint {
            if !(weight >= 0.0) || !weight.is_finite() {
                return Err(invalid("terminal weight must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

/// Weighted sum of objectives over the concatenation of their queries.
pub struct SumObjective {
    parts: Vec<(Box<dyn Objective + Send + Sync>, f64, usize)>,
    queries: Vec<PointQuery>,
}

impl SumObjective {
    pub fn new(parts: Vec<(Box<dyn Objective + Send + Sync>, f64)>) -> Self {
        let mut queries = Vec::new();
        let mut out = Vec::new();
        for (obj, w) in parts {
            let offset = queries.len();
            queries.extend_from_slice(obj.queries());
            out.push((obj, w, offset));
        }
        SumObjective { parts: out, queries }
    }
}

impl Objective for SumObjective {
    fn queries(&self) -> &[PointQuery] {
        &self.queries
    }

    fn combine(&self, evals: &[PointEval], mut adjoints: Option<&mut [PointAdjoint]>) -> Result<f64> {
        let mut total = 0.0;
        for (obj, w, offset) in &self.parts {
            let n = obj.queries().len();
            let ev = &evals[*offset..offset + n];
            match adjoints.as_deref_mut() {
                Some(adj) => {
                    let mut local = vec![PointAdjoint::default(); n];
                    total += w * obj.combine(ev, Some(&mut local))?;
                    for (dst, src) in adj[*offset..offset + n].iter_mut().zip(local) {
                        dst.value += w * src.value;
                        dst.time += w * src.time;
                        dst.wlap += w * src.wlap;
                        if let Some(g) = &src.grad {
                            dst.add_grad(g, *w);
                        }
                    }
                }
                None => total += w * obj.combine(ev, None)?,
            }
        }
        Ok(total)
    }
}

pub(crate) fn require_scheme(bundle: &RolloutBundle, ok: bool, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Incompatible(format!("{what} cannot use a {:?} bundle", bundle.scheme)))
    }
}

/// Objective of the method part alone.
pub fn method_objective(
    method: &Method,
    problem: &PdeProblem,
    bundle: &RolloutBundle,
) -> Result<Box<dyn Objective + Send + Sync>> {
    method.validate()?;
    Ok(match *method {
        Method::Em => Box::new(EmFamily::new(problem, bundle, Aggregate::SquaredMean(1))?),
        Method::MultishotEm { m } => Box::new(EmFamily::new(problem, bundle, Aggregate::SquaredMean(m))?),
        Method::Unem { m1, m2 } => Box::new(EmFamily::new(problem, bundle, Aggregate::GroupProduct(m1, m2))?),
        Method::Shotgun { m, tau } => Box::new(ShotgunFamily::new(problem, bundle, Aggregate::SquaredMean(m), tau)?),
        Method::Unshotgun { m1, m2, tau } => {
            Box::new(ShotgunFamily::new(problem, bundle, Aggregate::GroupProduct(m1, m2), tau)?)
        }
        Method::Heun => Box::new(HeunObjective::new(problem, bundle)?),
        Method::Fspinns => Box::new(FsPinnsObjective::new(problem, bundle)?),
    })
}

/// Method loss plus `λ_T` times the terminal penalty when soft.
pub fn total_objective(spec: &LossSpec, problem: &PdeProblem, bundle: &RolloutBundle) -> Result<SumObjective> {
    spec.validate()?;
    let mut parts = vec![(method_objective(&spec.method, problem, bundle)?, 1.0)];
    if let TerminalMode::Soft { weight } = spec.constraint {
        if weight != 0.0 {
            parts.push((Box::new(TerminalObjective::new(problem, bundle)?) as Box<_>, weight));
        }
    }
    Ok(SumObjective::new(parts))
}

pub fn total_loss(spec: &LossSpec, field: &dyn Field, problem: &PdeProblem, bundle: &RolloutBundle) -> Result<f64> {
    objective_value(&total_objective(spec, problem, bundle)?, field)
}

pub fn loss_em(field: &dyn Field, problem: &PdeProblem, bundle: &RolloutBundle) -> Result<f64> {
    objective_value(&EmFamily::new(problem, bundle, Aggregate::SquaredMean(1))?, field)
}

pub fn loss_multishot_em(field: &dyn Field, problem: &PdeProblem, bundle: &RolloutBundle, m: usize) -> Result<f64> {
    objective_value(&EmFamily::new(problem, bundle, Aggregate::SquaredMean(m))?, field)
}

pub fn loss_unem(field: &dyn Field, problem: &PdeProblem, bundle: &RolloutBundle, m1: usize, m2: usize) -> Result<f64> {
    objective_value(&EmFamily::new(problem, bundle, Aggregate::GroupProduct(m1, m2))?, field)
}

pub fn loss_shotgun(field: &dyn Field, problem: &PdeProblem, bundle: &RolloutBundle, m: usize, tau: f64) -> Result<f64> {
    objective_value(&ShotgunFamily::new(problem, bundle, Aggregate::SquaredMean(m), tau)?, field)
}

pub fn loss_unshotgun(
    field: &dyn Field,
    problem: &PdeProblem,
    bundle: &RolloutBundle,
    m1: usize,
    m2: usize,
    tau: f64,
) -> Result<f64> {
    objective_value(&ShotgunFamily::new(problem, bundle, Aggregate::GroupProduct(m1, m2), tau)?, field)
}

pub fn loss_heun(field: &dyn Field, problem: &PdeProblem, bundle: &RolloutBundle) -> Result<f64> {
    objective_value(&HeunObjective::new(problem, bundle)?, field)
}

pub fn loss_fs_pinns(field: &dyn Field, problem: &PdeProblem, bundle: &RolloutBundle) -> Result<f64> {
    objective_value(&FsPinnsObjective::new(problem, bundle)?, field)
}

/// Terminal penalty. Refuses hard-constrained fields, for which it is identically zero.
pub fn loss_terminal(field: &dyn Field, hard: bool, problem: &PdeProblem, bundle: &RolloutBundle) -> Result<f64> {
    if hard {
        return Err(Error::Incompatible("terminal loss requested under a hard constraint".into()));
    }
    objective_value(&TerminalObjective::new(problem, bundle)?, field)
}
