//! One-step forward maps.

use super::noise::JumpDraw;
use crate::error::{Error, Result};
use crate::problems::{PdeProblem, Vector};
use crate::surrogate::Field;

/// Frozen `(u, ∇u)` used inside the coefficients of fully-coupled problems.
#[derive(Clone, Debug, PartialEq)]
pub struct Coupling {
    pub y: f64,
    pub z: Vector,
}

impl Coupling {
    pub fn from_field(field: &dyn Field, t: f64, x: &Vector) -> Result<Self> {
        let (y, z) = field.value_and_gradient(t, x)?;
        Ok(Coupling { y, z })
    }
}

fn parts(c: Option<&Coupling>) -> (Option<f64>, Option<&Vector>) {
    match c {
        Some(c) => (Some(c.y), Some(&c.z)),
        None => (None, None),
    }
}

/// `x + μ(t, x) dt + σ(t, x, y) dW`.
pub fn em_forward_step(problem: &PdeProblem, t: f64, x: &Vector, dt: f64, dw: &Vector, y: Option<f64>) -> Result<Vector> {
    if !(dt > 0.0) {
        return Err(crate::error::invalid("dt must be positive"));
    }
    em_increment(problem, t, x, dt, dw, y).map(|inc| x + inc)
}

pub(crate) fn em_increment(problem: &PdeProblem, t: f64, x: &Vector, dt: f64, dw: &Vector, y: Option<f64>) -> Result<Vector> {
    let sigma = problem.sigma(t, x, y)?;
    let mut inc = sigma * dw;
    inc.axpy(dt, &problem.mu(t, x), 1.0);
    Ok(inc)
}

/// Drift with the Itô–Stratonovich correction, `μ − ½ Σ_i (∂_i σ) σᵀ e_i`.
pub fn heun_drift(problem: &PdeProblem, t: f64, x: &Vector, c: Option<&Coupling>) -> Result<Vector> {
    let (y, z) = parts(c);
    let kappa = problem.stratonovich_correction(t, x, y, z)?;
    let mut mu = problem.mu(t, x);
    mu.axpy(-0.5, &kappa, 1.0);
    Ok(mu)
}

fn heun_increment(problem: &PdeProblem, t: f64, x: &Vector, dt: f64, dw: &Vector, c: Option<&Coupling>) -> Result<Vector> {
    let sigma = problem.sigma(t, x, c.map(|c| c.y))?;
    let mut inc = sigma * dw;
    inc.axpy(dt, &heun_drift(problem, t, x, c)?, 1.0);
    Ok(inc)
}

/// Predictor `x̄ = x + μᴴ(t, x) dt + σ(t, x) dW`.
pub fn heun_predictor(problem: &PdeProblem, t: f64, x: &Vector, dt: f64, dw: &Vector, c: Option<&Coupling>) -> Result<Vector> {
    Ok(x + heun_increment(problem, t, x, dt, dw, c)?)
}

/// Corrector: average of the increments at `(t, x)` and `(t + dt, x̄)`.
pub fn heun_corrector(
    problem: &PdeProblem,
    t: f64,
    x: &Vector,
    x_bar: &Vector,
    dt: f64,
    dw: &Vector,
    c: Option<&Coupling>,
    c_bar: Option<&Coupling>,
) -> Result<Vector> {
    let a = heun_increment(problem, t, x, dt, dw, c)?;
    let b = heun_increment(problem, t + dt, x_bar, dt, dw, c_bar)?;
    Ok(x + (a + b) * 0.5)
}

/// Returns `(x̄, x_next)`. Fully-coupled problems read `(u, ∇u)` from `field`
/// at both `(t, x)` and `(t + dt, x̄)`.
pub fn heun_forward_step(
    problem: &PdeProblem,
    t: f64,
    x: &Vector,
    dt: f64,
    dw: &Vector,
    field: Option<&dyn Field>,
) -> Result<(Vector, Vector)> {
    if !(dt > 0.0) {
        return Err(crate::error::invalid("dt must be positive"));
    }
    let coupled = problem.fully_coupled();
    let c = match (coupled, field) {
        (true, Some(f)) => Some(Coupling::from_field(f, t, x)?),
        (true, None) => return Err(Error::MissingCoupling(problem.name.clone())),
        _ => None,
    };
    let x_bar = heun_predictor(problem, t, x, dt, dw, c.as_ref())?;
    let c_bar = match (coupled, field) {
        (true, Some(f)) => Some(Coupling::from_field(f, t + dt, &x_bar)?),
        _ => None,
    };
    let x_next = heun_corrector(problem, t, x, &x_bar, dt, dw, c.as_ref(), c_bar.as_ref())?;
    Ok((x_bar, x_next))
}

/// Compensated jump-diffusion step:
/// `x + μ dt + σ dW + (Σ z_k − λ μ_φ dt) 𝟙`.
pub fn jump_forward_step(
    problem: &PdeProblem,
    t: f64,
    x: &Vector,
    dt: f64,
    dw: &Vector,
    jump: &JumpDraw,
) -> Result<(Vector, JumpDraw)> {
    let spec = problem
        .jump_spec
        .ok_or_else(|| Error::MissingJumpSpec(problem.name.clone()))?;
    let mut next = em_forward_step(problem, t, x, dt, dw, None)?;
    let shift = jump.total() - spec.lambda * spec.mu_phi * dt;
    next.add_scalar_mut(shift);
    Ok((next, jump.clone()))
}
