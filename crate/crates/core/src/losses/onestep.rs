//! Pointwise one-step errors.

use crate::error::{invalid, Result};
use crate::problems::{PdeProblem, Vector};
use crate::stochastics::{em_forward_step, heun_forward_step, Coupling};
use crate::surrogate::{Field, PointQuery};

/// Divisor applied to a one-step difference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Normalization {
    /// Raw difference, as used by the training losses.
    #[default]
    Raw,
    /// Difference divided by `dt`.
    PerStep,
}

impl Normalization {
    fn apply(self, e: f64, dt: f64) -> f64 {
        match self {
            Normalization::Raw => e,
            Normalization::PerStep => e / dt,
        }
    }
}

fn coupling_y(field: &dyn Field, problem: &PdeProblem, t: f64, x: &Vector) -> Result<Option<f64>> {
    if problem.fully_coupled() {
        Ok(Some(field.value(t, x)?))
    } else {
        Ok(None)
    }
}

/// `u(t+dt, x_next) − [u + φ dt + ∇uᵀσ dW](t, x)`.
#[allow(clippy::too_many_arguments)]
pub fn err_em(
    field: &dyn Field,
    problem: &PdeProblem,
    t: f64,
    x: &Vector,
    x_next: &Vector,
    dt: f64,
    dw: &Vector,
    norm: Normalization,
) -> Result<f64> {
    let y_c = coupling_y(field, problem, t, x)?;
    let expect = em_forward_step(problem, t, x, dt, dw, y_c)?;
    let tol = 1e-9 * (1.0 + expect.amax());
    if x_next.len() != expect.len() || (x_next - &expect).amax() > tol {
        return Err(invalid("x_next is not the EM step of x under dW"));
    }
    let (y, z) = field.value_and_gradient(t, x)?;
    let sigma = problem.sigma(t, x, y_c)?;
    let y_next = field.value(t + dt, x_next)?;
    let pred = y + problem.phi(t, x, y, &z) * dt + z.dot(&(sigma * dw));
    Ok(norm.apply(y_next - pred, dt))
}

/// `(u(t+τ, x⁺) + u(t+τ, x⁻) − 2u(t, x)) / (2τ) − φ(t, x)`.
pub fn err_shotgun(
    field: &dyn Field,
    problem: &PdeProblem,
    t: f64,
    x: &Vector,
    x_plus: &Vector,
    x_minus: &Vector,
    tau: f64,
) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(invalid("tau must be positive"));
    }
    let (y, z) = field.value_and_gradient(t, x)?;
    let yp = field.value(t + tau, x_plus)?;
    let ym = field.value(t + tau, x_minus)?;
    Ok((yp + ym - 2.0 * y) / (2.0 * tau) - problem.phi(t, x, y, &z))
}

/// Heun error after stepping `x` with the predictor–corrector pair under `dW`.
pub fn err_heun(
    field: &dyn Field,
    problem: &PdeProblem,
    t: f64,
    x: &Vector,
    dt: f64,
    dw: &Vector,
    norm: Normalization,
) -> Result<f64> {
    let (x_bar, x_next) = heun_forward_step(problem, t, x, dt, dw, Some(field))?;
    let half_increment = |s: f64, p: &Vector| -> Result<f64> {
        let c = if problem.fully_coupled() { Some(Coupling::from_field(field, s, p)?) } else { None };
        let sigma = problem.sigma(s, p, c.as_ref().map(|c| c.y))?;
        let kappa = problem.stratonovich_correction(s, p, c.as_ref().map(|c| c.y), c.as_ref().map(|c| &c.z))?;
        let q = PointQuery { t: s, x: p.clone(), grad: true, time: false, sigma: Some(sigma.clone()) };
        let e = field.evaluate(&[q])?.remove(0);
        let z = e.grad()?;
        let phi_h = problem.phi(s, p, e.value, z) - 0.5 * e.wlap()? - 0.5 * z.dot(&kappa);
        Ok(0.5 * (phi_h * dt + z.dot(&(sigma * dw))))
    };
    let y = field.value(t, x)?;
    let y_next = field.value(t + dt, &x_next)?;
    let e = y_next - y - half_increment(t, x)? - half_increment(t + dt, &x_bar)?;
    Ok(norm.apply(e, dt))
}

/// Arithmetic mean of the shot errors.
pub fn shot_average(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(invalid("shot_average of an empty sequence"));
    }
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}
