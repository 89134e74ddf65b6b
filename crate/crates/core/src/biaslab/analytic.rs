//! Closed-form fields and the constant-coefficient test problem.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{check_dim, invalid, Result};
use crate::problems::{Dynamics, Matrix, PdeProblem, Vector};
use crate::surrogate::{validate_queries, Field, PointEval, PointQuery};

/// Spatial part `S(t, x)` of an analytic field.
#[derive(Clone, Debug, PartialEq)]
pub enum Family {
    /// `S = ½ xᵀHx + bᵀx`.
    Quadratic { h: Matrix, b: Vector },
    /// `S = amp Σ_j sin(k_j x_j + ω t)`.
    Trigonometric { amp: f64, omega: f64, k: Vector },
}

/// `u(t, x) = a t + c + e^{λ (t_ref − t)} S(t, x)` with exact derivatives.
#[derive(Debug)]
pub struct AnalyticSurrogate {
    pub family: Family,
    pub a: f64,
    pub c: f64,
    pub lambda: f64,
    pub t_ref: f64,
    d: usize,
    wlap_calls: AtomicU64,
}

impl Clone for AnalyticSurrogate {
    fn clone(&self) -> Self {
        AnalyticSurrogate {
            family: self.family.clone(),
            a: self.a,
            c: self.c,
            lambda: self.lambda,
            t_ref: self.t_ref,
            d: self.d,
            wlap_calls: AtomicU64::new(self.wlap_calls.load(Ordering::Relaxed)),
        }
    }
}

impl AnalyticSurrogate {
    fn build(family: Family, a: f64, c: f64) -> Result<Self> {
        let d = match &family {
            Family::Quadratic { h, b } => {
                if !h.is_square() {
                    return Err(invalid("H must be square"));
                }
                check_dim(h.nrows(), b.len())?;
                if (h - h.transpose()).amax() > 1e-12 * (1.0 + h.amax()) {
                    return Err(invalid("H must be symmetric"));
                }
                h.nrows()
            }
            Family::Trigonometric { k, .. } => k.len(),
        };
        if d == 0 {
            return Err(invalid("dimension must be positive"));
        }
        Ok(AnalyticSurrogate { family, a, c, lambda: 0.0, t_ref: 0.0, d, wlap_calls: AtomicU64::new(0) })
    }

    /// `a t + ½ xᵀHx + bᵀx + c`.
    pub fn quadratic(a: f64, h: Matrix, b: Vector, c: f64) -> Result<Self> {
        Self::build(Family::Quadratic { h, b }, a, c)
    }

    /// `a t + c + amp Σ_j sin(k_j x_j + ω t)`.
    pub fn trigonometric(a: f64, amp: f64, omega: f64, k: Vector, c: f64) -> Result<Self> {
        Self::build(Family::Trigonometric { amp, omega, k }, a, c)
    }

    /// Multiplies the spatial part by `e^{λ (t_ref − t)}`.
    pub fn with_time_factor(mut self, lambda: f64, t_ref: f64) -> Self {
        self.lambda = lambda;
        self.t_ref = t_ref;
        self
    }

    /// Closed-form BSB solution `e^{(r+α²)(T−t)} ‖x‖²`.
    pub fn bsb_exact(alpha: f64, r: f64, t_end: f64, d: usize) -> Result<Self> {
        Ok(Self::quadratic(0.0, Matrix::identity(d, d) * 2.0, Vector::zeros(d), 0.0)?
            .with_time_factor(r + alpha * alpha, t_end))
    }

    /// Closed-form BZ solution `e^{−r(T−t)} D Σ_j sin x_j`.
    pub fn bz_exact(r: f64, scale: f64, t_end: f64, d: usize) -> Result<Self> {
        Ok(Self::trigonometric(0.0, scale, 0.0, Vector::from_element(d, 1.0), 0.0)?.with_time_factor(-r, t_end))
    }

    /// Closed-form PIDE solution `‖x‖²/d`.
    pub fn pide_exact(d: usize) -> Result<Self> {
        Self::quadratic(0.0, Matrix::identity(d, d) * (2.0 / d as f64), Vector::zeros(d), 0.0)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    fn factor(&self, t: f64) -> f64 {
        if self.lambda == 0.0 {
            1.0
        } else {
            (self.lambda * (self.t_ref - t)).exp()
        }
    }

    fn spatial(&self, t: f64, x: &Vector) -> f64 {
        match &self.family {
            Family::Quadratic { h, b } => 0.5 * x.dot(&(h * x)) + b.dot(x),
            Family::Trigonometric { amp, omega, k } => {
                amp * k.iter().zip(x.iter()).map(|(kj, xj)| (kj * xj + omega * t).sin()).sum::<f64>()
            }
        }
    }

    pub fn eval_u(&self, t: f64, x: &Vector) -> f64 {
        self.a * t + self.c + self.factor(t) * self.spatial(t, x)
    }

    pub fn eval_ut(&self, t: f64, x: &Vector) -> f64 {
        let ds = match &self.family {
            Family::Quadratic { .. } => 0.0,
            Family::Trigonometric { amp, omega, k } => {
                amp * omega * k.iter().zip(x.iter()).map(|(kj, xj)| (kj * xj + omega * t).cos()).sum::<f64>()
            }
        };
        self.a + self.factor(t) * (ds - self.lambda * self.spatial(t, x))
    }

    pub fn eval_grad(&self, t: f64, x: &Vector) -> Vector {
        let g = match &self.family {
            Family::Quadratic { h, b } => h * x + b,
            Family::Trigonometric { amp, omega, k } => {
                Vector::from_fn(self.d, |j, _| amp * k[j] * (k[j] * x[j] + omega * t).cos())
            }
        };
        g * self.factor(t)
    }

    pub fn eval_hessian(&self, t: f64, x: &Vector) -> Matrix {
        let h = match &self.family {
            Family::Quadratic { h, .. } => h.clone(),
            Family::Trigonometric { amp, omega, k } => Matrix::from_diagonal(&Vector::from_fn(self.d, |j, _| {
                -amp * k[j] * k[j] * (k[j] * x[j] + omega * t).sin()
            })),
        };
        h * self.factor(t)
    }

    /// `σᵀ ∇²u σ` at `(t, x)`.
    pub fn weighted_hessian(&self, t: f64, x: &Vector, sigma: &Matrix) -> Matrix {
        sigma.transpose() * self.eval_hessian(t, x) * sigma
    }

    pub fn reset_wlap_calls(&self) {
        self.wlap_calls.store(0, Ordering::Relaxed);
    }
}

impl Field for AnalyticSurrogate {
    fn dim(&self) -> usize {
        self.d
    }

    fn evaluate(&self, queries: &[PointQuery]) -> Result<Vec<PointEval>> {
        validate_queries(self.d, queries)?;
        Ok(queries
            .iter()
            .map(|q| {
                let wlap = q.sigma.as_ref().map(|s| {
                    self.wlap_calls.fetch_add(1, Ordering::Relaxed);
                    self.weighted_hessian(q.t, &q.x, s).trace()
                });
                PointEval {
                    value: self.eval_u(q.t, &q.x),
                    grad: q.grad.then(|| self.eval_grad(q.t, &q.x)),
                    time: q.time.then(|| self.eval_ut(q.t, &q.x)),
                    wlap,
                }
            })
            .collect())
    }

    fn wlap_calls(&self) -> u64 {
        self.wlap_calls.load(Ordering::Relaxed)
    }
}

/// `μ` and `σ` constant, `φ ≡ φ₀`, `g ≡ 0`.
#[derive(Clone, Debug)]
pub struct ConstantCoefficients {
    pub mu: Vector,
    pub sigma: Matrix,
    pub phi0: f64,
}

impl Dynamics for ConstantCoefficients {
    fn drift(&self, _t: f64, _x: &Vector) -> Vector {
        self.mu.clone()
    }

    fn diffusion(&self, _t: f64, _x: &Vector, _y: Option<f64>) -> Result<Matrix> {
        Ok(self.sigma.clone())
    }

    fn diffusion_jacobian(&self, _t: f64, x: &Vector, _y: Option<f64>, _z: Option<&Vector>) -> Result<Vec<Matrix>> {
        Ok(vec![Matrix::zeros(x.len(), x.len()); x.len()])
    }

    fn phi(&self, _t: f64, _x: &Vector, _y: f64, _z: &Vector) -> f64 {
        self.phi0
    }

    fn phi_partials(&self, _t: f64, x: &Vector, _y: f64, _z: &Vector) -> (f64, Vector) {
        (0.0, Vector::zeros(x.len()))
    }

    fn terminal(&self, _x: &Vector) -> f64 {
        0.0
    }

    fn terminal_grad(&self, x: &Vector) -> Vector {
        Vector::zeros(x.len())
    }

    fn terminal_hessian(&self, x: &Vector) -> Matrix {
        Matrix::zeros(x.len(), x.len())
    }
}

/// An analytic field, a problem and the point where one-step losses are studied.
#[derive(Clone, Debug)]
pub struct LabSetup {
    pub problem: PdeProblem,
    pub surrogate: AnalyticSurrogate,
    pub t: f64,
    pub x: Vector,
}

impl LabSetup {
    pub fn new(problem: PdeProblem, surrogate: AnalyticSurrogate, t: f64, x: Vector) -> Result<Self> {
        check_dim(problem.d, surrogate.dim())?;
        check_dim(problem.d, x.len())?;
        if !(0.0..problem.t_end).contains(&t) {
            return Err(invalid(format!("t = {t} must lie in [0, {})", problem.t_end)));
        }
        Ok(LabSetup { problem, surrogate, t, x })
    }

    /// `u = a t + ½ xᵀHx` at `x = 0` under `μ = 0`, constant `σ`, `φ ≡ 0`, with
    /// `a` chosen so that the PDE residual equals `residual`.
    pub fn quadratic(h: Matrix, sigma: Matrix, residual: f64) -> Result<Self> {
        let d = h.nrows();
        check_dim(d, sigma.nrows())?;
        let trace = (sigma.transpose() * &h * &sigma).trace();
        let surrogate = AnalyticSurrogate::quadratic(residual - 0.5 * trace, h, Vector::zeros(d), 0.0)?;
        let problem = constant_problem(Vector::zeros(d), sigma, 0.0)?;
        Self::new(problem, surrogate, 0.0, Vector::zeros(d))
    }

    /// `u = amp Σ sin(k_j x_j + ω t)` under `μ = 0`, `σ = s I`, `φ ≡ φ₀`.
    pub fn trigonometric(d: usize, amp: f64, omega: f64, s: f64, phi0: f64, x: Vector) -> Result<Self> {
        let k = Vector::from_fn(d, |j, _| 1.0 + 0.25 * j as f64);
        let surrogate = AnalyticSurrogate::trigonometric(0.0, amp, omega, k, 0.0)?;
        let problem = constant_problem(Vector::zeros(d), Matrix::identity(d, d) * s, phi0)?;
        Self::new(problem, surrogate, 0.1, x)
    }

    /// `σᵀ∇²uσ` at the study point.
    pub fn weighted_hessian(&self) -> Result<Matrix> {
        let y = self.problem.fully_coupled().then(|| self.surrogate.eval_u(self.t, &self.x));
        let sigma = self.problem.sigma(self.t, &self.x, y)?;
        Ok(self.surrogate.weighted_hessian(self.t, &self.x, &sigma))
    }

    /// `[L u − φ](t, x)`.
    pub fn residual(&self) -> Result<f64> {
        pde_residual(&self.surrogate, &self.problem, self.t, &self.x)
    }
}

/// Problem with constant coefficients on `[0, 1]`.
pub fn constant_problem(mu: Vector, sigma: Matrix, phi0: f64) -> Result<PdeProblem> {
    check_dim(mu.len(), sigma.nrows())?;
    check_dim(mu.len(), sigma.ncols())?;
    let x0 = Vector::zeros(mu.len());
    PdeProblem::custom("constant", 1.0, x0, Arc::new(ConstantCoefficients { mu, sigma, phi0 }))
}

/// `∂t u + μ·∇u + ½ Tr[σᵀ∇²uσ] − φ(t, x, u, ∇u)` for any field.
pub fn pde_residual(field: &dyn Field, problem: &PdeProblem, t: f64, x: &Vector) -> Result<f64> {
    let y = if problem.fully_coupled() { Some(field.value(t, x)?) } else { None };
    let sigma = problem.sigma(t, x, y)?;
    let q = PointQuery { t, x: x.clone(), grad: true, time: true, sigma: Some(sigma) };
    let e = field.evaluate(&[q])?.remove(0);
    let z = e.grad()?;
    Ok(e.time()? + problem.mu(t, x).dot(z) + 0.5 * e.wlap()? - problem.phi(t, x, e.value, z))
}
