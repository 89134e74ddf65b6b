use super::{Dynamics, Matrix, Vector};
use crate::error::{Error, Result};

fn zero_jacobian(d: usize) -> Vec<Matrix> {
    (0..d).map(|_| Matrix::zeros(d, d)).collect()
}

/// `∂t u + Δu = ‖∇u‖²`, `g(x) = ln(½(1 + ‖x‖²))`.
#[derive(Clone, Copy, Debug)]
pub struct Hjb;

impl Dynamics for Hjb {
    fn drift(&self, _t: f64, x: &Vector) -> Vector {
        Vector::zeros(x.len())
    }

    fn diffusion(&self, _t: f64, x: &Vector, _y: Option<f64>) -> Result<Matrix> {
        Ok(Matrix::identity(x.len(), x.len()) * std::f64::consts::SQRT_2)
    }

    fn diffusion_jacobian(&self, _t: f64, x: &Vector, _y: Option<f64>, _z: Option<&Vector>) -> Result<Vec<Matrix>> {
        Ok(zero_jacobian(x.len()))
    }

    fn stratonovich_correction(&self, _t: f64, x: &Vector, _y: Option<f64>, _z: Option<&Vector>) -> Result<Vector> {
        Ok(Vector::zeros(x.len()))
    }

    fn phi(&self, _t: f64, _x: &Vector, _y: f64, z: &Vector) -> f64 {
        z.norm_squared()
    }

    fn phi_partials(&self, _t: f64, _x: &Vector, _y: f64, z: &Vector) -> (f64, Vector) {
        (0.0, z * 2.0)
    }

    fn terminal(&self, x: &Vector) -> f64 {
        (0.5 * (1.0 + x.norm_squared())).ln()
    }

    fn terminal_grad(&self, x: &Vector) -> Vector {
        x * (2.0 / (1.0 + x.norm_squared()))
    }

    fn terminal_hessian(&self, x: &Vector) -> Matrix {
        let q = 1.0 + x.norm_squared();
        let d = x.len();
        Matrix::identity(d, d) * (2.0 / q) - (x * x.transpose()) * (4.0 / (q * q))
    }
}

/// `σ = α diag(x)`, `φ = r(y − z·x)`, `g = ‖x‖²`.
#[derive(Clone, Copy, Debug)]
pub struct BlackScholesBarenblatt {
    pub alpha: f64,
    pub r: f64,
    pub t_end: f64,
}

impl Dynamics for BlackScholesBarenblatt {
    fn drift(&self, _t: f64, x: &Vector) -> Vector {
        Vector::zeros(x.len())
    }

    fn diffusion(&self, _t: f64, x: &Vector, _y: Option<f64>) -> Result<Matrix> {
        Ok(Matrix::from_diagonal(&(x * self.alpha)))
    }

    fn diffusion_jacobian(&self, _t: f64, x: &Vector, _y: Option<f64>, _z: Option<&Vector>) -> Result<Vec<Matrix>> {
        let d = x.len();
        Ok((0..d)
            .map(|i| {
                let mut m = Matrix::zeros(d, d);
                m[(i, i)] = self.alpha;
                m
            })
            .collect())
    }

    fn stratonovich_correction(&self, _t: f64, x: &Vector, _y: Option<f64>, _z: Option<&Vector>) -> Result<Vector> {
        Ok(x * (self.alpha * self.alpha))
    }

    fn phi(&self, _t: f64, x: &Vector, y: f64, z: &Vector) -> f64 {
        self.r * (y - z.dot(x))
    }

    fn phi_partials(&self, _t: f64, x: &Vector, _y: f64, _z: &Vector) -> (f64, Vector) {
        (self.r, x * -self.r)
    }

    fn terminal(&self, x: &Vector) -> f64 {
        x.norm_squared()
    }

    fn terminal_grad(&self, x: &Vector) -> Vector {
        x * 2.0
    }

    fn terminal_hessian(&self, x: &Vector) -> Matrix {
        Matrix::identity(x.len(), x.len()) * 2.0
    }

    fn exact(&self, t: f64, x: &Vector) -> Option<f64> {
        let rate = self.r + self.alpha * self.alpha;
        Some((rate * (self.t_end - t)).exp() * x.norm_squared())
    }
}

/// `∂t u + ½Δu = u³ − u`, `g = (2 + 0.4‖x‖²)⁻¹`.
#[derive(Clone, Copy, Debug)]
pub struct AllenCahn;

impl Dynamics for AllenCahn {
    fn drift(&self, _t: f64, x: &Vector) -> Vector {
        Vector::zeros(x.len())
    }

    fn diffusion(&self, _t: f64, x: &Vector, _y: Option<f64>) -> Result<Matrix> {
        Ok(Matrix::identity(x.len(), x.len()))
    }

    fn diffusion_jacobian(&self, _t: f64, x: &Vector, _y: Option<f64>, _z: Option<&Vector>) -> Result<Vec<Matrix>> {
        Ok(zero_jacobian(x.len()))
    }

    fn stratonovich_correction(&self, _t: f64, x: &Vector, _y: Option<f64>, _z: Option<&Vector>) -> Result<Vector> {
        Ok(Vector::zeros(x.len()))
    }

    fn phi(&self, _t: f64, _x: &Vector, y: f64, _z: &Vector) -> f64 {
        y * y * y - y
    }

    fn phi_partials(&self, _t: f64, x: &Vector, y: f64, _z: &Vector) -> (f64, Vector) {
        (3.0 * y * y - 1.0, Vector::zeros(x.len()))
    }

    fn terminal(&self, x: &Vector) -> f64 {
        1.0 / (2.0 + 0.4 * x.norm_squared())
    }

    fn terminal_grad(&self, x: &Vector) -> Vector {
        let q = 2.0 + 0.4 * x.norm_squared();
        x * (-0.8 / (q * q))
    }

    fn terminal_hessian(&self, x: &Vector) -> Matrix {
        let q = 2.0 + 0.4 * x.norm_squared();
        let d = x.len();
        Matrix::identity(d, d) * (-0.8 / (q * q)) + (x * x.transpose()) * (1.28 / (q * q * q))
    }
}

/// Fully-coupled problem with `σ = α u I` and `g = D Σ sin x_j`.
#[derive(Clone, Copy, Debug)]
pub struct BenderZhang {
    pub r: f64,
    pub alpha: f64,
    pub scale: f64,
    pub t_end: f64,
}

impl BenderZhang {
    fn sine_sum(&self, x: &Vector) -> f64 {
        self.scale * x.iter().map(|v| v.sin()).sum::<f64>()
    }
}

impl Dynamics for BenderZhang {
    fn drift(&self, _t: f64, x: &Vector) -> Vector {
        Vector::zeros(x.len())
    }

    fn diffusion(&self, _t: f64, x: &Vector, y: Option<f64>) -> Result<Matrix> {
        let y = y.ok_or_else(|| Error::MissingCoupling("BZ".into()))?;
        Ok(Matrix::identity(x.len(), x.len()) * (self.alpha * y))
    }

    fn diffusion_jacobian(&self, _t: f64, x: &Vector, _y: Option<f64>, z: Option<&Vector>) -> Result<Vec<Matrix>> {
        let z = z.ok_or_else(|| Error::MissingCoupling("BZ".into()))?;
        let d = x.len();
        Ok((0..d).map(|i| Matrix::identity(d, d) * (self.alpha * z[i])).collect())
    }

    fn stratonovich_correction(&self, _t: f64, _x: &Vector, y: Option<f64>, z: Option<&Vector>) -> Result<Vector> {
        let y = y.ok_or_else(|| Error::MissingCoupling("BZ".into()))?;
        let z = z.ok_or_else(|| Error::MissingCoupling("BZ".into()))?;
        Ok(z * (self.alpha * self.alpha * y))
    }

    fn phi(&self, t: f64, x: &Vector, y: f64, _z: &Vector) -> f64 {
        let s = self.sine_sum(x);
        self.r * y - 0.5 * (-3.0 * self.r * (self.t_end - t)).exp() * self.alpha * self.alpha * s * s * s
    }

    fn phi_partials(&self, _t: f64, x: &Vector, _y: f64, _z: &Vector) -> (f64, Vector) {
        (self.r, Vector::zeros(x.len()))
    }

    fn terminal(&self, x: &Vector) -> f64 {
        self.sine_sum(x)
    }

    fn terminal_grad(&self, x: &Vector) -> Vector {
        x.map(|v| self.scale * v.cos())
    }

    fn terminal_hessian(&self, x: &Vector) -> Matrix {
        Matrix::from_diagonal(&x.map(|v| -self.scale * v.sin()))
    }

    fn exact(&self, t: f64, x: &Vector) -> Option<f64> {
        Some((-self.r * (self.t_end - t)).exp() * self.sine_sum(x))
    }

    fn fully_coupled(&self) -> bool {
        true
    }
}

/// Jump-diffusion problem with drift `½εx`, diffusion `τI` and solution `‖x‖²/d`.
///
/// The jump part lives in the stepping schemes; `φ` here is the right-hand side.
#[derive(Clone, Copy, Debug)]
pub struct Pide {
    pub spec: super::JumpSpec,
    pub d: usize,
}

impl Dynamics for Pide {
    fn drift(&self, _t: f64, x: &Vector) -> Vector {
        x * (0.5 * self.spec.epsilon)
    }

    fn diffusion(&self, _t: f64, x: &Vector, _y: Option<f64>) -> Result<Matrix> {
        Ok(Matrix::identity(x.len(), x.len()) * self.spec.tau_diff)
    }

    fn diffusion_jacobian(&self, _t: f64, x: &Vector, _y: Option<f64>, _z: Option<&Vector>) -> Result<Vec<Matrix>> {
        Ok(zero_jacobian(x.len()))
    }

    fn stratonovich_correction(&self, _t: f64, x: &Vector, _y: Option<f64>, _z: Option<&Vector>) -> Result<Vector> {
        Ok(Vector::zeros(x.len()))
    }

    fn phi(&self, _t: f64, x: &Vector, _y: f64, _z: &Vector) -> f64 {
        let s = &self.spec;
        s.lambda * (s.mu_phi * s.mu_phi + s.sigma_phi * s.sigma_phi)
            + s.tau_diff * s.tau_diff
            + s.epsilon / self.d as f64 * x.norm_squared()
    }

    fn phi_partials(&self, _t: f64, x: &Vector, _y: f64, _z: &Vector) -> (f64, Vector) {
        (0.0, Vector::zeros(x.len()))
    }

    fn terminal(&self, x: &Vector) -> f64 {
        x.norm_squared() / self.d as f64
    }

    fn terminal_grad(&self, x: &Vector) -> Vector {
        x * (2.0 / self.d as f64)
    }

    fn terminal_hessian(&self, x: &Vector) -> Matrix {
        Matrix::identity(x.len(), x.len()) * (2.0 / self.d as f64)
    }

    fn exact(&self, _t: f64, x: &Vector) -> Option<f64> {
        Some(x.norm_squared() / self.d as f64)
    }
}
