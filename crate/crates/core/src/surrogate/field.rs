//! Batched point queries against a scalar field `u(t, x)`.

use crate::error::{invalid, Result};
use crate::problems::{Matrix, Vector};

/// One evaluation request. The value is always returned; the spatial gradient,
/// time derivative and weighted Laplacian `Tr[σᵀ ∇²u σ]` only on demand.
#[derive(Clone, Debug, PartialEq)]
pub struct PointQuery {
    pub t: f64,
    pub x: Vector,
    pub grad: bool,
    pub time: bool,
    pub sigma: Option<Matrix>,
}

impl PointQuery {
    pub fn value(t: f64, x: Vector) -> Self {
        PointQuery { t, x, grad: false, time: false, sigma: None }
    }

    pub fn with_grad(t: f64, x: Vector) -> Self {
        PointQuery { t, x, grad: true, time: false, sigma: None }
    }

    pub fn needs_first_order(&self) -> bool {
        self.grad || self.time || self.sigma.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct PointEval {
    pub value: f64,
    pub grad: Option<Vector>,
    pub time: Option<f64>,
    pub wlap: Option<f64>,
}

impl PointEval {
    pub fn grad(&self) -> Result<&Vector> {
        self.grad.as_ref().ok_or_else(|| invalid("gradient was not requested"))
    }

    pub fn time(&self) -> Result<f64> {
        self.time.ok_or_else(|| invalid("time derivative was not requested"))
    }

    pub fn wlap(&self) -> Result<f64> {
        self.wlap.ok_or_else(|| invalid("weighted Laplacian was not requested"))
    }
}

/// Sensitivity of an objective to each requested output of a query.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct PointAdjoint {
    pub value: f64,
    pub grad: Option<Vector>,
    pub time: f64,
    pub wlap: f64,
}

impl PointAdjoint {
    pub fn add_grad(&mut self, v: &Vector, scale: f64) {
        match self.grad.as_mut() {
            Some(g) => g.axpy(scale, v, 1.0),
            None => self.grad = Some(v * scale),
        }
    }
}

/// A scalar field with exact derivatives.
pub trait Field: Send + Sync {
    fn dim(&self) -> usize;

    fn evaluate(&self, queries: &[PointQuery]) -> Result<Vec<PointEval>>;

    /// Number of weighted-Laplacian evaluations served so far.
    fn wlap_calls(&self) -> u64 {
        0
    }

    fn value(&self, t: f64, x: &Vector) -> Result<f64> {
        Ok(self.evaluate(&[PointQuery::value(t, x.clone())])?[0].value)
    }

    fn gradient(&self, t: f64, x: &Vector) -> Result<Vector> {
        let mut out = self.evaluate(&[PointQuery::with_grad(t, x.clone())])?;
        out.pop()
            .and_then(|e| e.grad)
            .ok_or_else(|| invalid("field returned no gradient"))
    }

    fn value_and_gradient(&self, t: f64, x: &Vector) -> Result<(f64, Vector)> {
        let mut out = self.evaluate(&[PointQuery::with_grad(t, x.clone())])?;
        let e = out.pop().ok_or_else(|| invalid("empty evaluation"))?;
        Ok((e.value, e.grad.ok_or_else(|| invalid("field returned no gradient"))?))
    }

    fn time_derivative(&self, t: f64, x: &Vector) -> Result<f64> {
        let q = PointQuery { t, x: x.clone(), grad: false, time: true, sigma: None };
        self.evaluate(&[q])?[0].time()
    }

    fn weighted_laplacian(&self, t: f64, x: &Vector, sigma: &Matrix) -> Result<f64> {
        let q = PointQuery { t, x: x.clone(), grad: false, time: false, sigma: Some(sigma.clone()) };
        self.evaluate(&[q])?[0].wlap()
    }
}

pub(crate) fn validate_queries(d: usize, queries: &[PointQuery]) -> Result<()> {
    for q in queries {
        crate::error::check_dim(d, q.x.len())?;
        if !q.t.is_finite() || q.x.iter().any(|v| !v.is_finite()) {
            return Err(crate::error::Error::NonFinite(format!("query input at t = {}", q.t)));
        }
        if let Some(s) = &q.sigma {
            crate::error::check_dim(d, s.nrows())?;
            crate::error::check_dim(d, s.ncols())?;
        }
    }
    Ok(())
}
