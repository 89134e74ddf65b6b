//! PDE/FBSDE problem definitions and the benchmark catalog.
//!
//! A problem is the semilinear terminal-value PDE
//! `∂t u + μ·∇u + ½ Tr[σᵀ ∇²u σ] = φ(t, x, u, ∇u)`, `u(T, x) = g(x)`,
//! together with its initial state `x0` and optional reference data.

mod benchmarks;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::stochastics::rng::{KeyedRng, StreamTag};

pub use benchmarks::{AllenCahn, BlackScholesBarenblatt, BenderZhang, Hjb, Pide};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Coefficients of a problem. Implementations must be pure.
pub trait Dynamics: Send + Sync + fmt::Debug {
    fn drift(&self, t: f64, x: &Vector) -> Vector;

    /// `y` is the current solution value; only fully-coupled problems read it.
    fn diffusion(&self, t: f64, x: &Vector, y: Option<f64>) -> Result<Matrix>;

    /// The matrices `∂σ/∂x_i`, `i = 0..d`. Fully-coupled problems need `y` and `z = ∇u`.
    fn diffusion_jacobian(
        &self,
        t: f64,
        x: &Vector,
        y: Option<f64>,
        z: Option<&Vector>,
    ) -> Result<Vec<Matrix>>;

    /// `κ = Σ_i (∂σ/∂x_i) σᵀ e_i`, the vector entering the Itô–Stratonovich corrections.
    fn stratonovich_correction(
        &self,
        t: f64,
        x: &Vector,
        y: Option<f64>,
        z: Option<&Vector>,
    ) -> Result<Vector> {
        let sigma = self.diffusion(t, x, y)?;
        let jac = self.diffusion_jacobian(t, x, y, z)?;
        let mut kappa = Vector::zeros(x.len());
        for (i, ji) in jac.iter().enumerate() {
            let row = sigma.row(i).transpose();
            kappa += ji * row;
        }
        Ok(kappa)
    }

    fn phi(&self, t: f64, x: &Vector, y: f64, z: &Vector) -> f64;

    /// `(∂φ/∂y, ∂φ/∂z)`.
    fn phi_partials(&self, t: f64, x: &Vector, y: f64, z: &Vector) -> (f64, Vector);

    fn terminal(&self, x: &Vector) -> f64;
    fn terminal_grad(&self, x: &Vector) -> Vector;
    fn terminal_hessian(&self, x: &Vector) -> Matrix;

    fn exact(&self, _t: f64, _x: &Vector) -> Option<f64> {
        None
    }

    fn fully_coupled(&self) -> bool {
        false
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Benchmark {
    #[serde(rename = "HJB")]
    Hjb,
    #[serde(rename = "BSB")]
    Bsb,
    #[serde(rename = "AC")]
    Ac,
    #[serde(rename = "BZ")]
    Bz,
    #[serde(rename = "PIDE")]
    Pide,
}

impl Benchmark {
    pub const ALL: [Benchmark; 5] = [
        Benchmark::Hjb,
        Benchmark::Bsb,
        Benchmark::Ac,
        Benchmark::Bz,
        Benchmark::Pide,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Benchmark::Hjb => "HJB",
            Benchmark::Bsb => "BSB",
            Benchmark::Ac => "AC",
            Benchmark::Bz => "BZ",
            Benchmark::Pide => "PIDE",
        }
    }

    pub fn default_dim(self) -> usize {
        match self {
            Benchmark::Ac => 20,
            _ => 100,
        }
    }

    /// Names accepted by [`make_problem`] in its override map.
    pub fn parameter_names(self) -> &'static [&'static str] {
        match self {
            Benchmark::Hjb => &["t_end"],
            Benchmark::Bsb => &["t_end", "alpha", "r"],
            Benchmark::Ac => &["t_end"],
            Benchmark::Bz => &["t_end", "alpha", "r", "D"],
            Benchmark::Pide => &["t_end", "epsilon", "tau", "lambda", "mu_phi", "sigma_phi"],
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Benchmark::Hjb => "Hamilton-Jacobi-Bellman, sigma = sqrt(2) I, phi = |z|^2; Monte Carlo reference",
            Benchmark::Bsb => "Black-Scholes-Barenblatt, sigma = alpha diag(x); exact solution",
            Benchmark::Ac => "Allen-Cahn, phi = y^3 - y; reference u(0, x0) = 0.30879 at d = 20",
            Benchmark::Bz => "fully-coupled FBSDE, sigma = alpha u I; exact solution",
            Benchmark::Pide => "jump-diffusion PIDE with compensated Poisson jumps; exact solution |x|^2 / d",
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Benchmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Benchmark::ALL
            .into_iter()
            .find(|b| b.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownBenchmark(s.to_string()))
    }
}

/// Compound-Poisson jump data of the PIDE benchmark.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpSpec {
    pub lambda: f64,
    pub mu_phi: f64,
    pub sigma_phi: f64,
    pub tau_diff: f64,
    pub epsilon: f64,
}

impl JumpSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !(self.sigma_phi >= 0.0) {
            return Err(invalid("jump spec needs lambda >= 0 and sigma_phi >= 0"));
        }
        Ok(())
    }
}

/// An immutable, shareable problem instance.
#[derive(Clone, Debug)]
pub struct PdeProblem {
    pub name: String,
    pub benchmark: Option<Benchmark>,
    pub d: usize,
    pub t_end: f64,
    pub x0: Vector,
    pub reference_u0: Option<f64>,
    pub jump_spec: Option<JumpSpec>,
    dynamics: Arc<dyn Dynamics>,
}

impl PdeProblem {
    /// Builds a problem from user-supplied coefficients.
    pub fn custom(
        name: impl Into<String>,
        t_end: f64,
        x0: Vector,
        dynamics: Arc<dyn Dynamics>,
    ) -> Result<Self> {
        if x0.is_empty() {
            return Err(invalid("problem dimension must be positive"));
        }
        if !(t_end > 0.0) {
            return Err(invalid("t_end must be positive"));
        }
        Ok(PdeProblem {
            name: name.into(),
            benchmark: None,
            d: x0.len(),
            t_end,
            x0,
            reference_u0: None,
            jump_spec: None,
            dynamics,
        })
    }

    pub fn dynamics(&self) -> &Arc<dyn Dynamics> {
        &self.dynamics
    }

    pub fn mu(&self, t: f64, x: &Vector) -> Vector {
        self.dynamics.drift(t, x)
    }

    pub fn sigma(&self, t: f64, x: &Vector, y: Option<f64>) -> Result<Matrix> {
        self.dynamics.diffusion(t, x, y)
    }

    pub fn sigma_jacobian(
        &self,
        t: f64,
        x: &Vector,
        y: Option<f64>,
        z: Option<&Vector>,
    ) -> Result<Vec<Matrix>> {
        self.dynamics.diffusion_jacobian(t, x, y, z)
    }

    pub fn stratonovich_correction(
        &self,
        t: f64,
        x: &Vector,
        y: Option<f64>,
        z: Option<&Vector>,
    ) -> Result<Vector> {
        self.dynamics.stratonovich_correction(t, x, y, z)
    }

    pub fn phi(&self, t: f64, x: &Vector, y: f64, z: &Vector) -> f64 {
        self.dynamics.phi(t, x, y, z)
    }

    pub fn phi_partials(&self, t: f64, x: &Vector, y: f64, z: &Vector) -> (f64, Vector) {
        self.dynamics.phi_partials(t, x, y, z)
    }

    pub fn g(&self, x: &Vector) -> f64 {
        self.dynamics.terminal(x)
    }

    pub fn grad_g(&self, x: &Vector) -> Vector {
        self.dynamics.terminal_grad(x)
    }

    pub fn hess_g(&self, x: &Vector) -> Matrix {
        self.dynamics.terminal_hessian(x)
    }

    pub fn exact(&self, t: f64, x: &Vector) -> Option<f64> {
        self.dynamics.exact(t, x)
    }

    pub fn has_exact(&self) -> bool {
        self.dynamics.exact(self.t_end, &self.x0).is_some()
    }

    pub fn fully_coupled(&self) -> bool {
        self.dynamics.fully_coupled()
    }
}

/// Builds a benchmark with its default parameters, applying the overrides.
pub fn make_problem(
    name: &str,
    d_override: Option<usize>,
    overrides: &BTreeMap<String, f64>,
) -> Result<PdeProblem> {
    let bench: Benchmark = name.parse()?;
    for (key, value) in overrides {
        if !bench.parameter_names().contains(&key.as_str()) {
            return Err(Error::UnknownParameter {
                benchmark: bench.to_string(),
                param: key.clone(),
            });
        }
        let nonneg = matches!(key.as_str(), "epsilon" | "lambda" | "mu_phi" | "sigma_phi");
        let ok = value.is_finite() && if nonneg { *value >= 0.0 } else { *value > 0.0 };
        if !ok {
            return Err(invalid(format!("parameter {key} = {value} is out of range")));
        }
    }
    let d = d_override.unwrap_or(bench.default_dim());
    if d == 0 {
        return Err(invalid("dimension must be positive"));
    }
    let param = |key: &str, default: f64| overrides.get(key).copied().unwrap_or(default);

    let mut problem = match bench {
        Benchmark::Hjb => {
            let t_end = param("t_end", 1.0);
            PdeProblem::custom("HJB", t_end, Vector::zeros(d), Arc::new(Hjb))?
        }
        Benchmark::Bsb => {
            let t_end = param("t_end", 1.0);
            let dynamics = BlackScholesBarenblatt {
                alpha: param("alpha", 0.4),
                r: param("r", 0.05),
                t_end,
            };
            let x0 = Vector::from_fn(d, |i, _| if i % 2 == 0 { 1.0 } else { 0.5 });
            PdeProblem::custom("BSB", t_end, x0, Arc::new(dynamics))?
        }
        Benchmark::Ac => {
            let t_end = param("t_end", 0.3);
            let mut p = PdeProblem::custom("AC", t_end, Vector::zeros(d), Arc::new(AllenCahn))?;
            if d == 20 && t_end == 0.3 {
                p.reference_u0 = Some(0.30879);
            }
            p
        }
        Benchmark::Bz => {
            let t_end = param("t_end", 1.0);
            let dynamics = BenderZhang {
                r: param("r", 0.1),
                alpha: param("alpha", 0.3),
                scale: param("D", 0.1),
                t_end,
            };
            let x0 = Vector::from_element(d, std::f64::consts::FRAC_PI_2);
            PdeProblem::custom("BZ", t_end, x0, Arc::new(dynamics))?
        }
        Benchmark::Pide => {
            let t_end = param("t_end", 1.0);
            let spec = JumpSpec {
                lambda: param("lambda", 0.01),
                mu_phi: param("mu_phi", 0.01),
                sigma_phi: param("sigma_phi", 0.01),
                tau_diff: param("tau", 0.1),
                epsilon: param("epsilon", 0.1),
            };
            spec.validate()?;
            let dynamics = Pide { spec, d };
            let mut p = PdeProblem::custom("PIDE", t_end, Vector::from_element(d, 1.0), Arc::new(dynamics))?;
            p.jump_spec = Some(spec);
            p
        }
    };
    problem.benchmark = Some(bench);
    Ok(problem)
}

/// Closed-form solution, or [`Error::NoAnalyticSolution`].
pub fn exact_solution(problem: &PdeProblem, t: f64, x: &Vector) -> Result<f64> {
    if !(0.0..=problem.t_end).contains(&t) {
        return Err(invalid(format!("t = {t} outside [0, {}]", problem.t_end)));
    }
    crate::error::check_dim(problem.d, x.len())?;
    problem
        .exact(t, x)
        .ok_or_else(|| Error::NoAnalyticSolution(problem.name.clone()))
}

const HJB_CHUNK: usize = 4096;

/// Monte Carlo estimate of the HJB solution `-ln E[exp(-g(x + √2 W_{T-t}))]`.
///
/// Returns `(mean, stderr)` where the standard error is propagated through the
/// logarithm by the delta method.
pub fn hjb_reference_mc(
    problem: &PdeProblem,
    x: &Vector,
    t: f64,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if problem.benchmark != Some(Benchmark::Hjb) {
        return Err(invalid("hjb_reference_mc requires the HJB problem"));
    }
    if n_samples == 0 {
        return Err(invalid("n_samples must be at least 1"));
    }
    crate::error::check_dim(problem.d, x.len())?;
    let horizon = problem.t_end - t;
    if horizon < 0.0 {
        return Err(invalid("t exceeds t_end"));
    }
    if horizon == 0.0 {
        return Ok((problem.g(x), 0.0));
    }
    let scale = (2.0 * horizon).sqrt();
    let rng = KeyedRng::new(seed);
    let d = problem.d;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut point = Vector::zeros(d);
    for chunk in 0..n_samples.div_ceil(HJB_CHUNK) {
        let mut stream = rng.stream(StreamTag::Reference, [chunk as u64, 0, 0]);
        let count = HJB_CHUNK.min(n_samples - chunk * HJB_CHUNK);
        for _ in 0..count {
            for j in 0..d {
                let xi: f64 = StandardNormal.sample(&mut stream);
                point[j] = x[j] + scale * xi;
            }
            let v = (-problem.g(&point)).exp();
            sum += v;
            sum_sq += v * v;
        }
    }
    let n = n_samples as f64;
    let m = sum / n;
    let var = if n_samples > 1 {
        ((sum_sq - n * m * m) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    let se_m = (var / n).sqrt();
    Ok((-m.ln(), se_m / m))
}
