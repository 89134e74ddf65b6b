//! Training-free Monte Carlo checks of the one-step loss expansions.
//!
//! Every estimate here is 64-bit, uses a [`LabSetup`] (analytic field, problem
//! and study point) and Δt-normalized one-step errors. Sampling runs over
//! fixed-size chunks with per-chunk streams, reduced in chunk order.

mod analytic;
mod suite;
mod theory;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::losses::{err_em, err_heun, err_shotgun, Aggregate, Normalization};
use crate::problems::{Matrix, Vector};
use crate::stochastics::{em_forward_step, KeyedRng, StreamTag};

pub use analytic::{constant_problem, pde_residual, AnalyticSurrogate, ConstantCoefficients, Family, LabSetup};
pub use suite::{run_suite, CheckRecord, Suite, SuiteParams};
pub use theory::{
    moment_check, random_symmetric, trace_powers, variance_condition, variance_ordering_estimate, Comparison,
    MomentReport, VarianceCondition, VarianceEstimate, VarianceOrdering,
};

pub(crate) const CHUNK: usize = 4096;

/// Smallest tolerance of any check, absorbing floating-point round-off.
pub const ABS_FLOOR: f64 = 1e-9;

/// Constant `C` of the remainder slack `C·h^p`, `p = ½`, for the EM-type
/// and Heun losses. Calibrated on the quadratic family, whose remainder is
/// zero up to round-off; the slack therefore stays below the statistical
/// tolerance of the default sample sizes.
pub const SLACK_EM: f64 = 0.25;
/// Same, `p = 1`, for the Shotgun losses.
pub const SLACK_SHOTGUN: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    Em,
    MultiShot { m: usize },
    Shotgun { m: usize },
    Heun,
    UnEm { m1: usize, m2: usize },
    UnShotgun { m1: usize, m2: usize },
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Em => "em",
            LossKind::MultiShot { .. } => "multi_shot",
            LossKind::Shotgun { .. } => "shotgun",
            LossKind::Heun => "heun",
            LossKind::UnEm { .. } => "un_em",
            LossKind::UnShotgun { .. } => "un_shotgun",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LossKind::MultiShot { m } | LossKind::Shotgun { m } => m >= 1,
            LossKind::UnEm { m1, m2 } | LossKind::UnShotgun { m1, m2 } => m1 >= 1 && m2 >= 1,
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("shot counts of {self:?} must be >= 1")))
        }
    }

    fn aggregate(&self) -> Aggregate {
        match *self {
            LossKind::Em | LossKind::Heun => Aggregate::SquaredMean(1),
            LossKind::MultiShot { m } | LossKind::Shotgun { m } => Aggregate::SquaredMean(m),
            LossKind::UnEm { m1, m2 } | LossKind::UnShotgun { m1, m2 } => Aggregate::GroupProduct(m1, m2),
        }
    }

    fn is_shotgun(&self) -> bool {
        matches!(self, LossKind::Shotgun { .. } | LossKind::UnShotgun { .. })
    }

    /// Coefficient of `½ Tr[(σᵀ∇²uσ)²]` in the leading expansion.
    pub fn bias_factor(&self) -> f64 {
        match *self {
            LossKind::Em => 1.0,
            LossKind::MultiShot { m } | LossKind::Shotgun { m } => 1.0 / m as f64,
            LossKind::Heun | LossKind::UnEm { .. } | LossKind::UnShotgun { .. } => 0.0,
        }
    }

    /// Slack `C·h^p` allowed on top of the statistical tolerance.
    pub fn slack(&self, h: f64) -> f64 {
        if self.is_shotgun() {
            SLACK_SHOTGUN * h
        } else {
            SLACK_EM * h.sqrt()
        }
    }

    fn salt(&self) -> u64 {
        match self {
            LossKind::Em => 1,
            LossKind::MultiShot { .. } => 2,
            LossKind::Shotgun { .. } => 3,
            LossKind::Heun => 4,
            LossKind::UnEm { .. } => 5,
            LossKind::UnShotgun { .. } => 6,
        }
    }
}

/// Residual² plus the kind's leading bias term, without the remainder.
pub fn predicted_loss(kind: LossKind, setup: &LabSetup) -> Result<f64> {
    kind.validate()?;
    let r = setup.residual()?;
    let hw = setup.weighted_hessian()?;
    Ok(r * r + kind.bias_factor() * 0.5 * (&hw * &hw).trace())
}

struct Context {
    r: f64,
    hw: Matrix,
    tr_hw: f64,
    sigma: Matrix,
    mu: Vector,
    y: Option<f64>,
}

impl Context {
    fn new(setup: &LabSetup) -> Result<Self> {
        let (t, x) = (setup.t, &setup.x);
        let y = setup.problem.fully_coupled().then(|| setup.surrogate.eval_u(t, x));
        let hw = setup.weighted_hessian()?;
        Ok(Context {
            r: setup.residual()?,
            tr_hw: hw.trace(),
            hw,
            sigma: setup.problem.sigma(t, x, y)?,
            mu: setup.problem.mu(t, x),
            y,
        })
    }
}

/// Δt-normalized error of one shot and its leading-order part `r + ½(ξᵀH_wξ − Tr H_w)`.
fn shot(kind: LossKind, setup: &LabSetup, ctx: &Context, h: f64, xi: &Vector) -> Result<(f64, f64)> {
    let (t, x, s) = (setup.t, &setup.x, &setup.surrogate);
    let dw = xi * h.sqrt();
    let leading = ctx.r + 0.5 * (xi.dot(&(&ctx.hw * xi)) - ctx.tr_hw);
    match kind {
        LossKind::Heun => Ok((err_heun(s, &setup.problem, t, x, h, &dw, Normalization::PerStep)?, ctx.r)),
        k if k.is_shotgun() => {
            let mut center = x.clone();
            center.axpy(h, &ctx.mu, 1.0);
            let step = &ctx.sigma * &dw;
            let e = err_shotgun(s, &setup.problem, t, x, &(&center + &step), &(&center - &step), h)?;
            Ok((e, leading))
        }
        _ => {
            let next = em_forward_step(&setup.problem, t, x, h, &dw, ctx.y)?;
            Ok((err_em(s, &setup.problem, t, x, &next, h, &dw, Normalization::PerStep)?, leading))
        }
    }
}

/// Per-sample `(loss, leading-order loss)` for one chunk.
fn sample_chunk(
    kind: LossKind,
    setup: &LabSetup,
    ctx: &Context,
    h: f64,
    seed: u64,
    chunk: usize,
    count: usize,
) -> Result<Vec<(f64, f64)>> {
    let d = setup.problem.d;
    let agg = kind.aggregate();
    let shots = agg.shots();
    let mut stream = KeyedRng::new(seed).stream(StreamTag::BiasLab, [chunk as u64, kind.salt(), 0]);
    let mut out = Vec::with_capacity(count);
    let (mut e, mut lead, mut w) = (Vec::with_capacity(shots), Vec::with_capacity(shots), Vec::new());
    for _ in 0..count {
        e.clear();
        lead.clear();
        for _ in 0..shots {
            let xi = Vector::from_fn(d, |_, _| StandardNormal.sample(&mut stream));
            let (ei, li) = shot(kind, setup, ctx, h, &xi)?;
            e.push(ei);
            lead.push(li);
        }
        out.push((agg.apply(&e, 1.0, &mut w), agg.apply(&lead, 1.0, &mut w)));
    }
    Ok(out)
}

pub(crate) fn par_chunks<T: Send>(n: usize, f: impl Fn(usize, usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| f(c, CHUNK.min(n - c * CHUNK)))
        .collect()
}

/// Per-sample `(loss, leading)` pairs in sample order.
pub(crate) fn loss_samples(kind: LossKind, setup: &LabSetup, h: f64, n: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    kind.validate()?;
    if !(h > 0.0) || setup.t + h > setup.problem.t_end {
        return Err(invalid(format!("step {h} must be positive and stay inside the horizon")));
    }
    let ctx = Context::new(setup)?;
    let chunks = par_chunks(n, |c, count| sample_chunk(kind, setup, &ctx, h, seed, c, count))?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Mean and standard error of a sample.
pub(crate) fn mean_stderr(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    /// Mean of `loss − leading-order loss` on the same draws.
    pub remainder: f64,
    pub remainder_stderr: f64,
    pub n_samples: usize,
}

/// MC estimate of the Δt-normalized one-step loss at the setup's point,
/// with step `h` (Δt, or τ for the Shotgun kinds).
pub fn mc_loss_estimate(kind: LossKind, setup: &LabSetup, h: f64, n_samples: usize, seed: u64) -> Result<McEstimate> {
    if n_samples < 100 {
        return Err(invalid("mc_loss_estimate needs at least 100 samples"));
    }
    let samples = loss_samples(kind, setup, h, n_samples, seed)?;
    let (mean, stderr) = mean_stderr(samples.iter().map(|s| s.0));
    let (remainder, remainder_stderr) = mean_stderr(samples.iter().map(|s| s.0 - s.1));
    Ok(McEstimate { mean, stderr, remainder, remainder_stderr, n_samples })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub kind: LossKind,
    pub t: f64,
    pub x: Vec<f64>,
    pub h: f64,
    pub mc_mean: f64,
    pub mc_stderr: f64,
    pub predicted: f64,
    pub slack: f64,
    pub n_samples: usize,
    pub pass: bool,
}

impl BiasReport {
    pub fn tolerance(&self) -> f64 {
        (3.0 * self.mc_stderr).max(self.slack) + ABS_FLOOR * (1.0 + self.predicted.abs())
    }
}

/// Compares the MC loss with [`predicted_loss`].
pub fn bias_check(kind: LossKind, setup: &LabSetup, h: f64, n_samples: usize, seed: u64) -> Result<BiasReport> {
    let est = mc_loss_estimate(kind, setup, h, n_samples, seed)?;
    let mut report = BiasReport {
        kind,
        t: setup.t,
        x: setup.x.iter().copied().collect(),
        h,
        mc_mean: est.mean,
        mc_stderr: est.stderr,
        predicted: predicted_loss(kind, setup)?,
        slack: kind.slack(h),
        n_samples,
        pass: false,
    };
    report.pass = (report.mc_mean - report.predicted).abs() <= report.tolerance();
    Ok(report)
}

/// Least-squares slope of `ln y` against `ln x`; `None` when some `y ≤ 0`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 || x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    Some(sxy / sxx)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingKind {
    MultiShot,
    Shotgun,
}

impl ScalingKind {
    pub fn with_m(self, m: usize) -> LossKind {
        match self {
            ScalingKind::MultiShot => LossKind::MultiShot { m },
            ScalingKind::Shotgun => LossKind::Shotgun { m },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingSweep {
    pub kind: ScalingKind,
    pub m: Vec<usize>,
    pub reports: Vec<BiasReport>,
    /// `mc_mean − residual²` per M.
    pub bias: Vec<f64>,
    /// Fitted slope of `ln bias` against `ln M`.
    pub slope: Option<f64>,
}

/// Bias against the shot count, residual subtracted.
pub fn bias_scaling_sweep(
    kind: ScalingKind,
    m_list: &[usize],
    setup: &LabSetup,
    h: f64,
    n_samples: usize,
    seed: u64,
) -> Result<ScalingSweep> {
    if m_list.len() < 3 {
        return Err(invalid("bias_scaling_sweep needs at least 3 values of M"));
    }
    let r = setup.residual()?;
    let reports = m_list
        .iter()
        .map(|&m| bias_check(kind.with_m(m), setup, h, n_samples, seed))
        .collect::<Result<Vec<_>>>()?;
    let bias: Vec<f64> = reports.iter().map(|rep| rep.mc_mean - r * r).collect();
    let ms: Vec<f64> = m_list.iter().map(|&m| m as f64).collect();
    let slope = log_log_slope(&ms, &bias);
    Ok(ScalingSweep { kind, m: m_list.to_vec(), reports, bias, slope })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemainderSweep {
    pub kind: LossKind,
    pub h: Vec<f64>,
    pub remainder: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Fitted slope of `ln |remainder|` against `ln h`.
    pub slope: Option<f64>,
}

/// Remainder `E[loss] − predicted` against the step size, estimated with the
/// leading-order loss on the same draws as a control variate.
pub fn remainder_sweep(kind: LossKind, setup: &LabSetup, hs: &[f64], n_samples: usize, seed: u64) -> Result<RemainderSweep> {
    if hs.len() < 2 {
        return Err(invalid("remainder_sweep needs at least 2 step sizes"));
    }
    let mut remainder = Vec::with_capacity(hs.len());
    let mut stderr = Vec::with_capacity(hs.len());
    for &h in hs {
        let est = mc_loss_estimate(kind, setup, h, n_samples, seed)?;
        remainder.push(est.remainder);
        stderr.push(est.remainder_stderr);
    }
    let abs: Vec<f64> = remainder.iter().map(|r| r.abs()).collect();
    let slope = log_log_slope(hs, &abs);
    Ok(RemainderSweep { kind, h: hs.to_vec(), remainder, stderr, slope })
}
