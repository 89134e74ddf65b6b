//! Gaussian quadratic-form moments and the estimator-variance comparison.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{loss_samples, par_chunks, LabSetup, LossKind, ABS_FLOOR};
use crate::error::{invalid, Result};
use crate::problems::{Matrix, Vector};
use crate::stochastics::{KeyedRng, StreamTag};

/// `[Tr H, Tr H², Tr H³, Tr H⁴]`.
pub fn trace_powers(h: &Matrix) -> [f64; 4] {
    let h2 = h * h;
    let h3 = &h2 * h;
    [h.trace(), h2.trace(), h3.trace(), (&h2 * &h2).trace()]
}

/// Symmetric matrix with standard normal entries, seeded.
pub fn random_symmetric(d: usize, seed: u64) -> Matrix {
    let v = KeyedRng::new(seed).normal_vector(StreamTag::BiasLab, [u64::MAX, 0, 0], d * d, 1.0);
    let a = Matrix::from_fn(d, d, |i, j| v[i * d + j]);
    (&a + a.transpose()) * 0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub k: u32,
    pub empirical: f64,
    pub stderr: f64,
    pub analytic: f64,
    pub pass: bool,
}

/// Raw moments `E[X^k]`, `k = 1..4`, of `X = ξᵀHξ − Tr H` against
/// `0, 2T₂, 8T₃, 48T₄ + 12T₂²`.
pub fn moment_check(h: &Matrix, n_samples: usize, seed: u64) -> Result<Vec<MomentReport>> {
    if !h.is_square() || (h - h.transpose()).amax() > 1e-12 * (1.0 + h.amax()) {
        return Err(invalid("moment_check needs a symmetric matrix"));
    }
    if n_samples < 2 {
        return Err(invalid("moment_check needs at least 2 samples"));
    }
    let d = h.nrows();
    let [t1, t2, t3, t4] = trace_powers(h);
    let rng = KeyedRng::new(seed);
    let sums = par_chunks(n_samples, |c, count| {
        let mut stream = rng.stream(StreamTag::BiasLab, [c as u64, 100, 0]);
        let mut s = [0.0f64; 8];
        let mut xi = Vector::zeros(d);
        for _ in 0..count {
            for v in xi.iter_mut() {
                *v = StandardNormal.sample(&mut stream);
            }
            let x = xi.dot(&(h * &xi)) - t1;
            let mut p = 1.0;
            for v in s.iter_mut() {
                p *= x;
                *v += p;
            }
        }
        Ok(s)
    })?;
    let mut total = [0.0f64; 8];
    for s in sums {
        for (t, v) in total.iter_mut().zip(s) {
            *t += v;
        }
    }
    let n = n_samples as f64;
    let analytic = [0.0, 2.0 * t2, 8.0 * t3, 48.0 * t4 + 12.0 * t2 * t2];
    Ok((0..4)
        .map(|i| {
            let m = total[i] / n;
            let m2 = total[2 * i + 1] / n;
            let stderr = ((m2 - m * m).max(0.0) / n).sqrt();
            let pass = (m - analytic[i]).abs() <= 3.0 * stderr + ABS_FLOOR * (1.0 + analytic[i].abs());
            MomentReport { k: i as u32 + 1, empirical: m, stderr, analytic: analytic[i], pass }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceCondition {
    pub alpha: f64,
    pub beta: f64,
    /// `4 / (3M + βM⁴)`.
    pub threshold: f64,
    pub admissible: bool,
}

/// `α = 2/M − 1/(2M₁) − 1/(2M₂)`, `β = 1/(2M²) − 1/(4M₁M₂)`; admissible iff
/// `β > 0` and `α ≥ 4/(3M + βM⁴)`.
pub fn variance_condition(m: usize, m1: usize, m2: usize) -> Result<VarianceCondition> {
    if m == 0 || m1 == 0 || m2 == 0 {
        return Err(invalid("shot counts must be >= 1"));
    }
    let (m, m1, m2) = (m as f64, m1 as f64, m2 as f64);
    let alpha = 2.0 / m - 1.0 / (2.0 * m1) - 1.0 / (2.0 * m2);
    let beta = 1.0 / (2.0 * m * m) - 1.0 / (4.0 * m1 * m2);
    let threshold = 4.0 / (3.0 * m + beta * m.powi(4));
    Ok(VarianceCondition { alpha, beta, threshold, admissible: beta > 0.0 && alpha >= threshold })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub variance: f64,
    pub stderr: f64,
}

impl VarianceEstimate {
    fn from_samples(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let m2 = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let m4 = v.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        VarianceEstimate { variance: m2 * n / (n - 1.0).max(1.0), stderr: ((m4 - m2 * m2).max(0.0) / n).sqrt() }
    }
}

/// `b − a` with the combined standard error of two independent estimates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub diff: f64,
    pub combined_stderr: f64,
}

impl Comparison {
    fn new(a: &VarianceEstimate, b: &VarianceEstimate) -> Self {
        Comparison { diff: b.variance - a.variance, combined_stderr: a.stderr.hypot(b.stderr) }
    }

    /// `a < b` by more than three combined standard errors.
    pub fn strictly_below(&self) -> bool {
        self.diff > 3.0 * self.combined_stderr
    }

    /// `a ≤ b` is not contradicted at three combined standard errors.
    pub fn not_above(&self) -> bool {
        self.diff >= -3.0 * self.combined_stderr - ABS_FLOOR
    }

    /// `|a − b|` within three combined standard errors.
    pub fn equal(&self) -> bool {
        self.diff.abs() <= 3.0 * self.combined_stderr + ABS_FLOOR
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceOrdering {
    pub condition: VarianceCondition,
    pub uem: VarianceEstimate,
    pub sg: VarianceEstimate,
    pub sem: VarianceEstimate,
    pub em: VarianceEstimate,
    pub uem_vs_sg: Comparison,
    pub sg_vs_sem: Comparison,
    pub sem_vs_em: Comparison,
    pub n_outer: usize,
}

/// Sample variances of the single-point, single-step estimators over
/// `n_outer` independent realizations each. Inadmissible triples are
/// reported, not refused.
#[allow(clippy::too_many_arguments)]
pub fn variance_ordering_estimate(
    setup: &LabSetup,
    m: usize,
    m1: usize,
    m2: usize,
    dt: f64,
    tau: f64,
    n_outer: usize,
    seed: u64,
) -> Result<VarianceOrdering> {
    let condition = variance_condition(m, m1, m2)?;
    if n_outer < 100 {
        return Err(invalid("variance_ordering_estimate needs at least 100 realizations"));
    }
    let est = |kind: LossKind, h: f64| -> Result<VarianceEstimate> {
        let v: Vec<f64> = loss_samples(kind, setup, h, n_outer, seed)?.into_iter().map(|s| s.0).collect();
        Ok(VarianceEstimate::from_samples(&v))
    };
    let uem = est(LossKind::UnEm { m1, m2 }, dt)?;
    let sg = est(LossKind::Shotgun { m }, tau)?;
    let sem = est(LossKind::MultiShot { m }, dt)?;
    let em = est(LossKind::Em, dt)?;
    Ok(VarianceOrdering {
        condition,
        uem_vs_sg: Comparison::new(&uem, &sg),
        sg_vs_sem: Comparison::new(&sg, &sem),
        sem_vs_em: Comparison::new(&sem, &em),
        uem,
        sg,
        sem,
        em,
        n_outer,
    })
}
