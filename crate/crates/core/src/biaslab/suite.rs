//! Named groups of checks with a flat, serializable report.

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    bias_check, bias_scaling_sweep, moment_check, random_symmetric, variance_ordering_estimate, BiasReport, LabSetup,
    LossKind, ScalingKind,
};
use crate::error::{invalid, Error, Result};
use crate::problems::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Bias,
    Moments,
    Variance,
    All,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bias" => Ok(Suite::Bias),
            "moments" => Ok(Suite::Moments),
            "variance" => Ok(Suite::Variance),
            "all" => Ok(Suite::All),
            other => Err(invalid(format!("unknown suite `{other}` (expected bias, moments, variance or all)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteParams {
    pub samples: usize,
    pub sweep_samples: usize,
    pub moment_samples: usize,
    pub variance_outer: usize,
    pub dt: f64,
    pub variance_dt: f64,
    pub seed: u64,
}

impl Default for SuiteParams {
    fn default() -> Self {
        SuiteParams {
            samples: 1_000_000,
            sweep_samples: 200_000,
            moment_samples: 10_000_000,
            variance_outer: 1_000_000,
            dt: 1e-3,
            variance_dt: 1e-4,
            seed: 0,
        }
    }
}

/// One line of a suite report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub check: String,
    pub params: serde_json::Value,
    pub mc_mean: f64,
    pub stderr: f64,
    pub predicted: f64,
    pub pass: bool,
}

impl CheckRecord {
    fn from_bias(check: &str, r: &BiasReport) -> Self {
        CheckRecord {
            check: check.into(),
            params: json!({ "loss": r.kind, "h": r.h, "n_samples": r.n_samples, "slack": r.slack }),
            mc_mean: r.mc_mean,
            stderr: r.mc_stderr,
            predicted: r.predicted,
            pass: r.pass,
        }
    }
}

fn identity_setup(residual: f64) -> Result<LabSetup> {
    LabSetup::quadratic(Matrix::identity(2, 2), Matrix::identity(2, 2), residual)
}

fn bias_suite(p: &SuiteParams, out: &mut Vec<CheckRecord>) -> Result<()> {
    let zero = identity_setup(0.0)?;
    let offset = identity_setup(0.3)?;
    let cases = [
        ("em_bias", LossKind::Em, &zero),
        ("un_em_unbiased", LossKind::UnEm { m1: 5, m2: 5 }, &zero),
        ("un_em_residual", LossKind::UnEm { m1: 5, m2: 5 }, &offset),
        ("heun_unbiased", LossKind::Heun, &zero),
        ("shotgun_bias", LossKind::Shotgun { m: 5 }, &offset),
        ("un_shotgun_unbiased", LossKind::UnShotgun { m1: 5, m2: 5 }, &offset),
    ];
    for (name, kind, setup) in cases {
        out.push(CheckRecord::from_bias(name, &bias_check(kind, setup, p.dt, p.samples, p.seed)?));
    }
    for kind in [ScalingKind::MultiShot, ScalingKind::Shotgun] {
        let sweep = bias_scaling_sweep(kind, &[1, 2, 5, 10], &zero, p.dt, p.sweep_samples, p.seed)?;
        let slope = sweep.slope.unwrap_or(f64::NAN);
        out.push(CheckRecord {
            check: format!("{}_bias_slope", sweep.kind.with_m(1).name()),
            params: json!({ "m": sweep.m, "bias": sweep.bias, "h": p.dt, "n_samples": p.sweep_samples }),
            mc_mean: slope,
            stderr: 0.0,
            predicted: -1.0,
            pass: (slope + 1.0).abs() <= 0.1,
        });
    }
    Ok(())
}

fn moments_suite(p: &SuiteParams, out: &mut Vec<CheckRecord>) -> Result<()> {
    let mut matrices = vec![("identity_1".to_string(), Matrix::identity(1, 1))];
    for k in 0..3u64 {
        matrices.push((format!("random_3x3_{k}"), random_symmetric(3, p.seed.wrapping_add(k))));
    }
    for (name, h) in matrices {
        for r in moment_check(&h, p.moment_samples, p.seed)? {
            out.push(CheckRecord {
                check: format!("moment_{}_{name}", r.k),
                params: json!({ "h": h.as_slice(), "n_samples": p.moment_samples }),
                mc_mean: r.empirical,
                stderr: r.stderr,
                predicted: r.analytic,
                pass: r.pass,
            });
        }
    }
    Ok(())
}

fn variance_suite(p: &SuiteParams, out: &mut Vec<CheckRecord>) -> Result<()> {
    let setup = identity_setup(0.3)?;
    let v = variance_ordering_estimate(&setup, 1, 1, 2, p.variance_dt, p.variance_dt, p.variance_outer, p.seed)?;
    let params = json!({ "m": 1, "m1": 1, "m2": 2, "h": p.variance_dt, "n_outer": v.n_outer });
    out.push(CheckRecord {
        check: "variance_condition".into(),
        params: json!({ "m": 1, "m1": 1, "m2": 2, "beta": v.condition.beta, "threshold": v.condition.threshold }),
        mc_mean: v.condition.alpha,
        stderr: 0.0,
        predicted: v.condition.threshold,
        pass: v.condition.admissible,
    });
    let rows = [
        ("variance_uem_below_sg", v.uem, v.sg, v.uem_vs_sg.strictly_below()),
        ("variance_sg_equals_sem", v.sg, v.sem, v.sg_vs_sem.equal()),
        ("variance_sem_not_above_em", v.sem, v.em, v.sem_vs_em.not_above()),
    ];
    for (name, a, b, pass) in rows {
        out.push(CheckRecord {
            check: name.into(),
            params: params.clone(),
            mc_mean: a.variance,
            stderr: a.stderr,
            predicted: b.variance,
            pass,
        });
    }
    Ok(())
}

/// Runs a suite; identical parameters give identical records.
pub fn run_suite(suite: Suite, params: &SuiteParams) -> Result<Vec<CheckRecord>> {
    let mut out = Vec::new();
    if matches!(suite, Suite::Bias | Suite::All) {
        bias_suite(params, &mut out)?;
    }
    if matches!(suite, Suite::Moments | Suite::All) {
        moments_suite(params, &mut out)?;
    }
    if matches!(suite, Suite::Variance | Suite::All) {
        variance_suite(params, &mut out)?;
    }
    Ok(out)
}
