//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use bsde_core::biaslab::{
    bias_check, bias_scaling_sweep, moment_check, pde_residual, random_symmetric, run_suite, variance_condition,
    variance_ordering_estimate, AnalyticSurrogate, LabSetup, LossKind, ScalingKind, Suite, SuiteParams,
};
use bsde_core::losses::{method_objective, Method, TerminalMode};
use bsde_core::problems::{make_problem, Benchmark, Matrix, PdeProblem, Vector};
use bsde_core::stochastics::rollout;
use bsde_core::surrogate::{
    apply_hard_constraint, objective_value, param_gradient, Activation, Field, NetworkConfig, Objective, PointQuery,
    Precision, Surrogate,
};
use bsde_core::training::{train, Preset, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Writes the verdict past the test harness's output capture, then asserts it.
fn verdict(id: u32, title: &str, pass: bool, detail: String, start: Instant) {
    let line = format!(
        "{} criterion {id:>2} ({title}): {detail} [{:.1}s]\n",
        if pass { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "{}", line.trim_end());
}

fn problem(name: &str, d: usize, pairs: &[(&str, f64)]) -> PdeProblem {
    let overrides: BTreeMap<String, f64> = pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    make_problem(name, Some(d), &overrides).unwrap()
}

fn network(d: usize, width: usize, seed: u64) -> Surrogate {
    Surrogate::new(NetworkConfig {
        hidden_layers: 2,
        width,
        activation: Activation::Mish,
        input_dim: d + 1,
        init_seed: seed,
        precision: Precision::F64,
    })
    .unwrap()
}

fn quadratic_setup(residual: f64) -> LabSetup {
    LabSetup::quadratic(Matrix::identity(2, 2), Matrix::identity(2, 2), residual).unwrap()
}

#[test]
fn criterion_01_moment_identities() {
    let start = Instant::now();
    let mut matrices = vec![("I1".to_string(), Matrix::identity(1, 1))];
    for k in 0..3u64 {
        matrices.push((format!("random{k}"), random_symmetric(3, 100 + k)));
    }
    let mut pass = true;
    let mut worst: f64 = 0.0;
    for (k, (_, h)) in matrices.iter().enumerate() {
        for report in moment_check(h, 10_000_000, 7 + k as u64).unwrap() {
            pass &= report.pass;
            worst = worst.max((report.empirical - report.analytic).abs() / report.stderr);
        }
    }
    pass &= start.elapsed().as_secs_f64() <= 60.0;
    verdict(1, "moment identities", pass, format!("4 matrices x 4 moments, worst |z| = {worst:.2}"), start);
}

#[test]
fn criterion_02_em_bias() {
    let start = Instant::now();
    let r = bias_check(LossKind::Em, &quadratic_setup(0.0), 1e-3, 1_000_000, 1).unwrap();
    let pass = r.pass && (r.predicted - 1.0).abs() < 1e-12 && start.elapsed().as_secs_f64() <= 60.0;
    let detail = format!("mean {:.5} ± {:.5}, predicted {}, tolerance {:.5}", r.mc_mean, r.mc_stderr, r.predicted, r.tolerance());
    verdict(2, "EM bias", pass, detail, start);
}

#[test]
fn criterion_03_unem_unbiased() {
    let start = Instant::now();
    let kind = LossKind::UnEm { m1: 5, m2: 5 };
    let zero = bias_check(kind, &quadratic_setup(0.0), 1e-3, 1_000_000, 2).unwrap();
    let res = bias_check(kind, &quadratic_setup(0.3), 1e-3, 1_000_000, 3).unwrap();
    let pass = zero.pass && res.pass && zero.predicted == 0.0 && (res.predicted - 0.09).abs() < 1e-12;
    let detail = format!(
        "r=0: {:.5} ± {:.5}; r=0.3: {:.5} ± {:.5} (target 0.09)",
        zero.mc_mean, zero.mc_stderr, res.mc_mean, res.mc_stderr
    );
    verdict(3, "Un-EM unbiasedness", pass, detail, start);
}

#[test]
fn criterion_04_heun_unbiased() {
    let start = Instant::now();
    let setup = quadratic_setup(0.0);
    let r = bias_check(LossKind::Heun, &setup, 1e-3, 1_000_000, 4).unwrap();

    // count weighted-Laplacian calls of the training loss on a rollout
    let p = problem("BSB", 2, &[]);
    let (batch, steps) = (3, 4);
    let bundle = rollout(&p, steps, Method::Heun.scheme(&p).unwrap(), None, batch, 0).unwrap();
    let s = network(2, 8, 0);
    s.reset_wlap_calls();
    let obj = method_objective(&Method::Heun, &p, &bundle).unwrap();
    objective_value(obj.as_ref(), &s).unwrap();
    let calls = s.wlap_calls();
    let pass = r.pass && r.predicted == 0.0 && calls == (2 * batch * steps) as u64;
    let detail = format!(
        "mean {:.5} ± {:.5}; {calls} weighted-Laplacian calls for {batch} x {steps} steps",
        r.mc_mean, r.mc_stderr
    );
    verdict(4, "Heun unbiasedness", pass, detail, start);
}

#[test]
fn criterion_05_one_over_m_scaling() {
    let start = Instant::now();
    let setup = quadratic_setup(0.0);
    let ms = [1, 2, 5, 10];
    let mut pass = true;
    let mut parts = Vec::new();
    for (kind, h) in [(ScalingKind::MultiShot, 1e-3), (ScalingKind::Shotgun, 1e-3)] {
        let sweep = bias_scaling_sweep(kind, &ms, &setup, h, 400_000, 5).unwrap();
        let slope = sweep.slope.unwrap_or(f64::NAN);
        pass &= (slope + 1.0).abs() <= 0.1;
        parts.push(format!("{kind:?} slope {slope:.4}"));
    }
    verdict(5, "1/M bias scaling", pass, parts.join(", "), start);
}

#[test]
fn criterion_06_variance_ordering() {
    let start = Instant::now();
    let cond = variance_condition(1, 1, 2).unwrap();
    let setup = quadratic_setup(0.0);
    let v = variance_ordering_estimate(&setup, 1, 1, 2, 1e-4, 1e-4, 1_000_000, 6).unwrap();
    let pass = cond.admissible
        && (cond.alpha - 1.25).abs() < 1e-15
        && (cond.threshold - 4.0 / 3.375).abs() < 1e-15
        && v.uem_vs_sg.strictly_below()
        && v.sg_vs_sem.equal()
        && v.sem_vs_em.not_above()
        && start.elapsed().as_secs_f64() <= 300.0;
    let detail = format!(
        "alpha {} >= {:.4}; V: UEM {:.4} < SG {:.4} = SEM {:.4} <= EM {:.4}",
        cond.alpha, cond.threshold, v.uem.variance, v.sg.variance, v.sem.variance, v.em.variance
    );
    verdict(6, "variance ordering", pass, detail, start);
}

fn relative(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den.max(1e-300)).sqrt()
}

fn fd_param_error(obj: &dyn Objective, s: &Surrogate) -> f64 {
    let (_, grad) = param_gradient(obj, s).unwrap();
    let p0 = s.params();
    let mut probe = s.clone();
    let h = 1e-6;
    let fd: Vec<f64> = (0..p0.len())
        .map(|k| {
            let mut p = p0.clone();
            p[k] += h;
            probe.set_params(&p).unwrap();
            let up = objective_value(obj, &probe).unwrap();
            p[k] -= 2.0 * h;
            probe.set_params(&p).unwrap();
            let down = objective_value(obj, &probe).unwrap();
            (up - down) / (2.0 * h)
        })
        .collect();
    relative(&grad, &fd)
}

#[test]
fn criterion_07_derivatives() {
    let start = Instant::now();
    let p = problem("BSB", 2, &[]);
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let (mut worst_grad, mut worst_wlap) = (0.0f64, 0.0f64);
    let mut worst = BTreeMap::new();
    let mut pass = true;
    for k in 0..5u64 {
        let s = network(2, 8, 700 + k);
        let t = rng.gen_range(0.0..1.0);
        let x = Vector::from_fn(2, |_, _| rng.gen_range(-1.5..1.5));
        let sigma = Matrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0));
        let u = |t: f64, x: &Vector| s.value(t, x).unwrap();

        let grad = s.gradient(t, &x).unwrap();
        let h = 1e-6;
        let fd: Vec<f64> = (0..2)
            .map(|i| {
                let mut a = x.clone();
                let mut b = x.clone();
                a[i] += h;
                b[i] -= h;
                (u(t, &a) - u(t, &b)) / (2.0 * h)
            })
            .collect();
        worst_grad = worst_grad.max(relative(grad.as_slice(), &fd));

        let h2 = 1e-4;
        let mut hess = Matrix::zeros(2, 2);
        for i in 0..2 {
            for j in 0..2 {
                let shifted = |si: f64, sj: f64| {
                    let mut y = x.clone();
                    y[i] += si * h2;
                    y[j] += sj * h2;
                    u(t, &y)
                };
                hess[(i, j)] = (shifted(1.0, 1.0) - shifted(1.0, -1.0) - shifted(-1.0, 1.0) + shifted(-1.0, -1.0))
                    / (4.0 * h2 * h2);
            }
        }
        let fd_wlap = (sigma.transpose() * hess * &sigma).trace();
        let wlap = s.weighted_laplacian(t, &x, &sigma).unwrap();
        worst_wlap = worst_wlap.max((wlap - fd_wlap).abs() / fd_wlap.abs().max(1e-3));

        for (method, tol) in [(Method::Em, 1e-4), (Method::Unem { m1: 2, m2: 2 }, 1e-4), (Method::Heun, 1e-3)] {
            let bundle = rollout(&p, 2, method.scheme(&p).unwrap(), None, 2, k).unwrap();
            let obj = method_objective(&method, &p, &bundle).unwrap();
            let err = fd_param_error(obj.as_ref(), &s);
            pass &= err <= tol;
            let e = worst.entry(method.name()).or_insert(0.0f64);
            *e = e.max(err);
        }
    }
    pass &= worst_grad <= 1e-4 && worst_wlap <= 1e-4;
    let detail = format!("grad {worst_grad:.1e}, weighted Laplacian {worst_wlap:.1e}, param gradients {worst:?}");
    verdict(7, "derivative correctness", pass, detail, start);
}

#[test]
fn criterion_08_hard_constraint() {
    let start = Instant::now();
    let p = problem("BSB", 3, &[]);
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    let mut pass = true;
    for k in 0..100u64 {
        let raw = network(3, rng.gen_range(2..12), 800 + k);
        let s = apply_hard_constraint(raw, &p).unwrap();
        let x = Vector::from_fn(3, |_, _| rng.gen_range(-3.0..3.0));
        let e = &s.evaluate(&[PointQuery::with_grad(p.t_end, x.clone())]).unwrap()[0];
        pass &= e.value - p.g(&x) == 0.0;
        pass &= (e.grad.as_ref().unwrap() - p.grad_g(&x)).norm() == 0.0;
    }
    verdict(8, "hard-constraint identities", pass, "100 random (x, network) pairs exact".into(), start);
}

/// `u_t + μ·∇u + ½Tr[σᵀ∇²uσ] − φ` from central differences of `u`.
fn fd_residual(p: &PdeProblem, t: f64, x: &Vector) -> f64 {
    let u = |t: f64, x: &Vector| p.exact(t, x).unwrap();
    let d = x.len();
    let (h1, h2) = (1e-5, 1e-3);
    let u0 = u(t, x);
    let u_t = (u(t + h1, x) - u(t - h1, x)) / (2.0 * h1);
    let mut grad = Vector::zeros(d);
    let mut hess = Matrix::zeros(d, d);
    for i in 0..d {
        let mut a = x.clone();
        let mut b = x.clone();
        a[i] += h1;
        b[i] -= h1;
        grad[i] = (u(t, &a) - u(t, &b)) / (2.0 * h1);
        for j in 0..d {
            let shifted = |si: f64, sj: f64| {
                let mut y = x.clone();
                y[i] += si * h2;
                y[j] += sj * h2;
                u(t, &y)
            };
            hess[(i, j)] = (shifted(1.0, 1.0) - shifted(1.0, -1.0) - shifted(-1.0, 1.0) + shifted(-1.0, -1.0))
                / (4.0 * h2 * h2);
        }
    }
    let sigma = p.sigma(t, x, Some(u0)).unwrap();
    u_t + p.mu(t, x).dot(&grad) + 0.5 * (sigma.transpose() * hess * &sigma).trace() - p.phi(t, x, u0, &grad)
}

#[test]
fn criterion_09_exact_residuals() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let mut worst: BTreeMap<String, f64> = BTreeMap::new();
    for (name, d) in [("BSB", 10), ("BZ", 10)] {
        let p = problem(name, d, &[]);
        for _ in 0..100 {
            let t = rng.gen_range(0.01..0.99);
            let x = Vector::from_fn(d, |_, _| rng.gen_range(-1.5..1.5));
            let e = worst.entry(name.to_string()).or_insert(0.0);
            *e = e.max(fd_residual(&p, t, &x).abs());
        }
    }
    // PIDE: for u = ‖x‖²/d the jump integrand is ½ z² 𝟙ᵀ∇²u 𝟙, whose ν-integral is λ(μ_φ² + σ_φ²)·½𝟙ᵀ∇²u𝟙.
    for (d, pairs) in [(100, vec![]), (4, vec![("lambda", 3.0), ("mu_phi", 0.2), ("sigma_phi", 0.3)])] {
        let p = problem("PIDE", d, &pairs);
        let spec = p.jump_spec.unwrap();
        let u = AnalyticSurrogate::pide_exact(d).unwrap();
        let ones = Vector::from_element(d, 1.0);
        for _ in 0..100 {
            let t = rng.gen_range(0.0..1.0);
            let x = Vector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0));
            let jump = spec.lambda
                * (spec.mu_phi * spec.mu_phi + spec.sigma_phi * spec.sigma_phi)
                * 0.5
                * ones.dot(&(u.eval_hessian(t, &x) * &ones));
            let res = pde_residual(&u, &p, t, &x).unwrap() + jump;
            let e = worst.entry(format!("PIDE d={d}")).or_insert(0.0);
            *e = e.max(res.abs());
        }
    }
    let pass = worst.iter().all(|(k, v)| if k.starts_with("PIDE") { *v < 1e-12 } else { *v < 1e-4 });
    verdict(9, "exact-solution residuals", pass, format!("max |residual| {worst:?}"), start);
}

#[test]
fn criterion_10_desk_training_ordering() {
    let start = Instant::now();
    let p = make_problem("BSB", Some(Preset::Desk.dimension(Benchmark::Bsb)), &BTreeMap::new()).unwrap();
    let config = |method: Method, seed: u64| {
        let mut c = TrainConfig::preset(Preset::Desk, Benchmark::Bsb, method, TerminalMode::Hard);
        c.seed = seed;
        c.eval_every = c.iterations;
        c
    };
    let unem = Method::Unem { m1: 5, m2: 5 };
    let (mut rl2_em, mut rl2_unem, mut sec_unem) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..3 {
        let (_, r) = train(&p, &config(Method::Em, seed)).unwrap();
        rl2_em.push(r.final_rl2.unwrap());
        let (_, r) = train(&p, &config(unem, seed)).unwrap();
        rl2_unem.push(r.final_rl2.unwrap());
        sec_unem.push(r.seconds_per_iteration().unwrap());
    }
    let mut heun = config(Method::Heun, 0);
    heun.iterations = 100;
    let (_, r) = train(&p, &heun).unwrap();
    let sec_heun = r.seconds_per_iteration().unwrap();

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (m_em, m_unem) = (mean(&rl2_em), mean(&rl2_unem));
    let ratio = sec_heun / mean(&sec_unem);
    let ordering = m_unem < m_em;
    let timing = ratio >= 3.0;
    let pass = ordering && timing && start.elapsed().as_secs_f64() <= 1800.0;
    let detail = format!(
        "mean RL2 Un-EM {m_unem:.4} vs EM {m_em:.4} ({}); Heun/Un-EM time per iteration {ratio:.2}x ({}); \
         per-seed EM {rl2_em:.4?}, Un-EM {rl2_unem:.4?}",
        if ordering { "ok" } else { "violated" },
        if timing { "ok" } else { "below 3x" },
    );
    verdict(10, "desk training ordering", pass, detail, start);
}

#[test]
fn criterion_11_debiasing_wrapper() {
    let start = Instant::now();
    let setup = quadratic_setup(0.3);
    let m = 5;
    let tau = 1e-3;
    let un = bias_check(LossKind::UnShotgun { m1: m, m2: m }, &setup, tau, 1_000_000, 11).unwrap();
    let sg = bias_check(LossKind::Shotgun { m }, &setup, tau, 1_000_000, 12).unwrap();
    let excess = sg.mc_mean - un.mc_mean;
    let predicted_excess = 0.5 * 2.0 / m as f64;
    let excess_tol = 3.0 * un.mc_stderr.hypot(sg.mc_stderr) + sg.slack + un.slack;
    let pass = un.pass
        && (un.predicted - 0.09).abs() < 1e-12
        && sg.pass
        && (excess - predicted_excess).abs() <= excess_tol
        && excess > 3.0 * un.mc_stderr.hypot(sg.mc_stderr);
    let detail = format!(
        "Un-Shotgun {:.5} ± {:.5} (r² = 0.09); Shotgun {:.5} ± {:.5}; excess {excess:.5} vs ½Tr[H²]/M = {predicted_excess}",
        un.mc_mean, un.mc_stderr, sg.mc_mean, sg.mc_stderr
    );
    verdict(11, "debiasing wrapper", pass, detail, start);
}

#[test]
fn criterion_12_determinism() {
    let start = Instant::now();
    let params = SuiteParams {
        samples: 20_000,
        sweep_samples: 5_000,
        moment_samples: 100_000,
        variance_outer: 20_000,
        seed: 12,
        ..SuiteParams::default()
    };
    let a = serde_json::to_string(&run_suite(Suite::All, &params).unwrap()).unwrap();
    let b = serde_json::to_string(&run_suite(Suite::All, &params).unwrap()).unwrap();

    let p = problem("BSB", 2, &[]);
    let mut c = TrainConfig::preset(
        Preset::Desk,
        Benchmark::Bsb,
        Method::Unem { m1: 2, m2: 3 },
        TerminalMode::Soft { weight: 1.0 },
    );
    c.iterations = 20;
    c.n_steps = 10;
    c.eval_every = 5;
    c.seed = 12;
    let (s1, r1) = train(&p, &c).unwrap();
    let (s2, r2) = train(&p, &c).unwrap();
    let run_a = serde_json::to_string(&r1.without_timing()).unwrap();
    let run_b = serde_json::to_string(&r2.without_timing()).unwrap();
    let pass = a == b && run_a == run_b && s1.params() == s2.params();
    let detail = format!("biaslab suite ({} bytes) and training record ({} bytes) identical", a.len(), run_a.len());
    verdict(12, "determinism", pass, detail, start);
}
