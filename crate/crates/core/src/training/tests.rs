use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::biaslab::AnalyticSurrogate;
use crate::problems::{make_problem, Dynamics, Matrix, Vector};
use crate::surrogate::{PointEval, PointQuery};

fn problem(name: &str, d: usize) -> PdeProblem {
    make_problem(name, Some(d), &BTreeMap::new()).unwrap()
}

/// `u + c (inner − u)` for a reference field `u`.
struct Blend<'a> {
    exact: &'a dyn Field,
    inner: &'a dyn Field,
    c: f64,
}

impl Field for Blend<'_> {
    fn dim(&self) -> usize {
        self.exact.dim()
    }

    fn evaluate(&self, queries: &[PointQuery]) -> Result<Vec<PointEval>> {
        let a = self.exact.evaluate(queries)?;
        let b = self.inner.evaluate(queries)?;
        Ok(a.into_iter()
            .zip(b)
            .map(|(u, v)| PointEval { value: u.value + self.c * (v.value - u.value), ..Default::default() })
            .collect())
    }
}

struct Constant(f64, usize);

impl Field for Constant {
    fn dim(&self) -> usize {
        self.1
    }

    fn evaluate(&self, queries: &[PointQuery]) -> Result<Vec<PointEval>> {
        Ok(queries.iter().map(|_| PointEval { value: self.0, ..Default::default() }).collect())
    }
}

fn small_config(method: Method, iterations: usize) -> TrainConfig {
    let mut c = TrainConfig::preset(Preset::Desk, Benchmark::Bsb, method, TerminalMode::Hard);
    c.iterations = iterations;
    c.batch_size = 4;
    c.n_steps = 5;
    c.eval_every = 2;
    c.n_eval_trajectories = 8;
    c.network.width = 8;
    c
}

/// Independent scalar Adam used as the reference trace.
fn reference_adam(p0: f64, grads: &[f64], lr: f64) -> f64 {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
    for (k, g) in grads.iter().enumerate() {
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let t = (k + 1) as i32;
        p -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
    }
    p
}

#[test]
fn adam_examples() {
    let mut adam = Adam::new(2, AdamConfig::default()).unwrap();
    adam.m = vec![1.0, -2.0];
    adam.v = vec![4.0, 1.0];
    adam.step = 3;
    let mut params = vec![0.5, 0.25];
    adam.update(&mut params, &[0.0, 0.0], 1e-3).unwrap();
    assert!((adam.m[0] - 0.9).abs() < 1e-15 && (adam.m[1] + 1.8).abs() < 1e-15);
    assert!((adam.v[0] - 4.0 * 0.999).abs() < 1e-15);

    let mut adam = Adam::new(2, AdamConfig::default()).unwrap();
    let mut params = vec![0.5, -1.0];
    adam.update(&mut params, &[0.3, -2.0], 0.01).unwrap();
    // m̂ = g and v̂ = g², so the first step is −lr·g/(|g| + eps)
    assert!((params[0] - (0.5 - 0.01 * 0.3 / (0.3 + 1e-8))).abs() < 1e-15);
    assert!((params[1] - (-1.0 + 0.01 * 2.0 / (2.0 + 1e-8))).abs() < 1e-15);

    let grads = [0.7, 0.7];
    let mut adam = Adam::new(1, AdamConfig::default()).unwrap();
    let mut p = vec![2.0];
    for g in grads {
        adam.update(&mut p, &[g], 0.05).unwrap();
    }
    assert!((p[0] - reference_adam(2.0, &grads, 0.05)).abs() < 1e-12);
}

#[test]
fn adam_aborts_on_non_finite_gradients() {
    let mut adam = Adam::new(2, AdamConfig::default()).unwrap();
    let mut params = vec![1.0, 2.0];
    let err = adam.update(&mut params, &[0.1, f64::NAN], 1e-3).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)));
    assert_eq!(params, vec![1.0, 2.0]);
    assert_eq!(adam.step, 0);
    assert!(adam.update(&mut params, &[0.1], 1e-3).is_err());
    assert!(Adam::new(1, AdamConfig { beta1: 1.0, ..Default::default() }).is_err());
}

proptest! {
    #[test]
    fn adam_matches_reference_trace(grads in prop::collection::vec(-5.0f64..5.0, 1..40), lr in 1e-4f64..0.1) {
        let mut adam = Adam::new(1, AdamConfig::default()).unwrap();
        let mut p = vec![0.3];
        for g in &grads {
            adam.update(&mut p, &[*g], lr).unwrap();
        }
        prop_assert!((p[0] - reference_adam(0.3, &grads, lr)).abs() < 1e-12);
    }

    #[test]
    fn adam_descends_a_convex_quadratic(a in 0.1f64..10.0, x0 in -5.0f64..5.0, target in -5.0f64..5.0) {
        prop_assume!((x0 - target).abs() > 0.5);
        let lr = 0.01;
        let mut adam = Adam::new(1, AdamConfig::default()).unwrap();
        let mut p = vec![x0];
        let f = |x: f64| 0.5 * a * (x - target) * (x - target);
        let mut prev = f(x0);
        for _ in 0..40 {
            let g = a * (p[0] - target);
            adam.update(&mut p, &[g], lr).unwrap();
            let now = f(p[0]);
            prop_assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn rl2_is_scale_covariant(c in -3.0f64..3.0, seed in 0u64..50) {
        let p = problem("BSB", 2);
        let set = generate_reference_trajectories(&p, 3, 4, seed).unwrap();
        let exact = AnalyticSurrogate::bsb_exact(0.4, 0.05, 1.0, 2).unwrap();
        let other = Constant(1.5, 2);
        let base = rl2(&other, &set).unwrap();
        let scaled = rl2(&Blend { exact: &exact, inner: &other, c }, &set).unwrap();
        prop_assert!((scaled - c.abs() * base).abs() <= 1e-12 * (1.0 + base));
    }
}

#[test]
fn schedule_examples() {
    assert_eq!(lr_schedule(&Schedule::Cosine, 0, 100, 1e-3).unwrap(), 1e-3);
    assert_eq!(lr_schedule(&Schedule::Cosine, 100, 100, 1e-3).unwrap(), 0.0);
    assert!((lr_schedule(&Schedule::Cosine, 50, 100, 1e-3).unwrap() - 5e-4).abs() < 1e-18);
    let pw = Schedule::Piecewise { boundaries: vec![0.5], factors: vec![1.0, 0.1] };
    assert_eq!(lr_schedule(&pw, 60, 100, 2.0).unwrap(), 0.2);
    assert_eq!(lr_schedule(&pw, 49, 100, 2.0).unwrap(), 2.0);
    assert_eq!(lr_schedule(&pw, 50, 100, 2.0).unwrap(), 0.2);
    assert!(lr_schedule(&Schedule::Cosine, 101, 100, 1e-3).is_err());
    assert!(Schedule::Piecewise { boundaries: vec![0.5], factors: vec![1.0] }.validate().is_err());
    assert!(Schedule::Piecewise { boundaries: vec![0.7, 0.5], factors: vec![1.0; 3] }.validate().is_err());
}

#[test]
fn reference_sets() {
    let bsb = problem("BSB", 3);
    assert!(generate_reference_trajectories(&bsb, 0, 10, 1).unwrap().is_empty());
    let set = generate_reference_trajectories(&bsb, 4, 10, 1).unwrap();
    assert_eq!(set.source, ReferenceSource::Exact);
    assert_eq!(set.trajectories.len(), 4);
    for path in &set.trajectories {
        assert_eq!(path.len(), 11);
        assert_eq!(path[0].x, bsb.x0.iter().copied().collect::<Vec<_>>());
        for p in path {
            let x = Vector::from_column_slice(&p.x);
            assert_eq!(p.u, bsb.exact(p.t, &x).unwrap());
        }
    }
    assert_eq!(set, generate_reference_trajectories(&bsb, 4, 10, 1).unwrap());
    assert_ne!(set, generate_reference_trajectories(&bsb, 4, 10, 2).unwrap());

    let ac = problem("AC", 20);
    let set = generate_reference_trajectories(&ac, 256, 20, 0).unwrap();
    assert_eq!(set.trajectories.len(), 1);
    assert_eq!(set.trajectories[0].len(), 1);
    let point = &set.trajectories[0][0];
    assert_eq!((point.t, point.u), (0.0, 0.30879));
    assert!(point.x.iter().all(|&v| v == 0.0));
    assert!(matches!(
        generate_reference_trajectories(&problem("AC", 5), 4, 10, 0),
        Err(Error::Incompatible(_))
    ));

    let bz = problem("BZ", 2);
    let set = generate_reference_trajectories(&bz, 2, 3, 5).unwrap();
    let exact = AnalyticSurrogate::bz_exact(0.1, 0.1, 1.0, 2).unwrap();
    assert!(rl2(&exact, &set).unwrap() < 1e-14);

    let pide = problem("PIDE", 2);
    let set = generate_reference_trajectories(&pide, 2, 3, 5).unwrap();
    assert_eq!(set.n_points(), 8);
}

#[test]
fn hjb_references_use_monte_carlo() {
    let hjb = problem("HJB", 2);
    let set = generate_reference_trajectories(&hjb, 1, 2, 3).unwrap();
    assert_eq!(set.source, ReferenceSource::MonteCarlo);
    let path = &set.trajectories[0];
    let last = &path[2];
    assert_eq!(last.u, hjb.g(&Vector::from_column_slice(&last.x)));
    assert!(path[0].u.is_finite());
    assert_eq!(set, generate_reference_trajectories(&hjb, 1, 2, 3).unwrap());
}

#[test]
fn rl2_examples() {
    let p = problem("BSB", 2);
    let set = generate_reference_trajectories(&p, 5, 6, 0).unwrap();
    let exact = AnalyticSurrogate::bsb_exact(0.4, 0.05, 1.0, 2).unwrap();
    assert!(rl2(&exact, &set).unwrap() < 1e-15);
    let doubled = Blend { exact: &exact, inner: &exact, c: 0.0 };
    assert!(rl2(&doubled, &set).unwrap() < 1e-15);
    let twice = Blend { exact: &exact, inner: &Blend { exact: &exact, inner: &Constant(0.0, 2), c: -1.0 }, c: 1.0 };
    assert!((rl2(&twice, &set).unwrap() - 1.0).abs() < 1e-14);

    let single = EvalSet {
        seed: 0,
        source: ReferenceSource::Exact,
        trajectories: vec![vec![EvalPoint { t: 0.0, x: vec![0.0, 0.0], u: 2.0 }]],
    };
    assert_eq!(rl2(&Constant(1.0, 2), &single).unwrap(), 0.5);
    let zero = EvalSet {
        seed: 0,
        source: ReferenceSource::Exact,
        trajectories: vec![vec![EvalPoint { t: 0.0, x: vec![0.0, 0.0], u: 0.0 }]],
    };
    assert!(rl2(&Constant(1.0, 2), &zero).is_err());
    assert!(rl2(&Constant(1.0, 2), &EvalSet { trajectories: vec![], ..single }).is_err());
}

#[test]
fn presets() {
    let paper = TrainConfig::preset(Preset::Paper, Benchmark::Bsb, Method::Unem { m1: 5, m2: 5 }, TerminalMode::Hard);
    assert_eq!((paper.iterations, paper.batch_size, paper.n_steps), (100_000, 64, 100));
    assert_eq!((paper.network.hidden_layers, paper.network.width), (4, 512));
    assert_eq!(paper.network.activation, Activation::Mish);
    assert_eq!(paper.schedule, Schedule::Cosine);
    assert_eq!(paper.lr, 1e-3);
    assert_eq!(paper.n_eval_trajectories, 256);

    let pide = TrainConfig::preset(Preset::Paper, Benchmark::Pide, Method::Em, TerminalMode::Hard);
    assert_eq!((pide.iterations, pide.network.hidden_layers, pide.network.width), (10_000, 2, 256));
    assert_eq!(pide.network.activation, Activation::LeakyRelu);
    assert!(matches!(pide.schedule, Schedule::Piecewise { .. }));

    let sg = Method::Shotgun { m: 4, tau: SHOTGUN_TAU };
    assert_eq!(TrainConfig::preset(Preset::Paper, Benchmark::Hjb, sg, TerminalMode::Hard).n_steps, 10);
    assert_eq!(SHOTGUN_TAU, 4f64.powi(-5));

    let desk = TrainConfig::preset(Preset::Desk, Benchmark::Bsb, Method::Em, TerminalMode::Hard);
    assert_eq!((desk.iterations, desk.batch_size, desk.n_steps), (3000, 16, 50));
    assert_eq!((desk.network.hidden_layers, desk.network.width), (2, 64));
    assert_eq!(Preset::Desk.dimension(Benchmark::Bsb), 10);
    for b in Benchmark::ALL {
        TrainConfig::preset(Preset::Desk, b, Method::Em, TerminalMode::Soft { weight: 1.0 }).validate().unwrap();
    }
    assert!("desk".parse::<Preset>().is_ok() && "gpu".parse::<Preset>().is_err());
}

#[test]
fn zero_iterations_return_the_initial_surrogate() {
    let p = problem("BSB", 2);
    let c = small_config(Method::Em, 0);
    let (s, record) = train(&p, &c).unwrap();
    assert_eq!(s.params(), initial_surrogate(&p, &c).unwrap().params());
    assert_eq!(record.history.len(), 1);
    assert_eq!(record.history[0].iteration, 0);
    assert_eq!(record.final_rl2, record.history[0].rl2);
    assert_eq!(record.seconds_per_iteration(), None);
}

#[test]
fn training_is_deterministic() {
    let p = problem("BSB", 2);
    for method in [Method::Unem { m1: 2, m2: 2 }, Method::Heun, Method::Shotgun { m: 2, tau: SHOTGUN_TAU }] {
        let c = small_config(method, 6);
        let (s1, r1) = train(&p, &c).unwrap();
        let (s2, r2) = train(&p, &c).unwrap();
        assert_eq!(s1.params(), s2.params());
        let a = serde_json::to_string(&r1.without_timing()).unwrap();
        let b = serde_json::to_string(&r2.without_timing()).unwrap();
        assert_eq!(a, b);
        let iters: Vec<usize> = r1.history.iter().map(|e| e.iteration).collect();
        assert_eq!(iters, vec![0, 2, 4, 6]);
        assert!(r1.history.iter().all(|e| e.eval_seed == r1.seeds.eval && e.rl2.is_some()));
        let mut other = c.clone();
        other.seed = 1;
        assert_ne!(train(&p, &other).unwrap().0.params(), s1.params());
    }
}

#[test]
fn coupled_and_jump_problems_train() {
    let mut c = small_config(Method::Unem { m1: 2, m2: 2 }, 3);
    c.loss.constraint = TerminalMode::Soft { weight: 1.0 };
    let (_, r) = train(&problem("BZ", 2), &c).unwrap();
    assert!(r.final_rl2.unwrap().is_finite());
    let (_, r) = train(&problem("PIDE", 2), &c).unwrap();
    assert!(r.final_rl2.unwrap().is_finite());
    c.loss.method = Method::Heun;
    assert!(matches!(train(&problem("PIDE", 2), &c), Err(Error::Incompatible(_))));
}

#[derive(Debug)]
struct Poisoned;

impl Dynamics for Poisoned {
    fn drift(&self, _t: f64, x: &Vector) -> Vector {
        Vector::zeros(x.len())
    }
    fn diffusion(&self, _t: f64, x: &Vector, _y: Option<f64>) -> Result<Matrix> {
        Ok(Matrix::identity(x.len(), x.len()))
    }
    fn diffusion_jacobian(&self, _t: f64, x: &Vector, _y: Option<f64>, _z: Option<&Vector>) -> Result<Vec<Matrix>> {
        Ok(vec![Matrix::zeros(x.len(), x.len()); x.len()])
    }
    fn phi(&self, t: f64, _x: &Vector, _y: f64, _z: &Vector) -> f64 {
        if t > 0.5 {
            f64::NAN
        } else {
            0.0
        }
    }
    fn phi_partials(&self, _t: f64, x: &Vector, _y: f64, _z: &Vector) -> (f64, Vector) {
        (0.0, Vector::zeros(x.len()))
    }
    fn terminal(&self, x: &Vector) -> f64 {
        x.sum()
    }
    fn terminal_grad(&self, x: &Vector) -> Vector {
        Vector::from_element(x.len(), 1.0)
    }
    fn terminal_hessian(&self, x: &Vector) -> Matrix {
        Matrix::zeros(x.len(), x.len())
    }
}

#[test]
fn non_finite_losses_abort_with_the_iteration() {
    let p = PdeProblem::custom("poisoned", 1.0, Vector::zeros(2), Arc::new(Poisoned)).unwrap();
    let mut c = small_config(Method::Em, 5);
    c.n_eval_trajectories = 0;
    match train(&p, &c) {
        Err(Error::Aborted { iteration, source }) => {
            assert_eq!(iteration, 0);
            assert!(matches!(*source, Error::NonFinite(_)));
        }
        other => panic!("expected an abort, got {:?}", other.map(|r| r.1.history.len())),
    }
}

#[test]
fn unem_training_reduces_rl2() {
    let p = problem("BSB", 2);
    let mut c = TrainConfig::preset(Preset::Desk, Benchmark::Bsb, Method::Unem { m1: 5, m2: 5 }, TerminalMode::Hard);
    c.iterations = 2000;
    c.n_steps = 20;
    c.eval_every = 500;
    c.seed = 4;
    let (_, r) = train(&p, &c).unwrap();
    let first = r.history[0].rl2.unwrap();
    let last = r.final_rl2.unwrap();
    assert!(last < first, "rl2 {first} -> {last}");
}
