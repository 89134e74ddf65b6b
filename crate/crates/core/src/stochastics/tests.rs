use std::collections::BTreeMap;

use super::noise::brownian_increment;
use super::*;
use crate::biaslab::{constant_problem, AnalyticSurrogate};
use crate::problems::{make_problem, Matrix, PdeProblem, Vector};
use crate::Error;

fn problem(name: &str, d: usize, pairs: &[(&str, f64)]) -> PdeProblem {
    let overrides: BTreeMap<String, f64> = pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    make_problem(name, Some(d), &overrides).unwrap()
}

fn close(a: &Vector, b: &Vector, tol: f64) -> bool {
    (a - b).amax() <= tol * (1.0 + b.amax())
}

#[test]
fn em_step_examples() {
    let p = constant_problem(Vector::zeros(3), Matrix::zeros(3, 3), 0.0).unwrap();
    let x = Vector::from_vec(vec![1.0, -2.0, 0.5]);
    let dw = Vector::from_element(3, 0.7);
    assert_eq!(em_forward_step(&p, 0.0, &x, 0.1, &dw, None).unwrap(), x);
    assert!(em_forward_step(&p, 0.0, &x, 0.0, &dw, None).is_err());

    let hjb = problem("HJB", 4, &[]);
    let next = em_forward_step(&hjb, 0.0, &Vector::zeros(4), 0.01, &Vector::from_element(4, 0.5), None).unwrap();
    assert!(next.iter().all(|v| (v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15));

    let bz = problem("BZ", 3, &[]);
    let dw = Vector::from_vec(vec![0.1, -0.2, 0.05]);
    let next = em_forward_step(&bz, 0.2, &bz.x0, 0.01, &dw, Some(1.7)).unwrap();
    assert!(close(&next, &(&bz.x0 + &dw * (0.3 * 1.7)), 1e-15));
    assert!(matches!(
        em_forward_step(&bz, 0.2, &bz.x0, 0.01, &dw, None),
        Err(Error::MissingCoupling(_))
    ));
}

#[test]
fn heun_step_examples() {
    let sigma = Matrix::from_row_slice(2, 2, &[0.5, 0.1, -0.2, 0.3]);
    let p = constant_problem(Vector::zeros(2), sigma.clone(), 0.0).unwrap();
    let x = Vector::from_vec(vec![0.4, -1.0]);
    let dw = Vector::from_vec(vec![0.3, 0.2]);
    let (bar, next) = heun_forward_step(&p, 0.0, &x, 0.01, &dw, None).unwrap();
    assert!(close(&bar, &(&x + &sigma * &dw), 1e-15));
    assert!(close(&next, &bar, 1e-15));

    let bsb = problem("BSB", 3, &[]);
    let x = Vector::from_vec(vec![1.0, 0.5, -2.0]);
    let mu_h = heun_drift(&bsb, 0.0, &x, None).unwrap();
    assert!(close(&mu_h, &(&x * (-0.5 * 0.16)), 1e-15));

    let dt = 0.05;
    let zero = Vector::zeros(3);
    let (bar, next) = heun_forward_step(&bsb, 0.0, &x, dt, &zero, None).unwrap();
    let mu_bar = heun_drift(&bsb, dt, &bar, None).unwrap();
    assert!(close(&next, &(&x + (mu_h + mu_bar) * (0.5 * dt)), 1e-15));
    assert!(heun_forward_step(&bsb, 0.0, &x, -dt, &zero, None).is_err());

    let bz = problem("BZ", 2, &[]);
    assert!(matches!(
        heun_forward_step(&bz, 0.0, &bz.x0, dt, &Vector::zeros(2), None),
        Err(Error::MissingCoupling(_))
    ));
}

#[test]
fn jump_step_examples() {
    let p = problem("PIDE", 3, &[("epsilon", 0.0), ("lambda", 2.0), ("mu_phi", 0.3)]);
    let x = Vector::from_vec(vec![1.0, -1.0, 0.25]);
    let zero = Vector::zeros(3);
    let dt = 0.1;
    let (next, record) = jump_forward_step(&p, 0.0, &x, dt, &zero, &JumpDraw::default()).unwrap();
    assert!(close(&next, &x.add_scalar(-2.0 * 0.3 * dt), 1e-15));
    assert_eq!(record.count(), 0);

    let one = JumpDraw { sizes: vec![0.7] };
    let (next, record) = jump_forward_step(&p, 0.0, &x, dt, &zero, &one).unwrap();
    assert!(close(&next, &x.add_scalar(0.7 - 0.06), 1e-15));
    assert_eq!(record, one);

    let no_jumps = problem("PIDE", 3, &[("lambda", 0.0)]);
    let dw = Vector::from_vec(vec![0.1, 0.2, -0.3]);
    let (next, _) = jump_forward_step(&no_jumps, 0.0, &x, dt, &dw, &JumpDraw::default()).unwrap();
    assert_eq!(next, em_forward_step(&no_jumps, 0.0, &x, dt, &dw, None).unwrap());
    assert!(close(&next, &(&x + &x * (0.05 * dt) + &dw * 0.1), 1e-15));

    let bsb = problem("BSB", 3, &[]);
    assert!(matches!(
        jump_forward_step(&bsb, 0.0, &x, dt, &dw, &one),
        Err(Error::MissingJumpSpec(_))
    ));
}

#[test]
fn rollout_shapes() {
    let p = problem("BSB", 2, &[]);
    let r = rollout(&p, 1, Scheme::Em, None, 3, 0).unwrap();
    assert_eq!(r.batch(), 3);
    assert!(r.x_main.iter().all(|path| path.len() == 2 && path[0] == p.x0));
    assert!(r.x_candidates.is_none() && r.x_shotgun_plus.is_none() && r.x_heun_bar.is_none());

    let r = rollout(&p, 4, Scheme::MultiShot { shots: 3 }, None, 2, 1).unwrap();
    let cands = r.x_candidates.as_ref().unwrap();
    let g = r.grid(0);
    for b in 0..2 {
        for n in 0..4 {
            let row = &cands[b][n + 1];
            assert_eq!(row.len(), 3);
            assert_eq!(row[0], r.x_main[b][n + 1]);
            for i in 0..3 {
                let want = em_forward_step(&p, g.t[n], &r.x_main[b][n], g.dt[n], r.noise.dw(b, n, i), None).unwrap();
                assert!(close(&row[i], &want, 1e-15));
            }
            assert_ne!(row[1], row[2]);
        }
    }

    let r = rollout(&p, 3, Scheme::Heun, None, 2, 2).unwrap();
    let bars = r.x_heun_bar.as_ref().unwrap();
    assert_eq!(bars[0].len(), 3);
    let g = r.grid(1);
    let (bar, next) = heun_forward_step(&p, g.t[1], &r.x_main[1][1], g.dt[1], r.noise.dw(1, 1, 0), None).unwrap();
    assert!(close(&bars[1][1], &bar, 1e-15));
    assert!(close(&r.x_main[1][2], &next, 1e-15));
}

#[test]
fn shotgun_pairs_are_antithetic() {
    let mu = Vector::from_vec(vec![0.3, -1.1]);
    let sigma = Matrix::from_row_slice(2, 2, &[0.4, 0.0, 0.2, 0.9]);
    let p = constant_problem(mu.clone(), sigma.clone(), 0.0).unwrap();
    let tau = 4f64.powi(-5);
    let r = rollout(&p, 5, Scheme::Shotgun { shots: 4, tau }, None, 3, 8).unwrap();
    assert_ne!(r.grids[0], r.grids[1]);
    let plus = r.x_shotgun_plus.as_ref().unwrap();
    let minus = r.x_shotgun_minus.as_ref().unwrap();
    for b in 0..3 {
        assert_eq!(plus[b].len(), 5);
        for n in 0..5 {
            let x = &r.x_main[b][n];
            for i in 0..4 {
                let dw = r.noise.fine(b, n, i).unwrap();
                assert!(close(&(&plus[b][n][i] - x), &(&mu * tau + &sigma * dw), 1e-12));
                assert!(close(&(&minus[b][n][i] - x), &(&mu * tau - &sigma * dw), 1e-12));
                let mid = (&plus[b][n][i] + &minus[b][n][i]) * 0.5;
                assert!(close(&mid, &(x + &mu * tau), 1e-15));
            }
        }
    }
    assert!(rollout(&p, 5, Scheme::Shotgun { shots: 4, tau: 0.0 }, None, 1, 0).is_err());
}

#[test]
fn coupled_rollouts_use_the_surrogate_value() {
    let p = problem("BZ", 3, &[]);
    let field = AnalyticSurrogate::bz_exact(0.1, 0.1, 1.0, 3).unwrap();
    assert!(matches!(rollout(&p, 2, Scheme::Em, None, 1, 0), Err(Error::MissingCoupling(_))));
    let r = rollout(&p, 2, Scheme::Em, Some(&field), 2, 0).unwrap();
    let y0 = p.exact(0.0, &p.x0).unwrap();
    assert!((r.coupling_main(0, 0).unwrap().y - y0).abs() < 1e-14);
    let want = &p.x0 + r.noise.dw(1, 0, 0) * (0.3 * y0);
    assert!(close(&r.x_main[1][1], &want, 1e-14));

    let r = rollout(&p, 2, Scheme::Heun, Some(&field), 2, 0).unwrap();
    let bar = &r.x_heun_bar.as_ref().unwrap()[0][1];
    let cb = r.coupling_bar(0, 1).unwrap();
    assert!((cb.y - p.exact(1.0, bar).unwrap()).abs() < 1e-14);

    let bsb = problem("BSB", 3, &[]);
    assert!(rollout(&bsb, 2, Scheme::Em, Some(&field), 1, 0).is_err());
}

#[test]
fn jump_rollouts() {
    let p = problem("PIDE", 2, &[("lambda", 20.0), ("mu_phi", 0.1), ("sigma_phi", 0.2)]);
    let r = rollout(&p, 10, Scheme::Jump { shots: 2 }, None, 4, 3).unwrap();
    let cands = r.x_candidates.as_ref().unwrap();
    let g = r.grid(0);
    let mut jumps = 0;
    for b in 0..4 {
        for n in 0..10 {
            for i in 0..2 {
                let draw = r.noise.jump(b, n, i).unwrap();
                jumps += draw.count();
                let (want, _) = jump_forward_step(&p, g.t[n], &r.x_main[b][n], g.dt[n], r.noise.dw(b, n, i), draw).unwrap();
                assert!(close(&cands[b][n + 1][i], &want, 1e-15));
            }
        }
    }
    assert!(jumps > 0);
    assert!(matches!(
        rollout(&p, 2, Scheme::Em, None, 1, 0),
        Err(Error::Incompatible(_))
    ));
    let bsb = problem("BSB", 2, &[]);
    assert!(matches!(
        rollout(&bsb, 2, Scheme::Jump { shots: 2 }, None, 1, 0),
        Err(Error::MissingJumpSpec(_))
    ));
}

#[test]
fn rollouts_are_seed_deterministic() {
    let p = problem("BSB", 3, &[]);
    let schemes = [
        Scheme::Em,
        Scheme::MultiShot { shots: 3 },
        Scheme::Shotgun { shots: 2, tau: 1e-3 },
        Scheme::Heun,
    ];
    for scheme in schemes {
        let a = rollout(&p, 4, scheme, None, 3, 42).unwrap();
        let b = rollout(&p, 4, scheme, None, 3, 42).unwrap();
        let c = rollout(&p, 4, scheme, None, 3, 43).unwrap();
        assert_eq!(a.x_main, b.x_main);
        assert_eq!(a.x_candidates, b.x_candidates);
        assert_eq!(a.x_shotgun_plus, b.x_shotgun_plus);
        assert_eq!(a.x_heun_bar, b.x_heun_bar);
        assert_eq!(a.noise, b.noise);
        assert_eq!(a.grids, b.grids);
        assert_ne!(a.x_main, c.x_main);
    }
    let r = rollout(&p, 4, Scheme::Em, None, 3, 42).unwrap();
    let rng = KeyedRng::new(42);
    assert_eq!(r.noise.dw(2, 3, 0), &brownian_increment(&rng, 2, 3, 0, 3, 0.25));
}

#[test]
fn heun_matches_em_for_constant_coefficients() {
    let mu = Vector::from_vec(vec![0.2, -0.4, 1.0]);
    let sigma = Matrix::from_row_slice(3, 3, &[0.3, 0.1, 0.0, 0.0, 0.5, -0.2, 0.1, 0.0, 0.7]);
    let p = constant_problem(mu, sigma, 0.0).unwrap();
    let em = rollout(&p, 20, Scheme::Em, None, 5, 9).unwrap();
    let heun = rollout(&p, 20, Scheme::Heun, None, 5, 9).unwrap();
    for b in 0..5 {
        for n in 0..=20 {
            assert!(close(&heun.x_main[b][n], &em.x_main[b][n], 1e-13));
        }
    }
}

#[test]
fn bsb_em_weak_error_shrinks_with_n() {
    // E[g(X_N)] under EM is ‖x0‖²(1 + α²/N)^N; the diffusion's value is ‖x0‖² e^{α²T}.
    let alpha: f64 = 0.7;
    let p = problem("BSB", 2, &[("alpha", alpha)]);
    let norm2 = p.x0.norm_squared();
    let target = p.exact(0.0, &p.x0).unwrap() * (-0.05f64).exp();
    assert!((target - norm2 * (alpha * alpha).exp()).abs() < 1e-12);
    let paths = 200_000;
    let mut errors = Vec::new();
    for (k, n) in [1usize, 2, 4].into_iter().enumerate() {
        let r = rollout(&p, n, Scheme::Em, None, paths, 1000 + k as u64).unwrap();
        let vals: Vec<f64> = r.x_main.iter().map(|path| p.g(&path[n])).collect();
        let mean = vals.iter().sum::<f64>() / paths as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (paths - 1) as f64;
        let se = (var / paths as f64).sqrt();
        let em_mean = norm2 * (1.0 + alpha * alpha / n as f64).powi(n as i32);
        assert!((mean - em_mean).abs() < 4.0 * se, "N={n}: {mean} vs {em_mean} ± {se}");
        errors.push((target - mean, se));
    }
    for w in errors.windows(2) {
        let (e0, s0) = w[0];
        let (e1, s1) = w[1];
        assert!(e1 < e0 + 3.0 * (s0 * s0 + s1 * s1).sqrt(), "{errors:?}");
    }
    let (e_first, s_first) = errors[0];
    let (e_last, s_last) = errors[2];
    assert!(e_first - e_last > 3.0 * (s_first * s_first + s_last * s_last).sqrt());
}
