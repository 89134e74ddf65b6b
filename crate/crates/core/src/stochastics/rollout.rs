//! Batched forward rollouts for every stepping scheme.

use serde::{Deserialize, Serialize};

use super::grid::{shotgun_grid, uniform_grid, TimeGrid};
use super::noise::{sample_noise, Layout, NoiseBundle};
use super::rng::{KeyedRng, StreamTag};
use super::step::{em_increment, heun_corrector, heun_predictor, Coupling};
use crate::error::{invalid, Error, Result};
use crate::problems::{PdeProblem, Vector};
use crate::surrogate::{Field, PointQuery};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Scheme {
    /// Single Euler–Maruyama path per batch element.
    Em,
    /// Main path plus `shots − 1` extra candidate next states per step.
    MultiShot { shots: usize },
    /// Randomized grid with `shots` antithetic pairs at inner step `tau`.
    Shotgun { shots: usize, tau: f64 },
    /// Stochastic Heun predictor/corrector.
    Heun,
    /// Jump-diffusion candidates (PIDE) with `shots` candidates per step.
    Jump { shots: usize },
}

impl Scheme {
    pub fn shots(&self) -> usize {
        match *self {
            Scheme::Em | Scheme::Heun => 1,
            Scheme::MultiShot { shots } | Scheme::Shotgun { shots, .. } | Scheme::Jump { shots } => shots,
        }
    }
}

/// Frozen coupling data of fully-coupled problems: `(u, ∇u)` along the main
/// path and, for Heun, at the predictor states.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingData {
    pub main: Vec<Vec<Coupling>>,
    pub bar: Option<Vec<Vec<Coupling>>>,
}

#[derive(Clone, Debug)]
pub struct RolloutBundle {
    pub scheme: Scheme,
    /// One grid per batch element for Shotgun, one shared grid otherwise.
    pub grids: Vec<TimeGrid>,
    /// `[b][n]` for `n = 0..=N`.
    pub x_main: Vec<Vec<Vector>>,
    /// `[b][n][i]`: candidate `i` at node `n` was stepped from `x_main[b][n − 1]`;
    /// candidate 0 is the main path. Node 0 holds copies of `x0`.
    pub x_candidates: Option<Vec<Vec<Vec<Vector>>>>,
    /// `[b][n][i]` for `n = 0..N`: antithetic states at `t_n + τ`.
    pub x_shotgun_plus: Option<Vec<Vec<Vec<Vector>>>>,
    pub x_shotgun_minus: Option<Vec<Vec<Vec<Vector>>>>,
    /// `[b][n]` for `n = 0..N`: predictor for the step `n → n + 1`.
    pub x_heun_bar: Option<Vec<Vec<Vector>>>,
    pub coupling: Option<CouplingData>,
    pub noise: NoiseBundle,
}

impl RolloutBundle {
    pub fn batch(&self) -> usize {
        self.x_main.len()
    }

    pub fn n_steps(&self) -> usize {
        self.grids[0].n_steps()
    }

    pub fn grid(&self, b: usize) -> &TimeGrid {
        if self.grids.len() == 1 {
            &self.grids[0]
        } else {
            &self.grids[b]
        }
    }

    pub fn coupling_main(&self, b: usize, n: usize) -> Option<&Coupling> {
        self.coupling.as_ref().map(|c| &c.main[b][n])
    }

    pub fn coupling_bar(&self, b: usize, n: usize) -> Option<&Coupling> {
        self.coupling.as_ref().and_then(|c| c.bar.as_ref()).map(|bar| &bar[b][n])
    }

    /// Candidate `i` at node `n`, with the main path standing in for shot 0.
    pub fn candidate(&self, b: usize, n: usize, i: usize) -> &Vector {
        match (&self.x_candidates, i) {
            (Some(c), _) => &c[b][n][i],
            (None, 0) => &self.x_main[b][n],
            (None, _) => panic!("candidate shot {i} requested from a single-path bundle"),
        }
    }
}

/// Grids for a scheme: per-element randomized grids for Shotgun, one uniform grid otherwise.
pub fn scheme_grids(problem: &PdeProblem, scheme: &Scheme, n_steps: usize, batch: usize, seed: u64) -> Result<Vec<TimeGrid>> {
    match scheme {
        Scheme::Shotgun { .. } => {
            let rng = KeyedRng::new(seed);
            (0..batch)
                .map(|b| shotgun_grid(n_steps, problem.t_end, rng.derive(StreamTag::Grid, [b as u64, 0, 0])))
                .collect()
        }
        _ => Ok(vec![uniform_grid(n_steps, problem.t_end)?]),
    }
}

fn check_compatibility(problem: &PdeProblem, scheme: &Scheme, field: Option<&dyn Field>) -> Result<()> {
    if problem.fully_coupled() != field.is_some() {
        return Err(if problem.fully_coupled() {
            Error::MissingCoupling(problem.name.clone())
        } else {
            invalid("a surrogate is only passed to rollouts of fully-coupled problems")
        });
    }
    match (problem.jump_spec.is_some(), scheme) {
        (true, Scheme::Jump { .. }) | (false, Scheme::Em | Scheme::MultiShot { .. } | Scheme::Heun) => {}
        (false, Scheme::Shotgun { tau, .. }) => {
            if !(*tau > 0.0) {
                return Err(invalid("shotgun tau must be positive"));
            }
        }
        (false, Scheme::Jump { .. }) => return Err(Error::MissingJumpSpec(problem.name.clone())),
        (true, other) => {
            return Err(Error::Incompatible(format!(
                "jump problem {} needs the jump scheme, got {other:?}",
                problem.name
            )))
        }
    }
    if scheme.shots() == 0 {
        return Err(invalid("scheme needs at least one shot"));
    }
    Ok(())
}

/// Samples a noise bundle and propagates the batch.
pub fn rollout(
    problem: &PdeProblem,
    n_steps: usize,
    scheme: Scheme,
    field: Option<&dyn Field>,
    batch: usize,
    seed: u64,
) -> Result<RolloutBundle> {
    check_compatibility(problem, &scheme, field)?;
    let grids = scheme_grids(problem, &scheme, n_steps, batch, seed)?;
    let layout = Layout { batch, steps: n_steps, shots: scheme.shots(), dim: problem.d };
    let fine = match scheme {
        Scheme::Shotgun { tau, .. } => Some(tau),
        _ => None,
    };
    let noise = sample_noise(layout, &grids, fine, problem.jump_spec.as_ref(), seed)?;
    rollout_with_noise(problem, grids, scheme, field, noise)
}

fn couplings(field: &dyn Field, t: &[f64], xs: &[&Vector]) -> Result<Vec<Coupling>> {
    let queries: Vec<PointQuery> = xs
        .iter()
        .zip(t)
        .map(|(x, &t)| PointQuery::with_grad(t, (*x).clone()))
        .collect();
    field
        .evaluate(&queries)?
        .into_iter()
        .map(|e| {
            let z = e.grad.ok_or_else(|| invalid("coupling needs a gradient"))?;
            Ok(Coupling { y: e.value, z })
        })
        .collect()
}

/// Propagates the batch with pre-drawn noise.
pub fn rollout_with_noise(
    problem: &PdeProblem,
    grids: Vec<TimeGrid>,
    scheme: Scheme,
    field: Option<&dyn Field>,
    noise: NoiseBundle,
) -> Result<RolloutBundle> {
    check_compatibility(problem, &scheme, field)?;
    let layout = noise.layout;
    if layout.shots != scheme.shots() || layout.dim != problem.d {
        return Err(invalid("noise layout does not match scheme and problem"));
    }
    let (batch, steps, shots) = (layout.batch, layout.steps, layout.shots);
    let grid_of = |b: usize| if grids.len() == 1 { &grids[0] } else { &grids[b] };

    let mut x_main: Vec<Vec<Vector>> = (0..batch).map(|_| vec![problem.x0.clone()]).collect();
    let multi = matches!(scheme, Scheme::MultiShot { .. } | Scheme::Jump { .. });
    let mut cands: Option<Vec<Vec<Vec<Vector>>>> =
        multi.then(|| (0..batch).map(|_| vec![vec![problem.x0.clone(); shots]]).collect());
    let shotgun = matches!(scheme, Scheme::Shotgun { .. });
    let mut plus: Option<Vec<Vec<Vec<Vector>>>> = shotgun.then(|| vec![Vec::new(); batch]);
    let mut minus: Option<Vec<Vec<Vec<Vector>>>> = shotgun.then(|| vec![Vec::new(); batch]);
    let heun = matches!(scheme, Scheme::Heun);
    let mut bars: Option<Vec<Vec<Vector>>> = heun.then(|| vec![Vec::new(); batch]);
    let mut coupling = field.map(|_| CouplingData {
        main: vec![Vec::new(); batch],
        bar: heun.then(|| vec![Vec::new(); batch]),
    });

    for n in 0..=steps {
        if let (Some(f), Some(c)) = (field, coupling.as_mut()) {
            let t: Vec<f64> = (0..batch).map(|b| grid_of(b).t[n]).collect();
            let xs: Vec<&Vector> = x_main.iter().map(|p| &p[n]).collect();
            for (b, cp) in couplings(f, &t, &xs)?.into_iter().enumerate() {
                c.main[b].push(cp);
            }
        }
        if n == steps {
            break;
        }
        if heun {
            let bar_all = bars.as_mut().expect("heun bars");
            let mut preds = Vec::with_capacity(batch);
            for b in 0..batch {
                let g = grid_of(b);
                let c = coupling.as_ref().map(|c| &c.main[b][n]);
                preds.push(heun_predictor(problem, g.t[n], &x_main[b][n], g.dt[n], noise.dw(b, n, 0), c)?);
            }
            if let (Some(f), Some(c)) = (field, coupling.as_mut()) {
                let t: Vec<f64> = (0..batch).map(|b| grid_of(b).t[n + 1]).collect();
                let xs: Vec<&Vector> = preds.iter().collect();
                for (b, cp) in couplings(f, &t, &xs)?.into_iter().enumerate() {
                    c.bar.as_mut().expect("heun coupling")[b].push(cp);
                }
            }
            for (b, x_bar) in preds.into_iter().enumerate() {
                let g = grid_of(b);
                let c = coupling.as_ref().map(|c| &c.main[b][n]);
                let cb = coupling.as_ref().and_then(|c| c.bar.as_ref()).map(|bar| &bar[b][n]);
                let next = heun_corrector(problem, g.t[n], &x_main[b][n], &x_bar, g.dt[n], noise.dw(b, n, 0), c, cb)?;
                x_main[b].push(next);
                bar_all[b].push(x_bar);
            }
            continue;
        }
        for b in 0..batch {
            let g = grid_of(b);
            let (t, dt) = (g.t[n], g.dt[n]);
            let x = x_main[b][n].clone();
            let y = coupling.as_ref().map(|c| c.main[b][n].y);
            match scheme {
                Scheme::Em => {
                    let next = &x + em_increment(problem, t, &x, dt, noise.dw(b, n, 0), y)?;
                    x_main[b].push(next);
                }
                Scheme::MultiShot { .. } | Scheme::Jump { .. } => {
                    let spec = problem.jump_spec;
                    let mut row = Vec::with_capacity(shots);
                    for i in 0..shots {
                        let mut next = &x + em_increment(problem, t, &x, dt, noise.dw(b, n, i), y)?;
                        if let (Some(spec), Some(j)) = (spec, noise.jump(b, n, i)) {
                            next.add_scalar_mut(j.total() - spec.lambda * spec.mu_phi * dt);
                        }
                        row.push(next);
                    }
                    x_main[b].push(row[0].clone());
                    cands.as_mut().expect("candidates")[b].push(row);
                }
                Scheme::Shotgun { tau, .. } => {
                    let next = &x + em_increment(problem, t, &x, dt, noise.dw(b, n, 0), y)?;
                    let sigma = problem.sigma(t, &x, y)?;
                    let center = &x + problem.mu(t, &x) * tau;
                    let mut p_row = Vec::with_capacity(shots);
                    let mut m_row = Vec::with_capacity(shots);
                    for i in 0..shots {
                        let fine = noise.fine(b, n, i).ok_or_else(|| invalid("missing fine increments"))?;
                        let s = &sigma * fine;
                        p_row.push(&center + &s);
                        m_row.push(&center - &s);
                    }
                    plus.as_mut().expect("plus")[b].push(p_row);
                    minus.as_mut().expect("minus")[b].push(m_row);
                    x_main[b].push(next);
                }
                Scheme::Heun => unreachable!("handled above"),
            }
        }
    }

    Ok(RolloutBundle {
        scheme,
        grids,
        x_main,
        x_candidates: cands,
        x_shotgun_plus: plus,
        x_shotgun_minus: minus,
        x_heun_bar: bars,
        coupling,
        noise,
    })
}
