//! Optimization loop, schedules, reference data and RL2.

mod eval;
mod optim;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::losses::{total_loss, total_objective, LossSpec, Method, TerminalMode};
use crate::problems::{Benchmark, PdeProblem};
use crate::stochastics::{rollout, KeyedRng, RolloutBundle, StreamTag};
use crate::surrogate::{apply_hard_constraint, param_gradient, Activation, Field, NetworkConfig, Precision, Surrogate};

pub use eval::{generate_reference_trajectories, rl2, EvalPoint, EvalSet, ReferenceSource, HJB_REFERENCE_SAMPLES};
pub use optim::{clip_grad_norm, lr_schedule, Adam, AdamConfig, Schedule};

/// Inner step of the Shotgun losses in both presets.
pub const SHOTGUN_TAU: f64 = 1.0 / 1024.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub hidden_layers: usize,
    pub width: usize,
    pub activation: Activation,
    pub precision: Precision,
}

impl NetworkSpec {
    pub fn resolve(&self, d: usize, init_seed: u64) -> NetworkConfig {
        NetworkConfig {
            hidden_layers: self.hidden_layers,
            width: self.width,
            activation: self.activation,
            input_dim: d + 1,
            init_seed,
            precision: self.precision,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(invalid(format!("unknown preset `{other}` (expected desk or paper)"))),
        }
    }
}

impl Preset {
    /// Problem dimension used by the preset.
    pub fn dimension(self, bench: Benchmark) -> usize {
        match (self, bench) {
            (Preset::Paper, b) => b.default_dim(),
            (Preset::Desk, Benchmark::Bsb) => 10,
            // the AC reference value only exists at d = 20
            (Preset::Desk, Benchmark::Ac) => 20,
            (Preset::Desk, _) => 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub n_steps: usize,
    pub lr: f64,
    pub schedule: Schedule,
    #[serde(default)]
    pub adam: AdamConfig,
    pub seed: u64,
    pub eval_every: usize,
    pub n_eval_trajectories: usize,
    /// Gradient-norm clipping threshold; off when absent.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    pub loss: LossSpec,
    pub network: NetworkSpec,
}

impl TrainConfig {
    pub fn preset(preset: Preset, bench: Benchmark, method: Method, constraint: TerminalMode) -> Self {
        let shotgun = matches!(method, Method::Shotgun { .. } | Method::Unshotgun { .. });
        let pide = bench == Benchmark::Pide;
        let schedule = if pide {
            Schedule::Piecewise { boundaries: vec![0.5, 0.75], factors: vec![1.0, 0.1, 0.01] }
        } else {
            Schedule::Cosine
        };
        let activation = if pide { Activation::LeakyRelu } else { Activation::Mish };
        let loss = LossSpec { method, constraint };
        match preset {
            Preset::Paper => TrainConfig {
                iterations: if pide { 10_000 } else { 100_000 },
                batch_size: 64,
                n_steps: if shotgun { 10 } else { 100 },
                lr: 1e-3,
                schedule,
                adam: AdamConfig::default(),
                seed: 0,
                eval_every: 1000,
                n_eval_trajectories: 256,
                grad_clip: None,
                loss,
                network: NetworkSpec {
                    hidden_layers: if pide { 2 } else { 4 },
                    width: if pide { 256 } else { 512 },
                    activation,
                    precision: Precision::F32,
                },
            },
            Preset::Desk => TrainConfig {
                iterations: 3000,
                batch_size: 16,
                n_steps: match (shotgun, bench) {
                    (true, _) => 10,
                    (false, Benchmark::Bsb) => 50,
                    _ => 20,
                },
                lr: 1e-3,
                schedule,
                adam: AdamConfig::default(),
                seed: 0,
                eval_every: 100,
                n_eval_trajectories: if bench == Benchmark::Hjb { 16 } else { 64 },
                grad_clip: None,
                loss,
                network: NetworkSpec { hidden_layers: 2, width: 64, activation, precision: Precision::F64 },
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.n_steps == 0 || self.eval_every == 0 {
            return Err(invalid("batch_size, n_steps and eval_every must be >= 1"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(invalid("lr must be positive"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(invalid("grad_clip must be positive"));
            }
        }
        if self.network.hidden_layers == 0 || self.network.width == 0 {
            return Err(invalid("network needs hidden_layers >= 1 and width >= 1"));
        }
        self.schedule.validate()?;
        self.adam.validate()?;
        self.loss.validate()
    }

    pub fn seeds(&self) -> Seeds {
        let rng = KeyedRng::new(self.seed);
        Seeds {
            train: self.seed,
            init: rng.derive(StreamTag::Init, [0, 0, 0]),
            eval: rng.derive(StreamTag::Evaluation, [0, 0, 0]),
        }
    }

    /// Seed of the noise bundle drawn at `iteration`.
    pub fn iteration_seed(&self, iteration: usize) -> u64 {
        KeyedRng::new(self.seed).derive(StreamTag::Iteration, [iteration as u64, 0, 0])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub train: u64,
    pub init: u64,
    pub eval: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iteration: usize,
    pub loss: f64,
    pub lr: f64,
    pub rl2: Option<f64>,
    pub eval_seed: u64,
    /// Optimization time so far, excluding evaluation.
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub problem: String,
    pub d: usize,
    pub config: TrainConfig,
    pub seeds: Seeds,
    pub history: Vec<LogEntry>,
    pub final_rl2: Option<f64>,
    pub train_seconds: f64,
    pub checkpoint: Option<String>,
}

impl RunRecord {
    /// Copy with every timing field zeroed.
    pub fn without_timing(&self) -> RunRecord {
        let mut r = self.clone();
        r.train_seconds = 0.0;
        r.history.iter_mut().for_each(|e| e.wall_seconds = 0.0);
        r
    }

    pub fn seconds_per_iteration(&self) -> Option<f64> {
        (self.config.iterations > 0).then(|| self.train_seconds / self.config.iterations as f64)
    }
}

/// Untrained surrogate for `config`, constrained when the loss asks for it.
pub fn initial_surrogate(problem: &PdeProblem, config: &TrainConfig) -> Result<Surrogate> {
    let net = Surrogate::new(config.network.resolve(problem.d, config.seeds().init))?;
    match config.loss.constraint {
        TerminalMode::Hard => apply_hard_constraint(net, problem),
        TerminalMode::Soft { .. } => Ok(net),
    }
}

fn batch(problem: &PdeProblem, config: &TrainConfig, s: &Surrogate, iteration: usize) -> Result<RolloutBundle> {
    let scheme = config.loss.method.scheme(problem)?;
    let field = problem.fully_coupled().then_some(s as &dyn Field);
    rollout(problem, config.n_steps, scheme, field, config.batch_size, config.iteration_seed(iteration))
}

fn abort(iteration: usize) -> impl FnOnce(Error) -> Error {
    move |e| Error::Aborted { iteration, source: Box::new(e) }
}

/// Runs the optimization. Entries are logged every `eval_every` iterations
/// and after the last one; each records the loss of that iteration's batch
/// before the update.
pub fn train(problem: &PdeProblem, config: &TrainConfig) -> Result<(Surrogate, RunRecord)> {
    config.validate()?;
    config.loss.method.scheme(problem)?;
    let seeds = config.seeds();
    let mut s = initial_surrogate(problem, config)?;
    let eval_set = if config.n_eval_trajectories > 0 {
        Some(generate_reference_trajectories(problem, config.n_eval_trajectories, config.n_steps, seeds.eval)?)
    } else {
        None
    };
    let evaluate = |s: &Surrogate| eval_set.as_ref().map(|set| rl2(s, set)).transpose();

    let mut adam = Adam::new(s.n_params(), config.adam)?;
    let mut params = s.params();
    let mut history = Vec::new();
    let mut train_seconds = 0.0;
    let total = config.iterations;

    for k in 0..total {
        let start = Instant::now();
        let lr = lr_schedule(&config.schedule, k, total, config.lr)?;
        let bundle = batch(problem, config, &s, k).map_err(abort(k))?;
        let objective = total_objective(&config.loss, problem, &bundle).map_err(abort(k))?;
        let (loss, mut grad) = param_gradient(&objective, &s).map_err(abort(k))?;
        if let Some(c) = config.grad_clip {
            clip_grad_norm(&mut grad, c);
        }
        adam.update(&mut params, &grad, lr).map_err(abort(k))?;
        train_seconds += start.elapsed().as_secs_f64();
        if k % config.eval_every == 0 {
            let rl2 = evaluate(&s).map_err(abort(k))?;
            history.push(LogEntry { iteration: k, loss, lr, rl2, eval_seed: seeds.eval, wall_seconds: train_seconds });
        }
        s.set_params(&params).map_err(abort(k))?;
    }

    let bundle = batch(problem, config, &s, total).map_err(abort(total))?;
    let loss = total_loss(&config.loss, &s, problem, &bundle).map_err(abort(total))?;
    let final_rl2 = evaluate(&s).map_err(abort(total))?;
    history.push(LogEntry {
        iteration: total,
        loss,
        lr: lr_schedule(&config.schedule, total, total, config.lr)?,
        rl2: final_rl2,
        eval_seed: seeds.eval,
        wall_seconds: train_seconds,
    });
    let record = RunRecord {
        problem: problem.name.clone(),
        d: problem.d,
        config: config.clone(),
        seeds,
        history,
        final_rl2,
        train_seconds,
        checkpoint: None,
    };
    Ok((s, record))
}

#[cfg(test)]
mod tests;
