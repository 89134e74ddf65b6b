//! TOML run configuration: `[problem]`, `[network]`, `[loss]`, `[train]`.

use std::collections::BTreeMap;
use std::path::Path;

use bsde_core::losses::{LossSpec, Method, TerminalMode};
use bsde_core::problems::{make_problem, Benchmark, PdeProblem};
use bsde_core::surrogate::{Activation, Precision};
use bsde_core::training::{Preset, Schedule, TrainConfig, SHOTGUN_TAU};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Keys without a default.
pub const REQUIRED_KEYS: [&str; 2] = ["problem.name", "loss.method"];

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(default)]
    pub problem: RawProblem,
    #[serde(default)]
    pub network: RawNetwork,
    #[serde(default)]
    pub loss: RawLoss,
    #[serde(default)]
    pub train: RawTrain,
}

/// Besides `name` and `dim`, every key is a benchmark parameter override.
#[derive(Clone, Debug, Default, Deserialize)]
pub struct RawProblem {
    pub name: Option<String>,
    pub dim: Option<usize>,
    #[serde(flatten)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawNetwork {
    pub hidden_layers: Option<usize>,
    pub width: Option<usize>,
    pub activation: Option<String>,
    pub precision: Option<String>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawLoss {
    pub method: Option<String>,
    pub m: Option<usize>,
    pub m1: Option<usize>,
    pub m2: Option<usize>,
    pub tau: Option<f64>,
    pub constraint: Option<String>,
    pub terminal_weight: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawTrain {
    pub preset: Option<String>,
    pub iterations: Option<usize>,
    pub batch_size: Option<usize>,
    pub n_steps: Option<usize>,
    pub lr: Option<f64>,
    pub schedule: Option<String>,
    pub boundaries: Option<Vec<f64>>,
    pub factors: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub eval_every: Option<usize>,
    pub eval_trajectories: Option<usize>,
    pub grad_clip: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
}

/// Fully resolved configuration, echoed into logs and checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Resolved {
    pub problem: String,
    pub dim: usize,
    pub params: BTreeMap<String, f64>,
    pub preset: Preset,
    pub train: TrainConfig,
}

impl Resolved {
    pub fn loss(&self) -> LossSpec {
        self.train.loss
    }
}

pub struct Loaded {
    pub problem: PdeProblem,
    pub resolved: Resolved,
    /// Exact bytes of the file, for hashing.
    pub bytes: Vec<u8>,
}

fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn parse_method(raw: &RawLoss, name: &str) -> Result<Method, CliError> {
    let allowed: &[&str] = match name {
        "em" | "heun" | "fspinns" => &[],
        "multishot_em" => &["m"],
        "shotgun" => &["m", "tau"],
        "unem" => &["m1", "m2"],
        "unshotgun" => &["m1", "m2", "tau"],
        other => {
            return Err(validation(format!(
                "unknown loss.method `{other}` (expected one of {})",
                Method::NAMES.join(", ")
            )))
        }
    };
    let given = [("m", raw.m.is_some()), ("m1", raw.m1.is_some()), ("m2", raw.m2.is_some()), ("tau", raw.tau.is_some())];
    for (key, present) in given {
        if present && !allowed.contains(&key) {
            return Err(validation(format!("loss.{key} does not apply to method {name}")));
        }
    }
    let tau = raw.tau.unwrap_or(SHOTGUN_TAU);
    let method = match name {
        "em" => Method::Em,
        "heun" => Method::Heun,
        "fspinns" => Method::Fspinns,
        "multishot_em" => Method::MultishotEm { m: raw.m.unwrap_or(10) },
        "shotgun" => Method::Shotgun { m: raw.m.unwrap_or(50), tau },
        "unem" => Method::Unem { m1: raw.m1.unwrap_or(5), m2: raw.m2.unwrap_or(5) },
        _ => Method::Unshotgun { m1: raw.m1.unwrap_or(5), m2: raw.m2.unwrap_or(5), tau },
    };
    method.validate().map_err(|e| validation(e.to_string()))?;
    Ok(method)
}

fn parse_constraint(raw: &RawLoss) -> Result<TerminalMode, CliError> {
    match raw.constraint.as_deref().unwrap_or("soft") {
        "soft" => Ok(TerminalMode::Soft { weight: raw.terminal_weight.unwrap_or(1.0) }),
        "hard" if raw.terminal_weight.is_some() => Err(validation("loss.terminal_weight only applies to soft constraints")),
        "hard" => Ok(TerminalMode::Hard),
        other => Err(validation(format!("unknown loss.constraint `{other}` (expected soft or hard)"))),
    }
}

/// Resolves a parsed file. `preset` from the command line wins over the file's.
pub fn resolve(raw: RawConfig, preset: Option<Preset>, seed: Option<u64>) -> Result<(PdeProblem, Resolved), CliError> {
    let missing: Vec<&str> = REQUIRED_KEYS
        .iter()
        .copied()
        .filter(|k| match *k {
            "problem.name" => raw.problem.name.is_none(),
            _ => raw.loss.method.is_none(),
        })
        .collect();
    if !missing.is_empty() {
        return Err(validation(format!("missing required keys: {}", missing.join(", "))));
    }
    let name = raw.problem.name.as_deref().expect("checked above");
    let bench: Benchmark = name.parse().map_err(|e: bsde_core::Error| validation(e.to_string()))?;
    let preset = match (preset, raw.train.preset.as_deref()) {
        (Some(p), _) => p,
        (None, Some(s)) => s.parse().map_err(|e: bsde_core::Error| validation(e.to_string()))?,
        (None, None) => Preset::Paper,
    };
    let method = parse_method(&raw.loss, raw.loss.method.as_deref().expect("checked above"))?;
    let constraint = parse_constraint(&raw.loss)?;
    let dim = raw.problem.dim.unwrap_or(preset.dimension(bench));
    let problem = make_problem(name, Some(dim), &raw.problem.params).map_err(|e| validation(e.to_string()))?;
    method.scheme(&problem).map_err(|e| validation(e.to_string()))?;

    let mut c = TrainConfig::preset(preset, bench, method, constraint);
    let n = &raw.network;
    if let Some(v) = n.hidden_layers {
        c.network.hidden_layers = v;
    }
    if let Some(v) = n.width {
        c.network.width = v;
    }
    if let Some(v) = &n.activation {
        c.network.activation = match v.as_str() {
            "mish" => Activation::Mish,
            "leaky-relu" => Activation::LeakyRelu,
            other => return Err(validation(format!("unknown network.activation `{other}` (expected mish or leaky-relu)"))),
        };
    }
    if let Some(v) = &n.precision {
        c.network.precision = match v.as_str() {
            "f32" => Precision::F32,
            "f64" => Precision::F64,
            other => return Err(validation(format!("unknown network.precision `{other}` (expected f32 or f64)"))),
        };
    }
    let t = &raw.train;
    macro_rules! set {
        ($($field:ident => $target:expr),*) => {
            $(if let Some(v) = t.$field.clone() { $target = v; })*
        };
    }
    set!(iterations => c.iterations, batch_size => c.batch_size, n_steps => c.n_steps, lr => c.lr,
         seed => c.seed, eval_every => c.eval_every, eval_trajectories => c.n_eval_trajectories,
         beta1 => c.adam.beta1, beta2 => c.adam.beta2, eps => c.adam.eps);
    if t.grad_clip.is_some() {
        c.grad_clip = t.grad_clip;
    }
    if let Some(seed) = seed {
        c.seed = seed;
    }
    c.schedule = match (t.schedule.as_deref(), &t.boundaries, &t.factors) {
        (Some("cosine"), None, None) => Schedule::Cosine,
        (Some("cosine"), _, _) => {
            return Err(validation("train.boundaries and train.factors only apply to the piecewise schedule"))
        }
        (None | Some("piecewise"), Some(b), Some(f)) => Schedule::Piecewise { boundaries: b.clone(), factors: f.clone() },
        (None, None, None) => c.schedule.clone(),
        (Some("piecewise"), None, None) if matches!(c.schedule, Schedule::Piecewise { .. }) => c.schedule.clone(),
        (None | Some("piecewise"), _, _) => {
            return Err(validation("a piecewise schedule needs both train.boundaries and train.factors"))
        }
        (Some(other), _, _) => {
            return Err(validation(format!("unknown train.schedule `{other}` (expected cosine or piecewise)")))
        }
    };
    c.validate().map_err(|e| validation(e.to_string()))?;
    let resolved = Resolved { problem: bench.to_string(), dim, params: raw.problem.params, preset, train: c };
    Ok((problem, resolved))
}

pub fn parse_str(text: &str) -> Result<RawConfig, CliError> {
    toml::from_str(text).map_err(|e| CliError::Validation(format!("config parse error: {e}")))
}

/// Reads, parses and resolves a configuration file.
pub fn load_config(path: &Path, preset: Option<Preset>, seed: Option<u64>) -> Result<Loaded, CliError> {
    let bytes = std::fs::read(path).map_err(|e| validation(format!("cannot read {}: {e}", path.display())))?;
    let text = std::str::from_utf8(&bytes).map_err(|_| validation(format!("{} is not UTF-8", path.display())))?;
    let (problem, resolved) = resolve(parse_str(text)?, preset, seed)?;
    Ok(Loaded { problem, resolved, bytes })
}
