//! Command implementations behind the `bsde` binary.

pub mod config;
pub mod error;
pub mod plot;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use bsde_core::biaslab::{run_suite, CheckRecord, Suite, SuiteParams};
use bsde_core::problems::Benchmark;
use bsde_core::stochastics::{KeyedRng, StreamTag};
use bsde_core::surrogate::checkpoint;
use bsde_core::training::{generate_reference_trajectories, rl2, train, LogEntry, Preset, RunRecord};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

pub use config::{load_config, Loaded, Resolved};
pub use error::CliError;

pub const LOG_FILE: &str = "run.log";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CSV_FILE: &str = "history.csv";
pub const SVG_FILE: &str = "rl2.svg";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BIASLAB_FILE: &str = "biaslab.jsonl";

/// Column order of the history table.
pub const CSV_HEADER: &str = "iteration,loss,lr,rl2,wall_seconds";

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Artifacts {
    pub log: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub svg: Option<PathBuf>,
}

impl Artifacts {
    pub fn paths(&self) -> Vec<&Path> {
        [&self.log, &self.checkpoint, &self.csv, &self.svg].into_iter().flatten().map(PathBuf::as_path).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunManifest {
    pub status: RunStatus,
    pub diagnostic: Option<String>,
    pub config_path: PathBuf,
    pub config_sha256: String,
    pub out_dir: PathBuf,
    pub artifacts: Artifacts,
    pub resolved: Resolved,
    pub final_rl2: Option<f64>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub version: String,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn json_line(value: &impl Serialize) -> String {
    serde_json::to_string(value).expect("log records serialize") + "\n"
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn history_csv(history: &[LogEntry]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for e in history {
        out.push_str(&format!("{},{},{},{},{}\n", e.iteration, e.loss, e.lr, opt(e.rl2), e.wall_seconds));
    }
    out
}

pub fn history_svg(history: &[LogEntry]) -> String {
    let with_rl2: Vec<&LogEntry> = history.iter().filter(|e| e.rl2.is_some()).collect();
    plot::render(&[
        plot::Panel {
            title: "RL2 vs iteration",
            x_label: "iteration",
            y_label: "RL2",
            points: with_rl2.iter().map(|e| (e.iteration as f64, e.rl2.unwrap())).collect(),
        },
        plot::Panel {
            title: "RL2 vs wall time",
            x_label: "wall time (s)",
            y_label: "RL2",
            points: with_rl2.iter().map(|e| (e.wall_seconds, e.rl2.unwrap())).collect(),
        },
    ])
}

fn write_manifest(out: &Path, manifest: &RunManifest) -> Result<(), CliError> {
    for path in manifest.artifacts.paths() {
        if !path.exists() {
            return Err(CliError::Runtime(format!("artifact {} is missing", path.display())));
        }
    }
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(out.join(MANIFEST_FILE), text + "\n")?;
    Ok(())
}

/// Trains from a config file and writes the run artifacts into `out`.
///
/// A training abort still writes the log and a manifest flagged failed, then
/// returns the runtime error.
pub fn run_command(config_path: &Path, out: &Path, seed: Option<u64>, preset: Option<Preset>) -> Result<RunManifest, CliError> {
    let started = now();
    let Loaded { problem, resolved, bytes } = load_config(config_path, preset, seed)?;
    fs::create_dir_all(out)?;
    let log_path = out.join(LOG_FILE);
    let mut log = fs::File::create(&log_path)?;
    log.write_all(json_line(&json!({ "event": "config", "resolved": resolved, "seeds": resolved.train.seeds() })).as_bytes())?;

    let mut manifest = RunManifest {
        status: RunStatus::Completed,
        diagnostic: None,
        config_path: config_path.to_path_buf(),
        config_sha256: sha256_hex(&bytes),
        out_dir: out.to_path_buf(),
        artifacts: Artifacts { log: Some(log_path), ..Artifacts::default() },
        resolved: resolved.clone(),
        final_rl2: None,
        started_unix: started,
        finished_unix: started,
        version: env!("CARGO_PKG_VERSION").to_string(),
    };

    let (surrogate, mut record): (_, RunRecord) = match train(&problem, &resolved.train) {
        Ok(r) => r,
        Err(e) => {
            let msg = e.to_string();
            log.write_all(json_line(&json!({ "event": "aborted", "error": msg })).as_bytes())?;
            drop(log);
            manifest.status = RunStatus::Failed;
            manifest.diagnostic = Some(msg.clone());
            manifest.finished_unix = now();
            write_manifest(out, &manifest)?;
            return Err(CliError::Runtime(msg));
        }
    };

    let ckpt_path = out.join(CHECKPOINT_FILE);
    let echo = serde_json::to_value(&resolved).expect("config serializes");
    fs::write(&ckpt_path, checkpoint::encode(&surrogate, echo)?)?;
    record.checkpoint = Some(ckpt_path.display().to_string());
    for entry in &record.history {
        let mut line = serde_json::to_value(entry).expect("entry serializes");
        line["event"] = json!("log");
        log.write_all(json_line(&line).as_bytes())?;
    }
    log.write_all(
        json_line(&json!({
            "event": "done",
            "final_rl2": record.final_rl2,
            "train_seconds": record.train_seconds,
            "checkpoint": record.checkpoint,
        }))
        .as_bytes(),
    )?;
    drop(log);

    let csv_path = out.join(CSV_FILE);
    fs::write(&csv_path, history_csv(&record.history))?;
    let svg_path = out.join(SVG_FILE);
    fs::write(&svg_path, history_svg(&record.history))?;

    manifest.artifacts.checkpoint = Some(ckpt_path);
    manifest.artifacts.csv = Some(csv_path);
    manifest.artifacts.svg = Some(svg_path);
    manifest.final_rl2 = record.final_rl2;
    manifest.finished_unix = now();
    write_manifest(out, &manifest)?;
    Ok(manifest)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub checkpoint: PathBuf,
    pub problem: String,
    pub d: usize,
    pub seed: u64,
    pub n_trajectories: usize,
    pub rl2: f64,
}

/// RL2 of a saved checkpoint against references drawn from a fresh seed.
pub fn eval_command(
    config_path: &Path,
    checkpoint_path: &Path,
    seed: Option<u64>,
    preset: Option<Preset>,
) -> Result<EvalReport, CliError> {
    let Loaded { problem, resolved, .. } = load_config(config_path, preset, None)?;
    let bytes = fs::read(checkpoint_path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", checkpoint_path.display())))?;
    let (surrogate, header) = checkpoint::load(&bytes, Some(&problem))?;
    if header.network.input_dim != problem.d + 1 {
        return Err(CliError::Validation(format!(
            "checkpoint expects d = {}, config resolves d = {}",
            header.network.input_dim - 1,
            problem.d
        )));
    }
    let c = &resolved.train;
    let seed = seed.unwrap_or_else(|| KeyedRng::new(c.seed).derive(StreamTag::Evaluation, [1, 0, 0]));
    let set = generate_reference_trajectories(&problem, c.n_eval_trajectories.max(1), c.n_steps, seed)?;
    Ok(EvalReport {
        checkpoint: checkpoint_path.to_path_buf(),
        problem: problem.name.clone(),
        d: problem.d,
        seed,
        n_trajectories: set.trajectories.len(),
        rl2: rl2(&surrogate, &set)?,
    })
}

/// Runs a biaslab suite and writes one JSON record per check.
///
/// Failed checks are reported through [`CliError::Verification`] after the
/// report is written.
pub fn biaslab_command(
    suite: Suite,
    params_path: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
) -> Result<(PathBuf, Vec<CheckRecord>), CliError> {
    let mut params = match params_path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Validation(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str::<SuiteParams>(&text).map_err(|e| CliError::Validation(format!("config parse error: {e}")))?
        }
        None => SuiteParams::default(),
    };
    if let Some(s) = seed {
        params.seed = s;
    }
    let records = run_suite(suite, &params)?;
    fs::create_dir_all(out)?;
    let path = out.join(BIASLAB_FILE);
    let text: String = records.iter().map(json_line).collect();
    fs::write(&path, text)?;
    let failed: Vec<&str> = records.iter().filter(|r| !r.pass).map(|r| r.check.as_str()).collect();
    if !failed.is_empty() {
        return Err(CliError::Verification(format!("failed checks: {}", failed.join(", "))));
    }
    Ok((path, records))
}

pub fn list_problems() -> String {
    let mut out = String::new();
    for b in Benchmark::ALL {
        out.push_str(&format!(
            "{:<5} d={:<4} params=[{}]  {}\n",
            b.as_str(),
            b.default_dim(),
            b.parameter_names().join(", "),
            b.description()
        ));
    }
    out
}
