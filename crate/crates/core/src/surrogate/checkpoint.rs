//! Versioned binary parameter checkpoints.
//!
//! Layout: magic `BSDECKPT`, format version (u32 LE), header length (u32 LE),
//! JSON header, then the parameters as little-endian f64.

use serde::{Deserialize, Serialize};

use super::{apply_hard_constraint, Mlp, NetworkConfig, Surrogate};
use crate::error::{Error, Result};
use crate::problems::PdeProblem;

pub const MAGIC: &[u8; 8] = b"BSDECKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub network: NetworkConfig,
    pub hard_constraint: bool,
    /// Problem the hard constraint refers to.
    pub problem: Option<String>,
    pub n_params: usize,
    /// Free-form configuration echo written by the caller.
    pub config: serde_json::Value,
}

pub fn encode(s: &Surrogate, config: serde_json::Value) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        network: s.config().clone(),
        hard_constraint: s.is_hard(),
        problem: match s.constraint() {
            super::Constraint::Hard(p) => Some(p.name.clone()),
            super::Constraint::None => None,
        },
        n_params: s.n_params(),
        config,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * header.n_params);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in s.params() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = at.checked_add(n).filter(|&e| e <= bytes.len());
    let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
    let out = &bytes[*at..end];
    *at = end;
    Ok(out)
}

/// Parses a checkpoint into its header and parameter vector.
pub fn decode(bytes: &[u8]) -> Result<(CheckpointHeader, Vec<f64>)> {
    let mut at = 0;
    if take(bytes, &mut at, 8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(bytes, &mut at, 4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let len = u32::from_le_bytes(take(bytes, &mut at, 4)?.try_into().expect("4 bytes")) as usize;
    let header: CheckpointHeader =
        serde_json::from_slice(take(bytes, &mut at, len)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let raw = take(bytes, &mut at, 8 * header.n_params)?;
    if at != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    let params = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((header, params))
}

/// Rebuilds a surrogate; hard-constrained checkpoints need their problem.
pub fn load(bytes: &[u8], problem: Option<&PdeProblem>) -> Result<(Surrogate, CheckpointHeader)> {
    let (header, params) = decode(bytes)?;
    let mut net = Mlp::new(header.network.clone())?;
    net.set_params(&params)?;
    let s = Surrogate::from_net(net);
    let s = if header.hard_constraint {
        let p = problem.ok_or_else(|| Error::Checkpoint("hard-constrained checkpoint needs its problem".into()))?;
        if header.problem.as_deref() != Some(p.name.as_str()) {
            return Err(Error::Checkpoint(format!(
                "checkpoint was trained on {:?}, not {}",
                header.problem, p.name
            )));
        }
        apply_hard_constraint(s, p)?
    } else {
        s
    };
    Ok((s, header))
}
