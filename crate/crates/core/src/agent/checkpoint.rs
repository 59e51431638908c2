//! JSON checkpoint layout:
//!
//! ```text
//! {
//!   "format": "mixflow-qnet",
//!   "version": 1,
//!   "layer_sizes": [input, hidden.., 2],
//!   "dueling": true,
//!   "config_fingerprint": "<hex>",
//!   "norm": {"count": n, "mean": [..], "m2": [..]},
//!   "params_sha256": "<hex of the little-endian parameter bytes>",
//!   "params": [..]
//! }
//! ```
//!
//! Floats are written in shortest round-trip form, so a save/load cycle is
//! bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::network::{QNetwork, N_ACTIONS};
use super::replay::RunningNorm;
use super::Policy;
use crate::error::AgentError;

pub const CHECKPOINT_FORMAT: &str = "mixflow-qnet";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub dueling: bool,
    pub config_fingerprint: String,
    pub norm: RunningNorm,
    pub params_sha256: String,
    pub params: Vec<f64>,
}

fn digest(params: &[f64]) -> String {
    let mut h = Sha256::new();
    for p in params {
        h.update(p.to_le_bytes());
    }
    hex::encode(h.finalize())
}

impl Checkpoint {
    pub fn from_policy(policy: &Policy) -> Self {
        let params = policy.net.params().to_vec();
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            layer_sizes: policy.net.layer_sizes(),
            dueling: policy.net.dueling(),
            config_fingerprint: policy.fingerprint.clone(),
            norm: policy.norm.clone(),
            params_sha256: digest(&params),
            params,
        }
    }

    pub fn into_policy(self) -> Result<Policy, AgentError> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(AgentError::Corrupt(format!("unknown format `{}`", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(AgentError::Version {
                found: self.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let n = self.layer_sizes.len();
        if n < 2 || self.layer_sizes[n - 1] != N_ACTIONS {
            return Err(AgentError::Corrupt(format!("bad layer sizes {:?}", self.layer_sizes)));
        }
        if digest(&self.params) != self.params_sha256 {
            return Err(AgentError::Corrupt("parameter digest mismatch".into()));
        }
        let input = self.layer_sizes[0];
        if self.norm.mean.len() != input || self.norm.m2.len() != input {
            return Err(AgentError::Corrupt("normalization size does not match input".into()));
        }
        let net = QNetwork::from_params(input, &self.layer_sizes[1..n - 1], self.dueling, self.params)
            .map_err(|e| AgentError::Corrupt(e.to_string()))?;
        Ok(Policy {
            net,
            norm: self.norm,
            fingerprint: self.config_fingerprint,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, AgentError> {
        serde_json::from_str(text).map_err(|e| AgentError::Corrupt(e.to_string()))
    }
}

pub fn save_checkpoint(policy: &Policy, path: &Path) -> Result<(), AgentError> {
    fs::write(path, Checkpoint::from_policy(policy).to_json()).map_err(|source| AgentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads a policy; `expected_input` rejects checkpoints built for another observation size.
pub fn load_checkpoint(path: &Path, expected_input: Option<usize>) -> Result<Policy, AgentError> {
    let text = fs::read_to_string(path).map_err(|source| AgentError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let policy = Checkpoint::from_json(&text)?.into_policy()?;
    if let Some(n) = expected_input {
        if policy.net.input_size() != n {
            return Err(AgentError::Dimension {
                expected: n,
                got: policy.net.input_size(),
            });
        }
    }
    Ok(policy)
}
