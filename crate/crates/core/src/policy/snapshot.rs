//! Versioned, hashed policy container.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic "FNPOLICY"
//! 8       4     manifest length M (u32)
//! 12      M     manifest, UTF-8 JSON with "format_version": 1
//! 12+M    8     weight section length W (u64)
//! 20+M    W     weights: for each layer in order, weights (out x in, row-major)
//!               then bias, as f32
//! 20+M+W  32    SHA-256 of manifest bytes || weight bytes (the content hash)
//! ```

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::mlp::{Activation, Dense, Mlp, MlpError};
use crate::sim::{FeatureKind, SimConfig};

pub const POLICY_MAGIC: &[u8; 8] = b"FNPOLICY";
pub const POLICY_FORMAT_VERSION: u32 = 1;

/// Observation layout a policy was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObsSpec {
    pub features: FeatureKind,
    pub feature_len: usize,
    pub history: usize,
    pub d_norm: f64,
}

impl ObsSpec {
    pub fn from_sim(config: &SimConfig) -> Self {
        Self {
            features: config.observation.features,
            feature_len: config.observation.feature_len(&config.camera),
            history: config.observation.history,
            d_norm: config.observation.d_norm,
        }
    }

    pub fn frame_len(&self) -> usize {
        self.feature_len + 2
    }

    pub fn input_len(&self) -> usize {
        self.history * self.frame_len()
    }

    /// Whether observations from `config` fit this spec.
    pub fn matches_sim(&self, config: &SimConfig) -> bool {
        *self == Self::from_sim(config)
    }
}

/// How the actor output maps to wheel commands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ActionSpec {
    /// Residual over the unicycle controller, scaled by `beta`.
    Residual { beta: f64 },
    /// Wheel commands regressed end to end.
    Direct,
}

impl ActionSpec {
    pub const DIM: usize = 2;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerManifest {
    input: usize,
    output: usize,
    activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    policy_id: u64,
    obs_spec: ObsSpec,
    action_spec: ActionSpec,
    action_low: f64,
    action_high: f64,
    layers: Vec<LayerManifest>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SnapshotError {
    #[error("malformed policy container: {0}")]
    Parse(String),
    #[error("content hash mismatch")]
    HashMismatch,
    #[error("unsupported policy format_version {0}")]
    UnsupportedVersion(u32),
    #[error("actor input width {actor} does not match observation spec {spec}")]
    SpecMismatch { actor: usize, spec: usize },
    #[error(transparent)]
    Mlp(#[from] MlpError),
}

/// Immutable, versioned policy: observation/action contract plus actor weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySnapshot {
    pub policy_id: u64,
    pub obs_spec: ObsSpec,
    pub action_spec: ActionSpec,
    pub actor: Mlp,
    pub content_hash: [u8; 32],
}

impl PolicySnapshot {
    pub fn new(policy_id: u64, obs_spec: ObsSpec, action_spec: ActionSpec, actor: Mlp) -> Result<Self, SnapshotError> {
        actor.validate()?;
        if actor.input_width() != obs_spec.input_len() {
            return Err(SnapshotError::SpecMismatch { actor: actor.input_width(), spec: obs_spec.input_len() });
        }
        if actor.output_width() != 2 * ActionSpec::DIM {
            return Err(SnapshotError::Parse(alloc::format!("actor must emit {} values", 2 * ActionSpec::DIM)));
        }
        let mut snap = Self { policy_id, obs_spec, action_spec, actor, content_hash: [0; 32] };
        let (manifest, weights) = snap.sections();
        snap.content_hash = content_digest(&manifest, &weights);
        Ok(snap)
    }

    pub fn hash_hex(&self) -> String {
        hex32(&self.content_hash)
    }

    fn sections(&self) -> (Vec<u8>, Vec<u8>) {
        let manifest = Manifest {
            format_version: POLICY_FORMAT_VERSION,
            policy_id: self.policy_id,
            obs_spec: self.obs_spec,
            action_spec: self.action_spec,
            action_low: -1.0,
            action_high: 1.0,
            layers: self
                .actor
                .layers
                .iter()
                .map(|l| LayerManifest { input: l.input, output: l.output, activation: l.activation })
                .collect(),
        };
        let manifest = serde_json::to_vec(&manifest).expect("manifest serialization is infallible");
        let mut weights = Vec::with_capacity(self.actor.param_count() * 4);
        for l in &self.actor.layers {
            for v in l.weights.iter().chain(l.bias.iter()) {
                weights.extend_from_slice(&v.to_le_bytes());
            }
        }
        (manifest, weights)
    }

    /// Canonical container bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (manifest, weights) = self.sections();
        let mut out = Vec::with_capacity(8 + 4 + manifest.len() + 8 + weights.len() + 32);
        out.extend_from_slice(POLICY_MAGIC);
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&(weights.len() as u64).to_le_bytes());
        out.extend_from_slice(&weights);
        out.extend_from_slice(&content_digest(&manifest, &weights));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SnapshotError> {
        let err = |m: &str| SnapshotError::Parse(String::from(m));
        if bytes.len() < 12 || &bytes[..8] != POLICY_MAGIC {
            return Err(err("bad magic"));
        }
        let m_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let m_end = 12usize.checked_add(m_len).ok_or_else(|| err("manifest length overflow"))?;
        if bytes.len() < m_end + 8 {
            return Err(err("truncated manifest"));
        }
        let manifest_bytes = &bytes[12..m_end];
        let w_len = u64::from_le_bytes(bytes[m_end..m_end + 8].try_into().expect("8 bytes")) as usize;
        let w_start = m_end + 8;
        let w_end = w_start.checked_add(w_len).ok_or_else(|| err("weight length overflow"))?;
        if bytes.len() != w_end + 32 {
            return Err(err("truncated or oversized weight section"));
        }
        let weight_bytes = &bytes[w_start..w_end];
        let stored: [u8; 32] = bytes[w_end..].try_into().expect("32 bytes");
        let digest = content_digest(manifest_bytes, weight_bytes);
        if digest != stored {
            return Err(SnapshotError::HashMismatch);
        }
        let manifest: Manifest =
            serde_json::from_slice(manifest_bytes).map_err(|e| SnapshotError::Parse(alloc::format!("manifest: {e}")))?;
        if manifest.format_version != POLICY_FORMAT_VERSION {
            return Err(SnapshotError::UnsupportedVersion(manifest.format_version));
        }
        let expected: usize = manifest.layers.iter().map(|l| (l.input * l.output + l.output) * 4).sum();
        if expected != weight_bytes.len() {
            return Err(err("weight section does not match layer shapes"));
        }
        let mut floats = weight_bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
        let mut layers = Vec::with_capacity(manifest.layers.len());
        for lm in &manifest.layers {
            let mut l = Dense::zeros(lm.input, lm.output, lm.activation);
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = floats.next().ok_or_else(|| err("weights ended early"))?;
            }
            layers.push(l);
        }
        let snap = Self::new(manifest.policy_id, manifest.obs_spec, manifest.action_spec, Mlp { layers })?;
        debug_assert_eq!(snap.content_hash, stored);
        Ok(snap)
    }
}

pub fn content_digest(manifest: &[u8], weights: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(manifest);
    h.update(weights);
    h.finalize().into()
}

/// SHA-256 of arbitrary bytes.
pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

pub fn hex32(bytes: &[u8; 32]) -> String {
    const HEX: &[u8; 16] = b"0123456789abcdef";
    let mut s = String::with_capacity(64);
    for b in bytes {
        s.push(HEX[(b >> 4) as usize] as char);
        s.push(HEX[(b & 0xf) as usize] as char);
    }
    s
}
