//! Layered configuration, run manifests, and logging setup.
//!
//! A subcommand's settings start from defaults, are overlaid with the JSON
//! config file, then with `FLEETNAV_*` environment variables and command-line
//! flags (clap resolves those two, flags first).

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use fleetnav_core::env::GenConfig;
use fleetnav_core::train::suites;

use crate::store::now_ms;

pub const ENV_PREFIX: &str = "FLEETNAV_";
pub const BUILD_REV: &str = env!("FLEETNAV_BUILD_REV");

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config file {path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("invalid setting {path}: {message}")]
    Invalid { path: String, message: String },
    #[error("unknown suite {0:?} (expected empty-room, blocked-line, light-clutter, pretraining, or default)")]
    UnknownSuite(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Recursively overlays `top` onto `base`; objects merge, everything else replaces.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

/// Defaults overlaid with the JSON object in `file`, if any.
pub fn load<T: Serialize + DeserializeOwned + Default>(file: Option<&Path>) -> Result<T, ConfigError> {
    let mut v = serde_json::to_value(T::default()).expect("defaults serialize");
    if let Some(path) = file {
        let text = std::fs::read(path).map_err(|e| ConfigError::File { path: path.into(), message: e.to_string() })?;
        let top: Value = serde_json::from_slice(&text).map_err(|e| ConfigError::File { path: path.into(), message: e.to_string() })?;
        if !top.is_object() {
            return Err(ConfigError::File { path: path.into(), message: "expected a JSON object".into() });
        }
        merge(&mut v, top);
    }
    serde_path_to_error::deserialize(v).map_err(|e| ConfigError::Invalid { path: e.path().to_string(), message: e.inner().to_string() })
}

/// Reads a standalone JSON document (e.g. `--sim-config`).
pub fn read_json<T: DeserializeOwned + Serialize + Default>(path: &Path) -> Result<T, ConfigError> {
    load(Some(path))
}

pub fn suite(name: &str) -> Result<GenConfig, ConfigError> {
    Ok(match name {
        "empty-room" => suites::empty_room(),
        "blocked-line" => suites::blocked_line(),
        "light-clutter" => suites::light_clutter(),
        "pretraining" => suites::pretraining(),
        "default" => GenConfig::default(),
        other => return Err(ConfigError::UnknownSuite(other.into())),
    })
}

/// Everything needed to reproduce a run, written before any work starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: Value,
    pub seeds: Vec<u64>,
    pub build: String,
    pub output_dir: PathBuf,
    pub started_at_ms: u64,
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize, seeds: Vec<u64>, output_dir: &Path) -> Self {
        Self {
            command: command.into(),
            argv: std::env::args().collect(),
            config: serde_json::to_value(config).expect("configs serialize"),
            seeds,
            build: format!("fleetnav {} ({BUILD_REV})", env!("CARGO_PKG_VERSION")),
            output_dir: output_dir.into(),
            started_at_ms: now_ms(),
        }
    }

    /// Creates `output_dir` and writes `manifest.json` into it.
    pub fn write(&self) -> Result<PathBuf, ConfigError> {
        std::fs::create_dir_all(&self.output_dir)?;
        let path = self.output_dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_vec_pretty(self).expect("manifest serializes"))?;
        Ok(path)
    }
}

/// Line-oriented JSON logs on stderr. `FLEETNAV_LOG` or `--log` set the filter.
pub fn init_logging(filter: &str) {
    let filter = tracing_subscriber::EnvFilter::try_new(filter).unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt().json().with_writer(std::io::stderr).with_env_filter(filter).with_target(false).try_init();
}
