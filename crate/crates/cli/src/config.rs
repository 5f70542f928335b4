//! JSON run configuration. Every key is optional; command-line flags take
//! precedence over whatever the file sets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::fail::{usage, Fail};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// CFA kind, optionally with a base (`nona`, `nona-grbg`, ...).
    pub pattern: Option<String>,
    pub sigma: Option<Sigmas>,
    pub seed: Option<u64>,
    pub model: ModelSection,
    pub train: TrainSection,
    pub paths: PathsSection,
}

/// A single noise level or a list of them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sigmas {
    One(f64),
    Many(Vec<f64>),
}

impl Sigmas {
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            Sigmas::One(s) => vec![*s],
            Sigmas::Many(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub widths: Option<Vec<usize>>,
    pub disc_widths: Option<Vec<usize>>,
    pub k: Option<usize>,
    pub r: Option<usize>,
    pub toy: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub steps: Option<u64>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub betas: Option<[f64; 2]>,
    pub lambda_g: Option<f64>,
    pub variant: Option<String>,
    pub patch_size: Option<usize>,
    pub stride: Option<usize>,
    pub checkpoint_interval: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Fail> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Fail::data(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
    }

    pub fn load_opt(path: Option<&Path>) -> Result<Self, Fail> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}

/// `flag` if given, else `config`, else a usage error naming the flag.
pub fn required<T>(flag: Option<T>, config: Option<T>, name: &str) -> Result<T, Fail> {
    flag.or(config)
        .ok_or_else(|| usage(format!("missing --{name} (flag or config)")))
}
