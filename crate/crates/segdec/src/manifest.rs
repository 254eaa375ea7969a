//! Run manifests: the fully resolved configuration of a run, stored as TOML
//! in the run directory so the run can be repeated exactly.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use segdec_core::train::Hyperparams;
use segdec_core::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::datasets::{DatasetFormat, LoadOptions};

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSection {
    pub format: DatasetFormat,
    pub root: PathBuf,
    /// Subset used for training (formats with a fixed split).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_subset: Option<String>,
    /// Subset used for evaluation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_subset: Option<String>,
    pub options: LoadOptions,
}

impl DatasetSection {
    pub fn train_options(&self) -> LoadOptions {
        LoadOptions { subset: self.train_subset.clone(), ..self.options.clone() }
    }

    pub fn test_options(&self) -> LoadOptions {
        LoadOptions { subset: self.test_subset.clone(), ..self.options.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupervisionSection {
    /// Pixel-labeled positives.
    pub n: usize,
    /// All positives in the training split.
    pub n_all: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSection {
    /// Fixed decision threshold; absent means the F1-maximizing one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub folds: Option<usize>,
    /// Evaluate the test subset after every epoch.
    #[serde(default)]
    pub validate: bool,
    /// Also write a checkpoint every this many epochs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub dataset: DatasetSection,
    pub supervision: SupervisionSection,
    pub hyperparams: Hyperparams,
    pub model: ModelConfig,
    pub eval: EvalSection,
}

impl RunManifest {
    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, self.to_toml()?).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }

    /// Reads a manifest file, or `manifest.toml` inside a run directory.
    pub fn read(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = fs::read_to_string(&file).with_context(|| format!("cannot read {}", file.display()))?;
        toml::from_str(&text).with_context(|| format!("malformed manifest {}", file.display()))
    }
}
