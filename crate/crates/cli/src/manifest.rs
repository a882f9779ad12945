use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Distortion settings shared by every entry of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub sigma_cp: f64,
    /// Entry `i` (in sorted input order) uses `seed + i`.
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_displacement: Option<f64>,
    /// Set when `sigma_cp` came from calibration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_mean_px: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_trials: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub stem: String,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    /// Paths are relative to the dataset root.
    pub image: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    pub grid: PathBuf,
    pub cps: PathBuf,
    pub mean_displacement_px: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Directory holding the manifest; not serialised.
    #[serde(skip)]
    pub root: PathBuf,
    pub version: String,
    pub spec: DatasetSpec,
    pub images: usize,
    pub pixels: usize,
    /// Pooled per-pixel displacement of the ground-truth grids.
    pub mean_displacement_px: f64,
    pub std_displacement_px: f64,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn resolve(&self, relative: &Path) -> PathBuf {
        self.root.join(relative)
    }

    pub fn save(&self) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(self.path(), text).with_context(|| format!("writing {}", self.path().display()))
    }

    /// Loads `<root>/manifest.json` and checks every referenced file exists.
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let mut manifest: Manifest =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        manifest.root = root.to_path_buf();
        let missing: Vec<_> = manifest
            .entries
            .iter()
            .flat_map(|e| [Some(&e.image), e.labels.as_ref(), Some(&e.grid), Some(&e.cps)])
            .flatten()
            .filter(|p| !manifest.resolve(p).is_file())
            .collect();
        if !missing.is_empty() {
            bail!("manifest references missing files: {missing:?}");
        }
        Ok(manifest)
    }
}
