//! Experiment configuration file and the append-only experiment manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::renderer::{RenderConfig, MANIFEST_FILE};
use crate::training::{sha256_hex, TrainConfig};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const EXPERIMENT_MANIFEST_FILE: &str = "experiment.json";
pub const EXPERIMENT_MANIFEST_VERSION: u32 = 1;
/// Environment variable naming the configuration file when `--config` is absent.
pub const CONFIG_ENV: &str = "FERATT_CONFIG";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    /// Rendered dataset used for training.
    pub train: Option<PathBuf>,
    /// Rendered dataset used for per-epoch evaluation.
    pub eval: Option<PathBuf>,
}

/// One JSON document covering rendering, training and dataset locations.
///
/// ```json
/// {
///   "schema_version": 1,
///   "render": { "transform": {...}, "augmentation": {...} },
///   "train": { "epochs": 60, "batch_size": 32, "arm": "att-rep-cls", ... },
///   "data": { "train": "data/train", "eval": "data/test" }
/// }
/// ```
/// Every section is optional and falls back to the desk defaults. Relative
/// dataset paths resolve against the directory holding the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub render: RenderConfig,
    pub train: TrainConfig,
    pub data: DataPaths,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            render: RenderConfig::default(),
            train: TrainConfig::default(),
            data: DataPaths::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value =
            serde_json::from_str(text).map_err(|e| config(format!("config is not valid JSON: {e}")))?;
        let version = v.get("schema_version").and_then(|s| s.as_u64());
        if let Some(found) = version {
            if found != CONFIG_SCHEMA_VERSION as u64 {
                return Err(Error::VersionMismatch(format!(
                    "config schema {found} (expected {CONFIG_SCHEMA_VERSION})"
                )));
            }
        }
        let cfg: Self = serde_json::from_value(v).map_err(|e| config(format!("invalid config: {e}")))?;
        cfg.render.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_json(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data.train, &mut cfg.data.eval].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// `explicit`, else the path in `FERATT_CONFIG`, else defaults.
    /// Returns the configuration and the digest of the file it came from.
    pub fn resolve(explicit: Option<&Path>) -> Result<(Self, Option<String>)> {
        let from_env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        match explicit.map(Path::to_path_buf).or(from_env) {
            Some(path) => {
                let bytes = fs::read(&path)?;
                Ok((Self::load(&path)?, Some(sha256_hex(&bytes))))
            }
            None => Ok((Self::default(), None)),
        }
    }
}

/// SHA-256 over the relative paths and contents of every file under `dir`,
/// in sorted order, skipping the experiment manifest.
pub fn directory_digest(dir: &Path) -> Result<String> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files.sort();
    let mut acc = Vec::new();
    for rel in files {
        let bytes = fs::read(dir.join(&rel))?;
        acc.extend_from_slice(rel.as_bytes());
        acc.push(0);
        acc.extend_from_slice(sha256_hex(&bytes).as_bytes());
        acc.push(b'\n');
    }
    Ok(sha256_hex(&acc))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path.file_name().is_some_and(|n| n != EXPERIMENT_MANIFEST_FILE) {
            let rel = path.strip_prefix(root).expect("inside root");
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}

/// Digest of a rendered dataset directory, or of a single file.
pub fn dataset_digest(path: &Path) -> Result<String> {
    if path.is_dir() {
        if !path.join(MANIFEST_FILE).exists() {
            return Err(config(format!("{} has no {MANIFEST_FILE}", path.display())));
        }
        directory_digest(path)
    } else {
        Ok(sha256_hex(&fs::read(path)?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Path relative to the manifest's directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub command: Vec<String>,
    pub config_digest: Option<String>,
    pub dataset_digests: BTreeMap<String, String>,
    pub checkpoint_digests: BTreeMap<String, String>,
    pub artifacts: Vec<Artifact>,
}

/// Append-only history of the commands that wrote into an output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub manifest_version: u32,
    pub tool_version: String,
    pub history: Vec<ManifestEntry>,
}

impl Default for ExperimentManifest {
    fn default() -> Self {
        Self {
            manifest_version: EXPERIMENT_MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            history: Vec::new(),
        }
    }
}

impl ExperimentManifest {
    pub fn load_or_new(dir: &Path) -> Result<Self> {
        let path = dir.join(EXPERIMENT_MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::default());
        }
        let m: Self = serde_json::from_slice(&fs::read(&path)?)?;
        if m.manifest_version != EXPERIMENT_MANIFEST_VERSION {
            return Err(Error::VersionMismatch(format!(
                "experiment manifest {} (expected {EXPERIMENT_MANIFEST_VERSION})",
                m.manifest_version
            )));
        }
        Ok(m)
    }

    /// Appends `entry` to the manifest in `dir`, hashing each artifact path.
    pub fn append(
        dir: &Path,
        command: Vec<String>,
        config_digest: Option<String>,
        dataset_digests: BTreeMap<String, String>,
        checkpoint_digests: BTreeMap<String, String>,
        artifacts: &[PathBuf],
    ) -> Result<Self> {
        let mut m = Self::load_or_new(dir)?;
        let artifacts = artifacts
            .iter()
            .map(|p| {
                let rel = p.strip_prefix(dir).unwrap_or(p);
                Ok(Artifact {
                    path: rel.to_string_lossy().replace('\\', "/"),
                    sha256: sha256_hex(&fs::read(p)?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        m.history.push(ManifestEntry {
            command,
            config_digest,
            dataset_digests,
            checkpoint_digests,
            artifacts,
        });
        fs::write(dir.join(EXPERIMENT_MANIFEST_FILE), serde_json::to_string_pretty(&m)? + "\n")?;
        Ok(m)
    }

    /// Checks the most recent record of every artifact against the file on disk.
    pub fn validate(&self, dir: &Path) -> Result<()> {
        let mut latest: BTreeMap<&str, &str> = BTreeMap::new();
        for e in &self.history {
            for a in &e.artifacts {
                latest.insert(&a.path, &a.sha256);
            }
        }
        for (path, expected) in latest {
            let found = sha256_hex(&fs::read(dir.join(path))?);
            if found != expected {
                return Err(Error::DigestMismatch {
                    expected: expected.to_string(),
                    found,
                });
            }
        }
        Ok(())
    }
}
