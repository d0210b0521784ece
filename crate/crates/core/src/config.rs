//! JSON run configuration with strict key checking.
//!
//! Relative paths are resolved against the directory holding the config
//! file.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::FanBeamGeometry;
use crate::optim::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomConfig {
    pub n_train: usize,
    #[serde(default)]
    pub n_val: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Validation split written by `gen-data` when `n_val > 0`.
    #[serde(default)]
    pub val_dataset_path: Option<PathBuf>,
    /// One JSON object per epoch.
    pub metrics_log: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: FanBeamGeometry,
    pub phantoms: PhantomConfig,
    pub train: TrainConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    /// CPU-sized preset: 32x32 grid, 45 views, 64 detectors, 200 training
    /// images, batch 12, 50 epochs.
    pub fn desk() -> Self {
        Self {
            geometry: FanBeamGeometry::desk(),
            phantoms: PhantomConfig {
                n_train: 200,
                n_val: 20,
                seed: 1,
            },
            train: TrainConfig {
                batch_size: 12,
                epochs: 50,
                seed: 7,
                dataset_path: PathBuf::from("desk/train.fcbp"),
                checkpoint_dir: Some(PathBuf::from("desk/checkpoints")),
                checkpoint_every_epochs: 10,
                ..TrainConfig::default()
            },
            output: OutputConfig {
                val_dataset_path: Some(PathBuf::from("desk/val.fcbp")),
                metrics_log: PathBuf::from("desk/metrics.jsonl"),
            },
        }
    }

    /// Full-size preset: 64x64 grid, 90 views, 128 detectors, 2000 training
    /// images, batch 60, 200 epochs.
    pub fn full() -> Self {
        Self {
            geometry: FanBeamGeometry::default(),
            phantoms: PhantomConfig {
                n_train: 2000,
                n_val: 100,
                seed: 1,
            },
            train: TrainConfig {
                seed: 7,
                dataset_path: PathBuf::from("full/train.fcbp"),
                checkpoint_dir: Some(PathBuf::from("full/checkpoints")),
                checkpoint_every_epochs: 10,
                ..TrainConfig::default()
            },
            output: OutputConfig {
                val_dataset_path: Some(PathBuf::from("full/val.fcbp")),
                metrics_log: PathBuf::from("full/metrics.jsonl"),
            },
        }
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
            Error::Config(format!(
                "{}: line {}, column {}: {e}",
                origin.display(),
                e.line(),
                e.column()
            ))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, validates and resolves relative paths against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::from_json(&text, path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        Ok(cfg.resolved(base))
    }

    pub fn resolved(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.train.dataset_path);
        if let Some(p) = self.train.checkpoint_dir.as_mut() {
            fix(p);
        }
        if let Some(p) = self.output.val_dataset_path.as_mut() {
            fix(p);
        }
        fix(&mut self.output.metrics_log);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.check()?;
        self.train.validate()?;
        if self.phantoms.n_train == 0 {
            return Err(Error::Config("phantoms.n_train must be at least 1".into()));
        }
        if self.phantoms.n_val > 0 && self.output.val_dataset_path.is_none() {
            return Err(Error::Config(
                "phantoms.n_val > 0 requires output.val_dataset_path".into(),
            ));
        }
        let mut paths = vec![&self.train.dataset_path, &self.output.metrics_log];
        paths.extend(self.train.checkpoint_dir.as_ref());
        paths.extend(self.output.val_dataset_path.as_ref());
        let mut seen = HashSet::new();
        for p in paths {
            if !seen.insert(p) {
                return Err(Error::Config(format!(
                    "path {} is used for more than one output",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for cfg in [RunConfig::desk(), RunConfig::full()] {
            cfg.validate().unwrap();
            let back = RunConfig::from_json(&cfg.to_json(), Path::new("x.json")).unwrap();
            assert_eq!(back, cfg);
        }
        assert_eq!(RunConfig::full().train.base_lr, 1e-5);
        assert_eq!(RunConfig::full().train.batch_size, 60);
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let text = RunConfig::desk()
            .to_json()
            .replace("\"base_lr\"", "\"learning_rte\"");
        let err = RunConfig::from_json(&text, Path::new("c.json"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("learning_rte"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn malformed_json_reports_position() {
        let err = RunConfig::from_json("{\n  \"geometry\": ", Path::new("c.json"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn nested_invariants_are_checked() {
        let mut cfg = RunConfig::desk();
        cfg.train.epochs = 0;
        assert!(RunConfig::from_json(&cfg.to_json(), Path::new("c")).is_err());
        let mut cfg = RunConfig::desk();
        cfg.geometry.n_views = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::desk();
        cfg.output.metrics_log = cfg.train.dataset_path.clone();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let cfg = RunConfig::desk().resolved(Path::new("/runs"));
        assert_eq!(cfg.train.dataset_path, Path::new("/runs/desk/train.fcbp"));
        assert_eq!(
            cfg.output.metrics_log,
            Path::new("/runs/desk/metrics.jsonl")
        );
    }
}
