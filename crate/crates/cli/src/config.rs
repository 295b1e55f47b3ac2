//! Run configuration: one JSON file with a top-level seed drives every
//! subcommand. Unknown keys are rejected so typos fail loudly instead of
//! silently falling back to defaults.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use relpose_core::model::ModelConfig;

use crate::{validation, CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream in the pipeline.
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub scenes: usize,
    pub views_per_scene: usize,
    /// Landmarks per scene.
    pub landmarks: usize,
    /// Scene cube side length in meters.
    pub extent: f64,
    pub fov_deg: f64,
    /// Retrieval neighbors per query when building training pairs.
    pub knn: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Checkpoint every this many epochs; 0 keeps only the final one.
    pub checkpoint_every: usize,
    /// Truncate the training set to its first N stored pairs. The overfit
    /// experiments use this; normal runs leave it unset.
    #[serde(default)]
    pub max_pairs: Option<usize>,
    /// Rescale-then-random-crop augmentation at train time.
    #[serde(default = "default_true")]
    pub augment: bool,
}

fn default_true() -> bool {
    true
}

impl RunConfig {
    /// CPU-trainable default: four small scenes, the desk-scale model.
    pub fn desk() -> Self {
        RunConfig {
            seed: 0,
            data: DataConfig {
                scenes: 4,
                views_per_scene: 120,
                landmarks: 800,
                extent: 4.0,
                fov_deg: 60.0,
                knn: 8,
            },
            model: ModelConfig::desk(),
            train: TrainConfig {
                lr: 1e-4,
                weight_decay: 1e-4,
                batch: 8,
                epochs: 10,
                checkpoint_every: 5,
                max_pairs: None,
                augment: true,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(CliError::Validation(msg));
        let d = &self.data;
        if d.scenes == 0 {
            return fail("data.scenes must be at least 1".into());
        }
        if d.views_per_scene <= d.knn {
            return fail(format!(
                "data.views_per_scene ({}) must exceed data.knn ({}): every view needs knn non-self neighbors",
                d.views_per_scene, d.knn
            ));
        }
        if d.knn == 0 {
            return fail("data.knn must be at least 1".into());
        }
        if !(d.extent > 0.0 && d.extent.is_finite()) {
            return fail(format!("data.extent must be positive, got {}", d.extent));
        }
        if !(d.fov_deg > 0.0 && d.fov_deg < 180.0) {
            return fail(format!(
                "data.fov_deg must lie in (0, 180), got {}",
                d.fov_deg
            ));
        }
        if d.landmarks < 200 {
            return fail(format!(
                "data.landmarks must be at least 200, got {}",
                d.landmarks
            ));
        }
        let t = &self.train;
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return fail(format!("train.lr must be positive, got {}", t.lr));
        }
        if !(t.weight_decay >= 0.0 && t.weight_decay.is_finite()) {
            return fail(format!(
                "train.weight_decay must be non-negative, got {}",
                t.weight_decay
            ));
        }
        if t.batch == 0 {
            return fail("train.batch must be at least 1".into());
        }
        if t.epochs == 0 {
            return fail("train.epochs must be at least 1".into());
        }
        if t.max_pairs == Some(0) {
            return fail("train.max_pairs must be at least 1 when set".into());
        }
        self.model.validate().map_err(validation)?;
        Ok(())
    }
}

/// Load a config (or the desk default), apply the seed override, validate.
pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Validation(format!("read {}: {}", p.display(), e)))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Validation(format!("parse {}: {}", p.display(), e)))?
        }
        None => RunConfig::desk(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn desk_default_validates() {
        RunConfig::desk().validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut json = serde_json::to_value(RunConfig::desk()).unwrap();
        json.as_object_mut()
            .unwrap()
            .insert("learning_rate".into(), 1.0.into());
        let text = serde_json::to_string(&json).unwrap();
        let err = serde_json::from_str::<RunConfig>(&text).unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
    }

    #[test]
    fn unknown_nested_keys_are_rejected() {
        let mut json = serde_json::to_value(RunConfig::desk()).unwrap();
        json["model"]
            .as_object_mut()
            .unwrap()
            .insert("depth".into(), 3.into());
        let text = serde_json::to_string(&json).unwrap();
        assert!(serde_json::from_str::<RunConfig>(&text).is_err());
    }

    #[test]
    fn negative_extent_fails_validation() {
        let mut cfg = RunConfig::desk();
        cfg.data.extent = -1.0;
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("extent"));
    }

    #[test]
    fn knn_must_leave_room_for_non_self_neighbors() {
        let mut cfg = RunConfig::desk();
        cfg.data.knn = cfg.data.views_per_scene;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn seed_override_wins_over_the_file() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        let mut cfg = RunConfig::desk();
        cfg.seed = 7;
        write!(file, "{}", serde_json::to_string(&cfg).unwrap()).unwrap();
        let loaded = load(Some(file.path()), Some(99)).unwrap();
        assert_eq!(loaded.seed, 99);
        let kept = load(Some(file.path()), None).unwrap();
        assert_eq!(kept.seed, 7);
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = RunConfig::desk();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
