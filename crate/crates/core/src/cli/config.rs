//! The TOML run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cascade::CascadeTrainConfig;
use crate::dataset::SynthConfig;
use crate::detector::ScanConfig;
use crate::features::BaseWindow;
use crate::tracking::TrackingConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub per_stage_min_detection: f64,
    pub per_stage_max_fp: f64,
    pub target_overall_fp: f64,
    pub max_stages: usize,
    pub stumps_per_stage_cap: usize,
    pub base_window: usize,
    pub feature_stride: usize,
    pub feature_min_size: usize,
    pub negatives_per_stage: usize,
    pub validation_fraction: f64,
    pub variance_floor: f64,
    pub mining_scale_step: f64,
    pub mining_stride: usize,
    pub cache_features: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = CascadeTrainConfig::default();
        Self {
            per_stage_min_detection: d.per_stage_min_detection,
            per_stage_max_fp: d.per_stage_max_fp,
            target_overall_fp: d.target_overall_fp,
            max_stages: d.max_stages,
            stumps_per_stage_cap: d.stumps_per_stage_cap,
            base_window: d.base_window.side(),
            feature_stride: d.feature_stride,
            feature_min_size: d.feature_min_size,
            negatives_per_stage: d.negatives_per_stage,
            validation_fraction: d.validation_fraction,
            variance_floor: d.variance_floor,
            mining_scale_step: d.mining_scale_step,
            mining_stride: d.mining_stride,
            cache_features: d.cache_features,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSection {
    pub scale_step: f64,
    pub stride: usize,
    pub min_scale: f64,
    pub max_scale: f64,
    pub group_min_neighbors: usize,
    pub group_overlap: f64,
    pub variance_floor: f64,
}

impl Default for ScanSection {
    fn default() -> Self {
        let d = ScanConfig::default();
        Self {
            scale_step: d.scale_step,
            stride: d.stride,
            min_scale: d.min_scale,
            max_scale: d.max_scale,
            group_min_neighbors: d.group_min_neighbors,
            group_overlap: d.group_overlap,
            variance_floor: d.variance_floor,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingSection {
    pub learning_rate: f64,
    pub threshold: f64,
    pub min_blob_area: usize,
    pub max_dist: f64,
    pub max_missed: usize,
    /// `[x0, y0, x1, y1]`; empty means a vertical line through the middle.
    pub line: Vec<f64>,
}

impl Default for TrackingSection {
    fn default() -> Self {
        let d = TrackingConfig::default();
        Self {
            learning_rate: d.learning_rate,
            threshold: d.threshold,
            min_blob_area: d.min_blob_area,
            max_dist: d.max_dist,
            max_missed: d.max_missed,
            line: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub window: usize,
    pub positives: usize,
    pub negatives: usize,
    pub negative_size: usize,
    pub scenes: usize,
    pub scene_width: usize,
    pub scene_height: usize,
    pub max_objects: usize,
    pub max_object_scale: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthConfig::default();
        Self {
            window: d.window,
            positives: d.positives,
            negatives: d.negatives,
            negative_size: d.negative_size,
            scenes: d.scenes,
            scene_width: d.scene_width,
            scene_height: d.scene_height,
            max_objects: d.max_objects,
            max_object_scale: d.max_object_scale,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub iou_threshold: f64,
    /// Largest `group_min_neighbors` in the operating-point table.
    pub max_min_neighbors: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            max_min_neighbors: 8,
        }
    }
}

/// Dataset and model locations. Empty means "not set"; relative paths in a
/// config file are resolved against the file's directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub positives: PathBuf,
    pub negatives: PathBuf,
    pub annotations: PathBuf,
    pub cascade: PathBuf,
    pub frames: PathBuf,
    pub out: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 picks one per core.
    pub workers: usize,
    pub train: TrainSection,
    pub scan: ScanSection,
    pub tracking: TrackingSection,
    pub synth: SynthSection,
    pub eval: EvalSection,
    pub paths: PathsSection,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config {path}: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error("override {0:?} must look like section.field=value")]
    BadOverride(String),
    #[error("override {key}: {detail}")]
    Override { key: String, detail: String },
    #[error("{0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in cfg.paths.all_mut() {
            if !p.as_os_str().is_empty() && p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    /// Applies a `section.field=value` override. The value is read as a
    /// TOML literal, falling back to a plain string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::BadOverride(assignment.to_string()))?;
        let key = key.trim();
        let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let mut root =
            toml::Value::try_from(&*self).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let mut slot = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = slot.as_table_mut().ok_or_else(|| ConfigError::Override {
                key: key.to_string(),
                detail: format!("{part:?} is not a section"),
            })?;
            if i + 1 == parts.len() {
                if !table.contains_key(*part) {
                    return Err(ConfigError::Override {
                        key: key.to_string(),
                        detail: "unknown field".into(),
                    });
                }
                table.insert(part.to_string(), value.clone());
                break;
            }
            slot = table.get_mut(*part).ok_or_else(|| ConfigError::Override {
                key: key.to_string(),
                detail: format!("unknown section {part:?}"),
            })?;
        }
        *self = root
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Override {
                key: key.to_string(),
                detail: e.to_string(),
            })?;
        Ok(())
    }

    pub fn train_config(&self) -> Result<CascadeTrainConfig, ConfigError> {
        let t = &self.train;
        let cfg = CascadeTrainConfig {
            per_stage_min_detection: t.per_stage_min_detection,
            per_stage_max_fp: t.per_stage_max_fp,
            target_overall_fp: t.target_overall_fp,
            max_stages: t.max_stages,
            stumps_per_stage_cap: t.stumps_per_stage_cap,
            seed: self.seed,
            base_window: BaseWindow::new(t.base_window)
                .map_err(|e| ConfigError::Invalid(format!("train.base_window: {e}")))?,
            feature_stride: t.feature_stride,
            feature_min_size: t.feature_min_size,
            negatives_per_stage: t.negatives_per_stage,
            validation_fraction: t.validation_fraction,
            variance_floor: t.variance_floor,
            mining_scale_step: t.mining_scale_step,
            mining_stride: t.mining_stride,
            cache_features: t.cache_features,
        };
        cfg.validate()
            .map_err(|e| ConfigError::Invalid(format!("[train] {e}")))?;
        Ok(cfg)
    }

    pub fn scan_config(&self) -> Result<ScanConfig, ConfigError> {
        let s = &self.scan;
        let cfg = ScanConfig {
            scale_step: s.scale_step,
            stride: s.stride,
            min_scale: s.min_scale,
            max_scale: s.max_scale,
            group_min_neighbors: s.group_min_neighbors,
            group_overlap: s.group_overlap,
            variance_floor: s.variance_floor,
        };
        cfg.validate()
            .map_err(|e| ConfigError::Invalid(format!("[scan] {e}")))?;
        Ok(cfg)
    }

    pub fn tracking_config(&self) -> Result<TrackingConfig, ConfigError> {
        let t = &self.tracking;
        let line = match t.line.as_slice() {
            [] => None,
            [x0, y0, x1, y1] => {
                if (x0, y0) == (x1, y1) {
                    return Err(ConfigError::Invalid(
                        "[tracking] line endpoints must be distinct".into(),
                    ));
                }
                Some(((*x0, *y0), (*x1, *y1)))
            }
            _ => {
                return Err(ConfigError::Invalid(
                    "[tracking] line must be [x0, y0, x1, y1]".into(),
                ))
            }
        };
        let invalid = |m: String| Err(ConfigError::Invalid(format!("[tracking] {m}")));
        if !(t.learning_rate > 0.0 && t.learning_rate <= 1.0) {
            return invalid(format!(
                "learning_rate must lie in (0, 1], got {}",
                t.learning_rate
            ));
        }
        if !(t.threshold >= 0.0) || !(t.max_dist >= 0.0) {
            return invalid("threshold and max_dist must be >= 0".into());
        }
        if t.min_blob_area == 0 {
            return invalid("min_blob_area must be at least 1".into());
        }
        Ok(TrackingConfig {
            learning_rate: t.learning_rate,
            threshold: t.threshold,
            min_blob_area: t.min_blob_area,
            max_dist: t.max_dist,
            max_missed: t.max_missed,
            line,
        })
    }

    pub fn synth_config(&self) -> Result<SynthConfig, ConfigError> {
        let s = &self.synth;
        if s.window < 4
            || s.negative_size < s.window
            || s.scene_width < s.window
            || s.scene_height < s.window
        {
            return Err(ConfigError::Invalid(
                "[synth] window must be >= 4 and fit the negative and scene sizes".into(),
            ));
        }
        if !(s.max_object_scale >= 1.0) || s.max_objects == 0 {
            return Err(ConfigError::Invalid(
                "[synth] max_object_scale must be >= 1 and max_objects >= 1".into(),
            ));
        }
        Ok(SynthConfig {
            seed: self.seed,
            window: s.window,
            positives: s.positives,
            negatives: s.negatives,
            negative_size: s.negative_size,
            scenes: s.scenes,
            scene_width: s.scene_width,
            scene_height: s.scene_height,
            max_objects: s.max_objects,
            max_object_scale: s.max_object_scale,
        })
    }

    /// Checks every section, so no command starts on a bad config.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train_config()?;
        self.scan_config()?;
        self.tracking_config()?;
        self.synth_config()?;
        if !(self.eval.iou_threshold > 0.0 && self.eval.iou_threshold <= 1.0) {
            return Err(ConfigError::Invalid(format!(
                "[eval] iou_threshold must lie in (0, 1], got {}",
                self.eval.iou_threshold
            )));
        }
        Ok(())
    }

    /// Every field with its default, as a TOML document.
    pub fn defaults_toml() -> String {
        toml::to_string(&RunConfig::default()).expect("defaults serialize")
    }
}

impl PathsSection {
    fn all_mut(&mut self) -> [&mut PathBuf; 6] {
        [
            &mut self.positives,
            &mut self.negatives,
            &mut self.annotations,
            &mut self.cascade,
            &mut self.frames,
            &mut self.out,
        ]
    }
}
