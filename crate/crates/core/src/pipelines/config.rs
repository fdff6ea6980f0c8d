use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::encoding::EncodingConfig;
use crate::error::{Error, Result};
use crate::field::FieldConfig;
use crate::losses::{LossWeights, Method};
use crate::priors::{DepthPriorConfig, FeaturePriorKind};
use crate::renderer::SamplingConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub method: Method,
    pub iterations: usize,
    /// Rays per step, not counting the depth patch.
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate reached at the last iteration.
    pub lr_final: f64,
    /// Integer downsampling factor applied to the input views.
    pub resolution_scale: usize,
    pub seed: u64,
    /// Train a second field on hierarchical samples.
    pub use_fine: bool,
    /// Give the coarse field a feature head too (feature-conditioned only).
    pub feature_in_coarse: bool,
    /// Side of the square pixel patch used by the depth losses.
    pub patch_size: usize,
    /// Steps between loss-log rows.
    pub log_every: usize,
    pub field: FieldConfig,
    pub encoding: EncodingConfig,
    pub sampling: SamplingConfig,
    pub losses: LossWeights,
    pub depth_prior: DepthPriorConfig,
    pub feature_prior: FeaturePriorKind,
    /// Directory of `<view>.feat` rasters for `feature_prior = "file"`.
    pub feature_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Baseline,
            iterations: 2000,
            batch_size: 64,
            lr: 5e-4,
            lr_final: 5e-5,
            resolution_scale: 1,
            seed: 0,
            use_fine: true,
            feature_in_coarse: true,
            patch_size: 32,
            log_every: 100,
            field: FieldConfig::default(),
            encoding: EncodingConfig::default(),
            sampling: SamplingConfig::default(),
            losses: LossWeights::default(),
            depth_prior: DepthPriorConfig::default(),
            feature_prior: FeaturePriorKind::default(),
            feature_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.resolution_scale == 0 {
            return Err(Error::Config("resolution_scale must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr_final >= 0.0) {
            return Err(Error::Config("learning rates must be non-negative".into()));
        }
        if self.method.uses_depth() && self.patch_size < 2 {
            return Err(Error::Config("patch_size must be at least 2 for depth losses".into()));
        }
        self.field.validate()?;
        self.encoding.validate()?;
        self.sampling.validate()?;
        self.losses.validate()
    }
}

/// Azimuth-uniform camera ring for pseudo views. Unset values come from the
/// input cameras: mean elevation and distance about the scene centre.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PseudoRing {
    pub radius: Option<f64>,
    pub elevation_deg: Option<f64>,
    pub azimuth_offset_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub teacher: TrainConfig,
    pub pseudo_views: usize,
    pub ring: PseudoRing,
    /// Student settings for the pseudo-view phase; the field width and
    /// bottleneck are multiplied by `student_width_factor`.
    pub student: TrainConfig,
    pub student_width_factor: usize,
    pub finetune_iterations: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        let teacher = TrainConfig {
            method: Method::FreqOcc,
            iterations: 30_000,
            resolution_scale: 4,
            ..TrainConfig::default()
        };
        let student = TrainConfig {
            method: Method::Baseline,
            iterations: 5_000,
            ..TrainConfig::default()
        };
        Self {
            teacher,
            pseudo_views: 49,
            ring: PseudoRing::default(),
            student,
            student_width_factor: 2,
            finetune_iterations: 5_000,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pseudo_views == 0 {
            return Err(Error::Config("pseudo_views must be at least 1".into()));
        }
        if self.student_width_factor == 0 {
            return Err(Error::Config("student_width_factor must be at least 1".into()));
        }
        self.teacher.validate()?;
        self.student.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    #[default]
    PixelWeighted,
    MetricSelect,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub mode: FusionMode,
    /// One weight per candidate, normalised to sum to 1; empty means uniform.
    pub weights: Vec<f64>,
}
