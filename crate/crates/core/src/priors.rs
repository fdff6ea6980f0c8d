//! Depth and feature priors: file ingestion plus deterministic stand-ins.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{self, DepthMap, FeatureMap, Image};

/// Channels of [`local_descriptor`].
pub const DESCRIPTOR_DIM: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DepthPriorKind {
    /// Rasters stored with the scene.
    #[default]
    File,
    /// Ground truth plus Gaussian noise.
    SyntheticGtPlusNoise,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DepthPriorConfig {
    pub kind: DepthPriorKind,
    /// Noise standard deviation as a fraction of the scene diameter.
    pub noise_fraction: f64,
    pub seed: u64,
}

impl Default for DepthPriorConfig {
    fn default() -> Self {
        Self {
            kind: DepthPriorKind::File,
            noise_fraction: 0.02,
            seed: 0,
        }
    }
}

/// Reads a depth prior and checks its size.
pub fn depth_prior_from_file(path: &Path, width: usize, height: usize) -> Result<DepthMap> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let d = image::read_depth(path)?;
    if (d.width, d.height) != (width, height) {
        return Err(Error::SizeMismatch {
            what: format!("depth prior {}", path.display()),
            expected: (width, height),
            actual: (d.width, d.height),
        });
    }
    Ok(d)
}

/// Ground-truth depth with seeded Gaussian noise of standard deviation
/// `sigma` on defined pixels, clamped to stay positive. Undefined pixels
/// (depth 0) stay 0.
pub fn noisy_depth(gt: &DepthMap, sigma: f64, seed: u64) -> Result<DepthMap> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise sigma must be non-negative, got {sigma}")));
    }
    let mut out = gt.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for d in &mut out.data {
        if *d > 0.0 {
            let noisy = *d as f64 + normal.sample(&mut rng);
            *d = noisy.max(1e-3 * *d as f64) as f32;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeaturePriorKind {
    File,
    #[default]
    LocalDescriptor,
}

/// Reads a feature raster and checks its size and channel count.
pub fn feature_prior_from_file(path: &Path, width: usize, height: usize, channels: usize) -> Result<FeatureMap> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let f = image::read_features(path)?;
    if (f.width, f.height) != (width, height) {
        return Err(Error::SizeMismatch {
            what: format!("feature prior {}", path.display()),
            expected: (width, height),
            actual: (f.width, f.height),
        });
    }
    if f.channels != channels {
        return Err(Error::InvalidArgument(format!(
            "feature prior {} has {} channels, expected {channels}",
            path.display(),
            f.channels
        )));
    }
    Ok(f)
}

/// Per-pixel 12-channel descriptor with replicate-padded borders:
///
/// | channels | content |
/// |----------|---------|
/// | 0..3     | r, g, b |
/// | 3..6     | `(I[c+1] - I[c-1]) / 2` per colour channel |
/// | 6..9     | `(I[r+1] - I[r-1]) / 2` per colour channel |
/// | 9..12    | 3x3 box mean per colour channel |
pub fn local_descriptor(img: &Image) -> FeatureMap {
    let (w, h) = img.size();
    let mut out = FeatureMap::new(w, h, DESCRIPTOR_DIM);
    let at = |r: isize, c: isize| img.get(r.clamp(0, h as isize - 1) as usize, c.clamp(0, w as isize - 1) as usize);
    for r in 0..h as isize {
        for c in 0..w as isize {
            let centre = at(r, c);
            let (left, right, up, down) = (at(r, c - 1), at(r, c + 1), at(r - 1, c), at(r + 1, c));
            let mut mean = [0f32; 3];
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let p = at(r + dr, c + dc);
                    for k in 0..3 {
                        mean[k] += p[k];
                    }
                }
            }
            let px = out.pixel_mut(r as usize, c as usize);
            for k in 0..3 {
                px[k] = centre[k];
                px[3 + k] = (right[k] - left[k]) / 2.0;
                px[6 + k] = (down[k] - up[k]) / 2.0;
                px[9 + k] = mean[k] / 9.0;
            }
        }
    }
    out
}
