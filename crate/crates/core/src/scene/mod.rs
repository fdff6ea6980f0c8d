//! Posed multi-view scenes: cameras, rays, on-disk layout and procedural
//! synthetic scenes with exact ground truth.

mod camera;
mod io;
mod synth;

use serde::{Deserialize, Serialize};

pub use camera::{all_pixels, generate_rays, Camera, Ray};
pub use io::{load_scene, save_scene, MANIFEST_FILE};
pub use synth::{intersect, synthesize_scene, Hit, Primitive, RingSpec, SyntheticScene, SyntheticSceneSpec};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::image::{self, DepthMap, Image, Mask};

/// Known background colour, composited behind the field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Background {
    #[default]
    White,
    Black,
    /// No prior; composited as black.
    None,
}

impl Background {
    pub fn rgb(self) -> [f32; 3] {
        match self {
            Background::White => [1.0; 3],
            Background::Black | Background::None => [0.0; 3],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    #[default]
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub center: Vec3,
    pub radius: f64,
}

impl Bounds {
    pub fn diameter(&self) -> f64 {
        2.0 * self.radius
    }
}

/// A posed input image with its optional mask and depth prior.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub name: String,
    pub camera: Camera,
    pub image: Image,
    pub mask: Option<Mask>,
    pub depth: Option<DepthMap>,
}

/// A pose to render. Ground truth is only present for synthetic or
/// validation scenes.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetView {
    pub name: String,
    pub camera: Camera,
    pub image: Option<Image>,
    pub mask: Option<Mask>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub name: String,
    pub input_views: Vec<View>,
    pub targets: Vec<TargetView>,
    pub background: Background,
    pub split: Split,
    pub bounds: Option<Bounds>,
    /// Dataset source label used for per-source metric averages.
    pub source: String,
}

impl Scene {
    pub fn target_cameras(&self) -> Vec<Camera> {
        self.targets.iter().map(|t| t.camera.clone()).collect()
    }

    /// Checks cameras and the per-view raster invariants.
    pub fn validate(&self) -> Result<()> {
        for v in &self.input_views {
            v.camera.validate()?;
            let expect = (v.camera.width, v.camera.height);
            let check = |what: &str, size: (usize, usize)| {
                if size != expect {
                    Err(Error::SizeMismatch {
                        what: format!("{what} of view {}", v.name),
                        expected: expect,
                        actual: size,
                    })
                } else {
                    Ok(())
                }
            };
            check("image", v.image.size())?;
            if let Some(m) = &v.mask {
                check("mask", (m.width, m.height))?;
            }
            if let Some(d) = &v.depth {
                check("depth", (d.width, d.height))?;
                if d.data.iter().any(|&x| x < 0.0 || !x.is_finite()) {
                    return Err(Error::InvalidArgument(format!("negative depth prior in view {}", v.name)));
                }
            }
        }
        for t in &self.targets {
            t.camera.validate()?;
        }
        Ok(())
    }

    /// Keeps `count` input views, evenly spread over the current ordering.
    pub fn with_input_count(&self, count: usize) -> Result<Scene> {
        let n = self.input_views.len();
        if count == 0 || count > n {
            return Err(Error::InvalidArgument(format!(
                "cannot select {count} of {n} input views"
            )));
        }
        let mut out = self.clone();
        out.input_views = (0..count)
            .map(|i| self.input_views[i * n / count].clone())
            .collect();
        Ok(out)
    }

    /// Input views, cameras and ground truth downsampled by an integer factor.
    pub fn downscaled(&self, factor: usize) -> Scene {
        if factor <= 1 {
            return self.clone();
        }
        let mut out = self.clone();
        for v in &mut out.input_views {
            v.image = image::downsample_image(&v.image, factor);
            v.camera = v.camera.rescaled(v.image.width, v.image.height);
            v.mask = v.mask.as_ref().map(|m| image::downsample_mask(m, factor));
            v.depth = v.depth.as_ref().map(|d| image::downsample_depth(d, factor));
        }
        for t in &mut out.targets {
            let (w, h) = (t.camera.width / factor, t.camera.height / factor);
            t.camera = t.camera.rescaled(w, h);
            t.image = t.image.as_ref().map(|i| image::downsample_image(i, factor));
            t.mask = t.mask.as_ref().map(|m| image::downsample_mask(m, factor));
        }
        out
    }
}

/// Resolves a `--track` number to its input view count.
pub fn track_view_count(track: u8) -> Result<usize> {
    match track {
        1 => Ok(3),
        2 => Ok(9),
        other => Err(Error::InvalidArgument(format!("unknown track {other}; expected 1 or 2"))),
    }
}
