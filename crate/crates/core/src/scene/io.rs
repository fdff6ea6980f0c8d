//! Scene directory layout:
//!
//! ```text
//! <scene>/cameras.json            manifest (see `Manifest`)
//! <scene>/images/<view>.png       8-bit sRGB input images
//! <scene>/masks/<view>.png        optional 0/255 masks
//! <scene>/depths/<view>.depth     optional depth priors (raster format in `image`)
//! <scene>/targets/images/<t>.png  optional target ground truth
//! <scene>/targets/masks/<t>.png   optional target masks
//! ```
//!
//! Input views are ordered lexicographically by name. A camera without
//! `near`/`far` gets them fitted to the manifest `bounds`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Background, Bounds, Camera, Scene, Split, TargetView, View};
use crate::error::{Error, Result};
use crate::geometry::Mat4;
use crate::image::{self, Mask};

pub const MANIFEST_FILE: &str = "cameras.json";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraRecord {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    world_from_camera: Mat4,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    near: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    far: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ViewRecord {
    name: String,
    camera: CameraRecord,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    name: String,
    #[serde(default)]
    background: Background,
    #[serde(default)]
    split: Split,
    #[serde(default = "default_source")]
    source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bounds: Option<Bounds>,
    inputs: Vec<ViewRecord>,
    #[serde(default)]
    targets: Vec<ViewRecord>,
}

fn default_source() -> String {
    "default".into()
}

impl CameraRecord {
    fn from_camera(c: &Camera) -> Self {
        Self {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            world_from_camera: c.world_from_camera,
            near: Some(c.near),
            far: Some(c.far),
        }
    }

    fn into_camera(self, bounds: Option<&Bounds>, name: &str) -> Result<Camera> {
        let mut cam = Camera {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            world_from_camera: self.world_from_camera,
            width: self.width,
            height: self.height,
            near: self.near.unwrap_or(0.0),
            far: self.far.unwrap_or(0.0),
        };
        match (self.near, self.far) {
            (Some(_), Some(_)) => {}
            _ => {
                let b = bounds.ok_or_else(|| {
                    Error::InvalidCamera(format!("view {name} has no near/far and the scene has no bounds"))
                })?;
                let (n, f) = (self.near, self.far);
                cam.fit_bounds(b.center, b.radius);
                if let Some(n) = n {
                    cam.near = n;
                }
                if let Some(f) = f {
                    cam.far = f;
                }
            }
        }
        cam.validate()?;
        Ok(cam)
    }
}

fn check_size(what: String, expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    if expected != actual {
        return Err(Error::SizeMismatch {
            what,
            expected,
            actual,
        });
    }
    Ok(())
}

fn read_mask_checked(path: &Path, camera: &Camera, name: &str) -> Result<Option<Mask>> {
    if !path.exists() {
        return Ok(None);
    }
    let m = image::read_mask(path)?;
    check_size(format!("mask {name}"), (camera.width, camera.height), (m.width, m.height))?;
    Ok(Some(m))
}

pub fn load_scene(dir: &Path) -> Result<Scene> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        return Err(Error::MissingCamera(manifest_path));
    }
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    let bounds = manifest.bounds;

    let mut records = manifest.inputs;
    records.sort_by(|a, b| a.name.cmp(&b.name));
    let mut input_views = Vec::with_capacity(records.len());
    for rec in records {
        let camera = rec.camera.into_camera(bounds.as_ref(), &rec.name)?;
        let image = image::read_image(&dir.join("images").join(format!("{}.png", rec.name)))?;
        check_size(
            format!("image {}", rec.name),
            (camera.width, camera.height),
            image.size(),
        )?;
        let mask = read_mask_checked(&dir.join("masks").join(format!("{}.png", rec.name)), &camera, &rec.name)?;
        let depth_path = dir.join("depths").join(format!("{}.depth", rec.name));
        let depth = if depth_path.exists() {
            let d = image::read_depth(&depth_path)?;
            check_size(format!("depth {}", rec.name), (camera.width, camera.height), (d.width, d.height))?;
            Some(d)
        } else {
            None
        };
        input_views.push(View {
            name: rec.name,
            camera,
            image,
            mask,
            depth,
        });
    }

    let mut targets = Vec::with_capacity(manifest.targets.len());
    for rec in manifest.targets {
        let camera = rec.camera.into_camera(bounds.as_ref(), &rec.name)?;
        let img_path = dir.join("targets/images").join(format!("{}.png", rec.name));
        let image = if img_path.exists() {
            let i = image::read_image(&img_path)?;
            check_size(format!("target image {}", rec.name), (camera.width, camera.height), i.size())?;
            Some(i)
        } else {
            None
        };
        let mask = read_mask_checked(
            &dir.join("targets/masks").join(format!("{}.png", rec.name)),
            &camera,
            &rec.name,
        )?;
        targets.push(TargetView {
            name: rec.name,
            camera,
            image,
            mask,
        });
    }

    let scene = Scene {
        name: manifest.name,
        input_views,
        targets,
        background: manifest.background,
        split: manifest.split,
        bounds,
        source: manifest.source,
    };
    scene.validate()?;
    Ok(scene)
}

pub fn save_scene(scene: &Scene, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("images"))?;
    let manifest = Manifest {
        name: scene.name.clone(),
        background: scene.background,
        split: scene.split,
        source: scene.source.clone(),
        bounds: scene.bounds,
        inputs: scene
            .input_views
            .iter()
            .map(|v| ViewRecord {
                name: v.name.clone(),
                camera: CameraRecord::from_camera(&v.camera),
            })
            .collect(),
        targets: scene
            .targets
            .iter()
            .map(|t| ViewRecord {
                name: t.name.clone(),
                camera: CameraRecord::from_camera(&t.camera),
            })
            .collect(),
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    for v in &scene.input_views {
        image::write_image(&dir.join("images").join(format!("{}.png", v.name)), &v.image)?;
        if let Some(m) = &v.mask {
            fs::create_dir_all(dir.join("masks"))?;
            image::write_mask(&dir.join("masks").join(format!("{}.png", v.name)), m)?;
        }
        if let Some(d) = &v.depth {
            fs::create_dir_all(dir.join("depths"))?;
            image::write_depth(&dir.join("depths").join(format!("{}.depth", v.name)), d)?;
        }
    }
    for t in &scene.targets {
        if let Some(i) = &t.image {
            fs::create_dir_all(dir.join("targets/images"))?;
            image::write_image(&dir.join("targets/images").join(format!("{}.png", t.name)), i)?;
        }
        if let Some(m) = &t.mask {
            fs::create_dir_all(dir.join("targets/masks"))?;
            image::write_mask(&dir.join("targets/masks").join(format!("{}.png", t.name)), m)?;
        }
    }
    Ok(())
}
