use std::path::Path;

use super::config::{DistillConfig, PseudoRing, TrainConfig};
use super::train::{render_views, scene_bounds, train_from, write_renders, TrainOutput, TrainedModel};
use crate::error::{Error, Result};
use crate::geometry;
use crate::image::Image;
use crate::scene::{Bounds, Camera, Scene, View};

#[derive(Clone, Debug, PartialEq)]
pub struct DistillOutput {
    pub teacher: TrainOutput,
    pub pseudo_cameras: Vec<Camera>,
    /// Teacher renders of the pseudo views at full input resolution.
    pub pseudo_images: Vec<Image>,
    pub student: TrainOutput,
    /// Student after finetuning on the real inputs.
    pub finetuned: TrainOutput,
}

/// `count` cameras evenly spaced in azimuth on a ring about the scene
/// centre, each looking at the centre with the first input's intrinsics.
pub fn pseudo_ring(scene: &Scene, ring: &PseudoRing, count: usize, bounds: &Bounds) -> Result<Vec<Camera>> {
    let template = &scene.input_views.first().ok_or(Error::EmptyScene)?.camera;
    let n = scene.input_views.len() as f64;
    let offsets: Vec<_> = scene
        .input_views
        .iter()
        .map(|v| geometry::sub(v.camera.position(), bounds.center))
        .collect();
    let radius = ring
        .radius
        .unwrap_or_else(|| offsets.iter().map(|&o| geometry::norm(o)).sum::<f64>() / n);
    let elevation = match ring.elevation_deg {
        Some(e) => e.to_radians(),
        None => offsets.iter().map(|&o| (o[2] / geometry::norm(o)).clamp(-1.0, 1.0).asin()).sum::<f64>() / n,
    };
    if !(radius > 0.0) {
        return Err(Error::Config(format!("pseudo ring radius must be positive, got {radius}")));
    }
    Ok((0..count)
        .map(|i| {
            let az = ring.azimuth_offset_deg.to_radians() + std::f64::consts::TAU * i as f64 / count as f64;
            let eye = geometry::add(bounds.center, geometry::ring_point(radius, az, elevation));
            Camera {
                world_from_camera: geometry::look_at(eye, bounds.center, [0.0, 0.0, 1.0]),
                ..template.clone()
            }
        })
        .collect())
}

/// Teacher on the inputs, student on teacher-rendered pseudo views, then the
/// student finetuned on the inputs. With `work_dir`, every model and
/// intermediate image is written below it.
pub fn distill(scene: &Scene, cfg: &DistillConfig, work_dir: Option<&Path>) -> Result<DistillOutput> {
    cfg.validate()?;
    let bounds = scene_bounds(scene)?;
    let teacher = train_from(scene, &cfg.teacher, None, 0, work_dir.map(|d| d.join("teacher")).as_deref())?;
    if let Some(d) = work_dir {
        teacher.model.save(&d.join("teacher"))?;
    }

    let pseudo_cameras = pseudo_ring(scene, &cfg.ring, cfg.pseudo_views, &bounds)?;
    let renders = render_views(&teacher.model, &pseudo_cameras, cfg.teacher.resolution_scale)?;
    let names: Vec<String> = (0..pseudo_cameras.len()).map(|i| format!("pseudo_{i:03}")).collect();
    if let Some(d) = work_dir {
        write_renders(&d.join("pseudo"), &names, &renders)?;
    }
    let pseudo_images: Vec<Image> = renders.into_iter().map(|r| r.image).collect();
    let pseudo_scene = Scene {
        input_views: names
            .iter()
            .zip(&pseudo_cameras)
            .zip(&pseudo_images)
            .map(|((name, camera), image)| View {
                name: name.clone(),
                camera: camera.clone(),
                image: image.clone(),
                mask: None,
                depth: None,
            })
            .collect(),
        bounds: Some(bounds),
        ..scene.clone()
    };

    let student_cfg = TrainConfig {
        field: cfg.student.field.widened(cfg.student_width_factor),
        ..cfg.student.clone()
    };
    let student = train_from(&pseudo_scene, &student_cfg, None, 0, work_dir.map(|d| d.join("student")).as_deref())?;
    if let Some(d) = work_dir {
        student.model.save(&d.join("student"))?;
    }

    let finetune_cfg = TrainConfig {
        iterations: cfg.finetune_iterations,
        ..student_cfg
    };
    let finetuned = train_from(
        scene,
        &finetune_cfg,
        Some(student.model.clone()),
        student_cfg.iterations,
        work_dir.map(|d| d.join("final")).as_deref(),
    )?;
    if let Some(d) = work_dir {
        finetuned.model.save(&d.join("final"))?;
    }
    Ok(DistillOutput {
        teacher,
        pseudo_cameras,
        pseudo_images,
        student,
        finetuned,
    })
}

impl DistillOutput {
    pub fn model(&self) -> &TrainedModel {
        &self.finetuned.model
    }
}

