use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Mat4, Vec3};

/// Pinhole camera.
///
/// Camera axes are +x right, +y down, +z forward. Pixel `(row, col)` samples
/// the continuous image coordinate `(u, v) = (col + 0.5, row + 0.5)`, and its
/// camera-space direction is `((u - cx) / fx, (v - cy) / fy, 1)` before
/// normalisation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub world_from_camera: Mat4,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

/// A camera ray. `direction` is unit length.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
    pub pixel: (usize, usize),
    pub view: usize,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        geometry::add(self.origin, geometry::scale(self.direction, t))
    }
}

impl Camera {
    pub fn intrinsics(&self) -> [[f64; 3]; 3] {
        [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
    }

    /// Camera with a symmetric field of view looking from `eye` at `target`.
    pub fn look_at(eye: Vec3, target: Vec3, width: usize, height: usize, fov_x_deg: f64) -> Self {
        let fx = 0.5 * width as f64 / (0.5 * fov_x_deg.to_radians()).tan();
        Self {
            fx,
            fy: fx,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            world_from_camera: geometry::look_at(eye, target, [0.0, 0.0, 1.0]),
            width,
            height,
            near: 0.1,
            far: 10.0,
        }
    }

    pub fn position(&self) -> Vec3 {
        geometry::translation(&self.world_from_camera)
    }

    pub fn forward(&self) -> Vec3 {
        geometry::rotate(&self.world_from_camera, [0.0, 0.0, 1.0])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidCamera(m));
        if geometry::orthonormality_error(&self.world_from_camera) > 1e-5 {
            return bad("rotation block is not orthonormal".into());
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return bad(format!("focal lengths must be positive, got {} {}", self.fx, self.fy));
        }
        if !(0.0 <= self.cx && self.cx < self.width as f64 && 0.0 <= self.cy && self.cy < self.height as f64) {
            return bad(format!("principal point ({}, {}) outside image", self.cx, self.cy));
        }
        if !(0.0 < self.near && self.near < self.far) {
            return bad(format!("need 0 < near < far, got {} {}", self.near, self.far));
        }
        Ok(())
    }

    /// Same pose with intrinsics rescaled for a `factor`-times larger image.
    pub fn rescaled(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
            ..self.clone()
        }
    }

    /// Near/far fitted to a bounding sphere, padded by 10% on each side.
    pub fn fit_bounds(&mut self, center: Vec3, radius: f64) {
        let d = geometry::norm(geometry::sub(self.position(), center));
        self.near = ((d - radius) * 0.9).max(1e-3);
        self.far = (d + radius) * 1.1;
    }

    pub fn ray(&self, row: usize, col: usize, view: usize) -> Result<Ray> {
        if row >= self.height || col >= self.width {
            return Err(Error::PixelOutOfBounds {
                row,
                col,
                width: self.width,
                height: self.height,
            });
        }
        let u = col as f64 + 0.5;
        let v = row as f64 + 0.5;
        let local = [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0];
        let direction = geometry::normalize(geometry::rotate(&self.world_from_camera, local));
        Ok(Ray {
            origin: self.position(),
            direction,
            t_near: self.near,
            t_far: self.far,
            pixel: (row, col),
            view,
        })
    }
}

/// Backprojects `pixels` (row, col) through `camera`.
pub fn generate_rays(camera: &Camera, pixels: &[(usize, usize)], view: usize) -> Result<Vec<Ray>> {
    pixels.iter().map(|&(r, c)| camera.ray(r, c, view)).collect()
}

/// Every pixel in row-major order.
pub fn all_pixels(width: usize, height: usize) -> Vec<(usize, usize)> {
    (0..height).flat_map(|r| (0..width).map(move |c| (r, c))).collect()
}
