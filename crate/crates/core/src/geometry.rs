//! Small fixed-size vector helpers for camera and scene geometry.

pub type Vec3 = [f64; 3];

/// Row-major 4x4 rigid transform.
pub type Mat4 = [[f64; 4]; 4];

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: Vec3, k: f64) -> Vec3 {
    [a[0] * k, a[1] * k, a[2] * k]
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalize(a: Vec3) -> Vec3 {
    scale(a, 1.0 / norm(a))
}

pub fn identity() -> Mat4 {
    let mut m = [[0.0; 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

pub fn rotate(m: &Mat4, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn translation(m: &Mat4) -> Vec3 {
    [m[0][3], m[1][3], m[2][3]]
}

/// Camera-to-world pose for a camera at `eye` looking at `target`.
///
/// Camera axes follow the pinhole convention used throughout the crate:
/// +x right, +y down, +z forward.
pub fn look_at(eye: Vec3, target: Vec3, world_up: Vec3) -> Mat4 {
    let forward = normalize(sub(target, eye));
    let mut right = cross(forward, world_up);
    if norm(right) < 1e-9 {
        right = cross(forward, [1.0, 0.0, 0.0]);
    }
    let right = normalize(right);
    let down = cross(forward, right);
    let mut m = identity();
    for i in 0..3 {
        m[i][0] = right[i];
        m[i][1] = down[i];
        m[i][2] = forward[i];
        m[i][3] = eye[i];
    }
    m
}

/// Largest deviation of the rotation block from orthonormality.
pub fn orthonormality_error(m: &Mat4) -> f64 {
    let mut worst: f64 = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            let d: f64 = (0..3).map(|i| m[i][a] * m[i][b]).sum();
            let want = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((d - want).abs());
        }
    }
    worst
}

/// Point on a ring around the origin; `elevation` in radians above the
/// horizontal plane, z up.
pub fn ring_point(radius: f64, azimuth: f64, elevation: f64) -> Vec3 {
    [
        radius * elevation.cos() * azimuth.cos(),
        radius * elevation.cos() * azimuth.sin(),
        radius * elevation.sin(),
    ]
}
