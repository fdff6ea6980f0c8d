use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Background, Bounds, Camera, Ray, Scene, Split, TargetView, View};
use crate::error::{Error, Result};
use crate::geometry::{self, Vec3};
use crate::image::{DepthMap, Image, Mask};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Primitive {
    Sphere {
        center: Vec3,
        radius: f64,
        albedo: [f64; 3],
    },
    /// Axis-aligned box.
    Box {
        center: Vec3,
        half_extents: Vec3,
        albedo: [f64; 3],
    },
}

impl Primitive {
    fn albedo(&self) -> [f64; 3] {
        match self {
            Primitive::Sphere { albedo, .. } | Primitive::Box { albedo, .. } => *albedo,
        }
    }

    fn is_degenerate(&self) -> bool {
        match self {
            Primitive::Sphere { radius, .. } => !(*radius > 0.0),
            Primitive::Box { half_extents, .. } => half_extents.iter().any(|&h| !(h > 0.0)),
        }
    }

    /// Axis-aligned bounds as (min, max).
    fn aabb(&self) -> (Vec3, Vec3) {
        match self {
            Primitive::Sphere { center, radius, .. } => (
                geometry::sub(*center, [*radius; 3]),
                geometry::add(*center, [*radius; 3]),
            ),
            Primitive::Box {
                center, half_extents, ..
            } => (geometry::sub(*center, *half_extents), geometry::add(*center, *half_extents)),
        }
    }

    /// Nearest hit distance beyond `t_min` with its outward normal.
    pub fn intersect(&self, origin: Vec3, dir: Vec3, t_min: f64) -> Option<(f64, Vec3)> {
        match self {
            Primitive::Sphere { center, radius, .. } => {
                let oc = geometry::sub(origin, *center);
                let b = geometry::dot(oc, dir);
                let c = geometry::dot(oc, oc) - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                let t = [-b - s, -b + s].into_iter().find(|&t| t > t_min)?;
                let p = geometry::add(origin, geometry::scale(dir, t));
                Some((t, geometry::normalize(geometry::sub(p, *center))))
            }
            Primitive::Box {
                center, half_extents, ..
            } => {
                let (lo, hi) = self.aabb();
                let _ = (center, half_extents);
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                let (mut n0, mut n1) = ([0.0; 3], [0.0; 3]);
                for a in 0..3 {
                    if dir[a].abs() < 1e-15 {
                        if origin[a] < lo[a] || origin[a] > hi[a] {
                            return None;
                        }
                        continue;
                    }
                    let inv = 1.0 / dir[a];
                    let (mut ta, mut tb) = ((lo[a] - origin[a]) * inv, (hi[a] - origin[a]) * inv);
                    let mut na = [0.0; 3];
                    na[a] = -1.0;
                    let mut nb = [0.0; 3];
                    nb[a] = 1.0;
                    if ta > tb {
                        std::mem::swap(&mut ta, &mut tb);
                        std::mem::swap(&mut na, &mut nb);
                    }
                    if ta > t0 {
                        t0 = ta;
                        n0 = na;
                    }
                    if tb < t1 {
                        t1 = tb;
                        n1 = nb;
                    }
                }
                if t0 > t1 {
                    return None;
                }
                if t0 > t_min {
                    Some((t0, n0))
                } else if t1 > t_min {
                    Some((t1, n1))
                } else {
                    None
                }
            }
        }
    }

    /// Whether `p` lies inside the primitive.
    pub fn contains(&self, p: Vec3) -> bool {
        match self {
            Primitive::Sphere { center, radius, .. } => geometry::norm(geometry::sub(p, *center)) <= *radius,
            Primitive::Box { .. } => {
                let (lo, hi) = self.aabb();
                (0..3).all(|a| lo[a] <= p[a] && p[a] <= hi[a])
            }
        }
    }
}

/// Cameras evenly spaced in azimuth on a ring around the origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingSpec {
    pub count: usize,
    pub radius: f64,
    pub elevation_deg: f64,
    #[serde(default)]
    pub azimuth_offset_deg: f64,
}

impl RingSpec {
    pub fn eyes(&self) -> Vec<Vec3> {
        (0..self.count)
            .map(|k| {
                let az = self.azimuth_offset_deg.to_radians() + std::f64::consts::TAU * k as f64 / self.count as f64;
                geometry::ring_point(self.radius, az, self.elevation_deg.to_radians())
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSceneSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub primitives: Vec<Primitive>,
    /// Direction towards the light.
    pub light_direction: Vec3,
    #[serde(default = "default_ambient")]
    pub ambient: f64,
    #[serde(default)]
    pub background: Background,
    pub input_ring: RingSpec,
    pub target_ring: RingSpec,
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
    /// Amplitude of the seeded sinusoidal albedo texture; 0 disables it.
    #[serde(default = "default_texture")]
    pub texture_amplitude: f64,
}

fn default_name() -> String {
    "synthetic".into()
}

fn default_ambient() -> f64 {
    0.3
}

fn default_texture() -> f64 {
    0.25
}

impl SyntheticSceneSpec {
    /// A sphere next to a box, three input views and six held-out targets at 64x64.
    pub fn sphere_and_box() -> Self {
        Self {
            name: "sphere_box".into(),
            primitives: vec![
                Primitive::Sphere {
                    center: [-0.35, -0.1, 0.05],
                    radius: 0.5,
                    albedo: [0.85, 0.35, 0.25],
                },
                Primitive::Box {
                    center: [0.45, 0.15, -0.15],
                    half_extents: [0.3, 0.3, 0.4],
                    albedo: [0.25, 0.55, 0.85],
                },
            ],
            light_direction: [0.4, -0.5, 0.8],
            ambient: 0.3,
            background: Background::White,
            input_ring: RingSpec {
                count: 3,
                radius: 3.0,
                elevation_deg: 25.0,
                azimuth_offset_deg: 0.0,
            },
            target_ring: RingSpec {
                count: 6,
                radius: 3.0,
                elevation_deg: 25.0,
                azimuth_offset_deg: 30.0,
            },
            width: 64,
            height: 64,
            fov_deg: 40.0,
            texture_amplitude: 0.25,
        }
    }

    /// One centred sphere; handy for geometry checks.
    pub fn single_sphere(radius: f64, ring_radius: f64) -> Self {
        Self {
            name: "sphere".into(),
            primitives: vec![Primitive::Sphere {
                center: [0.0; 3],
                radius,
                albedo: [0.7, 0.7, 0.7],
            }],
            input_ring: RingSpec {
                count: 3,
                radius: ring_radius,
                elevation_deg: 20.0,
                azimuth_offset_deg: 0.0,
            },
            target_ring: RingSpec {
                count: 3,
                radius: ring_radius,
                elevation_deg: 20.0,
                azimuth_offset_deg: 60.0,
            },
            ..Self::sphere_and_box()
        }
    }

    pub fn bounds(&self) -> Bounds {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.primitives {
            let (a, b) = p.aabb();
            for k in 0..3 {
                lo[k] = lo[k].min(a[k]);
                hi[k] = hi[k].max(b[k]);
            }
        }
        let center = geometry::scale(geometry::add(lo, hi), 0.5);
        Bounds {
            center,
            radius: 0.5 * geometry::norm(geometry::sub(hi, lo)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::EmptyScene);
        }
        if self.primitives.iter().any(Primitive::is_degenerate) {
            return Err(Error::InvalidArgument("degenerate primitive".into()));
        }
        if self.width == 0 || self.height == 0 || !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::InvalidArgument("invalid image size or field of view".into()));
        }
        if self.input_ring.count == 0 || self.input_ring.radius <= 0.0 || self.target_ring.radius <= 0.0 {
            return Err(Error::InvalidArgument("invalid camera ring".into()));
        }
        Ok(())
    }
}

/// First intersection of a ray with a primitive list.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub normal: Vec3,
    pub primitive: usize,
}

pub fn intersect(primitives: &[Primitive], ray: &Ray) -> Option<Hit> {
    primitives
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            p.intersect(ray.origin, ray.direction, 0.0)
                .map(|(t, normal)| Hit { t, normal, primitive: i })
        })
        .min_by(|a, b| a.t.total_cmp(&b.t))
}

/// Synthetic scene plus the ground truth a real capture would not provide.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub scene: Scene,
    pub spec: SyntheticSceneSpec,
    /// First-hit distance per input view; 0 where the ray misses.
    pub input_depths: Vec<DepthMap>,
    pub target_depths: Vec<DepthMap>,
}

impl SyntheticScene {
    /// The scene with exact first-hit depths attached as input depth priors.
    pub fn scene_with_depths(&self) -> Scene {
        let mut scene = self.scene.clone();
        for (v, d) in scene.input_views.iter_mut().zip(&self.input_depths) {
            v.depth = Some(d.clone());
        }
        scene
    }
}

struct Texture {
    waves: Vec<(Vec3, f64)>,
    amplitude: f64,
}

impl Texture {
    fn new(seed: u64, amplitude: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves = (0..3)
            .map(|_| {
                let dir = geometry::normalize([
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]);
                let freq = rng.random_range(4.0..9.0);
                (geometry::scale(dir, freq), rng.random_range(0.0..std::f64::consts::TAU))
            })
            .collect();
        Self { waves, amplitude }
    }

    fn modulation(&self, p: Vec3) -> f64 {
        let s: f64 = self.waves.iter().map(|(w, phase)| (geometry::dot(*w, p) + phase).sin()).sum();
        1.0 + self.amplitude * s / self.waves.len() as f64
    }
}

struct Render {
    image: Image,
    mask: Mask,
    depth: DepthMap,
}

fn render_view(spec: &SyntheticSceneSpec, camera: &Camera, texture: &Texture) -> Result<Render> {
    let light = geometry::normalize(spec.light_direction);
    let bg = spec.background.rgb();
    let (w, h) = (camera.width, camera.height);
    let mut image = Image::new(w, h);
    let mut mask = Mask::new(w, h);
    let mut depth = DepthMap::new(w, h);
    for row in 0..h {
        for col in 0..w {
            let ray = camera.ray(row, col, 0)?;
            match intersect(&spec.primitives, &ray) {
                Some(hit) => {
                    let p = ray.at(hit.t);
                    let albedo = spec.primitives[hit.primitive].albedo();
                    let shade = spec.ambient + (1.0 - spec.ambient) * geometry::dot(hit.normal, light).max(0.0);
                    let tex = texture.modulation(p);
                    let rgb = [0, 1, 2].map(|k| (albedo[k] * tex * shade).clamp(0.0, 1.0) as f32);
                    image.set(row, col, rgb);
                    mask.set(row, col, true);
                    depth.set(row, col, hit.t as f32);
                }
                None => image.set(row, col, bg),
            }
        }
    }
    Ok(Render {
        image: image.quantized(),
        mask,
        depth,
    })
}

fn ring_cameras(spec: &SyntheticSceneSpec, ring: &RingSpec, bounds: &Bounds) -> Vec<Camera> {
    ring.eyes()
        .into_iter()
        .map(|eye| {
            let mut cam = Camera::look_at(eye, [0.0; 3], spec.width, spec.height, spec.fov_deg);
            cam.fit_bounds(bounds.center, bounds.radius);
            cam
        })
        .collect()
}

/// Renders every view of `spec` by exact ray-primitive intersection with
/// Lambertian shading. Images are quantised exactly as an 8-bit save would,
/// so the in-memory scene equals what [`super::load_scene`] reads back.
pub fn synthesize_scene(spec: &SyntheticSceneSpec, seed: u64) -> Result<SyntheticScene> {
    spec.validate()?;
    let bounds = spec.bounds();
    let texture = Texture::new(seed, spec.texture_amplitude);

    let mut input_views = Vec::new();
    let mut input_depths = Vec::new();
    for (i, cam) in ring_cameras(spec, &spec.input_ring, &bounds).into_iter().enumerate() {
        let r = render_view(spec, &cam, &texture)?;
        input_views.push(View {
            name: format!("input_{i:03}"),
            camera: cam,
            image: r.image,
            mask: Some(r.mask),
            depth: None,
        });
        input_depths.push(r.depth);
    }
    let mut targets = Vec::new();
    let mut target_depths = Vec::new();
    for (i, cam) in ring_cameras(spec, &spec.target_ring, &bounds).into_iter().enumerate() {
        let r = render_view(spec, &cam, &texture)?;
        targets.push(TargetView {
            name: format!("target_{i:03}"),
            camera: cam,
            image: Some(r.image),
            mask: Some(r.mask),
        });
        target_depths.push(r.depth);
    }
    Ok(SyntheticScene {
        scene: Scene {
            name: spec.name.clone(),
            input_views,
            targets,
            background: spec.background,
            split: Split::Test,
            bounds: Some(bounds),
            source: "syn".into(),
        },
        spec: spec.clone(),
        input_depths,
        target_depths,
    })
}
