use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::autodiff::{adam_step, load_checkpoint, save_checkpoint, AdamConfig, Graph, LrSchedule, OptimizerState, StepOutcome, Tensor};
use crate::encoding::{mask_at, EncodingConfig, FrequencyMask};
use crate::error::{Error, Result};
use crate::field::{Field, FieldConfig, FieldVariant, Normalization};
use crate::geometry::{self, Vec3};
use crate::image::{self, DepthMap, FeatureMap, Image, Mask};
use crate::losses::{self, LossReport, Method, Term, Terms};
use crate::metrics::{self, Frame, MetricReport, SsimMode, ViewMetrics};
use crate::priors::{self, DepthPriorKind, FeaturePriorKind, DESCRIPTOR_DIM};
use crate::renderer::{self, render_batch, RenderedView, SamplingConfig};
use crate::scene::{Background, Bounds, Camera, Ray, Scene};

/// Trained coarse and fine fields with what is needed to render them.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub method: Method,
    pub coarse: Field<f32>,
    pub fine: Option<Field<f32>>,
    pub sampling: SamplingConfig,
    pub background: Background,
    /// Step whose frequency mask is applied when rendering; `None` renders
    /// with every band open.
    pub mask_step: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldRecord {
    field: FieldConfig,
    encoding: EncodingConfig,
    normalization: Normalization,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelManifest {
    method: Method,
    coarse: FieldRecord,
    fine: Option<FieldRecord>,
    sampling: SamplingConfig,
    background: Background,
    mask_step: Option<usize>,
}

/// File names inside a model directory.
pub const MODEL_FILE: &str = "model.json";
pub const COARSE_CHECKPOINT: &str = "coarse.ckpt";
pub const FINE_CHECKPOINT: &str = "fine.ckpt";

impl FieldRecord {
    fn of(f: &Field<f32>) -> Self {
        Self {
            field: f.config,
            encoding: f.encoding,
            normalization: f.normalization,
        }
    }

    fn load(&self, path: &Path) -> Result<Field<f32>> {
        let mut f = Field::new(self.field, self.encoding, 0)?.with_normalization(self.normalization);
        load_checkpoint(&mut f.params, path)?;
        Ok(f)
    }
}

impl TrainedModel {
    pub fn eval_mask(&self) -> Option<FrequencyMask> {
        self.mask_step.map(|s| mask_at(s, &self.coarse.encoding))
    }

    /// Writes `model.json` and the checkpoints into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = ModelManifest {
            method: self.method,
            coarse: FieldRecord::of(&self.coarse),
            fine: self.fine.as_ref().map(FieldRecord::of),
            sampling: self.sampling,
            background: self.background,
            mask_step: self.mask_step,
        };
        fs::write(dir.join(MODEL_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
        save_checkpoint(&self.coarse.params, &dir.join(COARSE_CHECKPOINT))?;
        if let Some(f) = &self.fine {
            save_checkpoint(&f.params, &dir.join(FINE_CHECKPOINT))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MODEL_FILE);
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        let m: ModelManifest = serde_json::from_str(&fs::read_to_string(&path)?)?;
        Ok(Self {
            method: m.method,
            coarse: m.coarse.load(&dir.join(COARSE_CHECKPOINT))?,
            fine: m.fine.map(|r| r.load(&dir.join(FINE_CHECKPOINT))).transpose()?,
            sampling: m.sampling,
            background: m.background,
            mask_step: m.mask_step,
        })
    }

    pub fn render(&self, camera: &Camera, view: usize) -> Result<RenderedView> {
        renderer::render_camera(
            &self.coarse,
            self.fine.as_ref(),
            camera,
            view,
            &self.sampling,
            self.background.rgb(),
            self.eval_mask().as_ref(),
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub reports: Vec<LossReport>,
    /// Optimizer steps skipped for non-finite gradients.
    pub skipped: usize,
}

impl TrainLog {
    /// `step,term,weight,value` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,term,weight,value\n");
        for r in &self.reports {
            s.push_str(&r.csv_rows());
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutput {
    pub model: TrainedModel,
    pub log: TrainLog,
}

/// Bounding sphere of the scene: the stored bounds, or else the point
/// closest to every camera's optical axis with a radius of a third of the
/// mean camera distance.
pub fn scene_bounds(scene: &Scene) -> Result<Bounds> {
    if let Some(b) = scene.bounds {
        return Ok(b);
    }
    let cams: Vec<&Camera> = scene.input_views.iter().map(|v| &v.camera).collect();
    if cams.is_empty() {
        return Err(Error::EmptyScene);
    }
    // Least squares: sum_i (I - d_i d_i^T) (x - o_i) = 0.
    let mut a = [[0.0; 3]; 3];
    let mut b = [0.0; 3];
    for c in &cams {
        let (o, d) = (c.position(), c.forward());
        for i in 0..3 {
            for j in 0..3 {
                let m = if i == j { 1.0 } else { 0.0 } - d[i] * d[j];
                a[i][j] += m;
                b[i] += m * o[j];
            }
        }
    }
    let center = solve3(a, b).unwrap_or_else(|| {
        let n = cams.len() as f64;
        let s = cams.iter().fold([0.0; 3], |acc, c| geometry::add(acc, c.position()));
        geometry::scale(s, 1.0 / n)
    });
    let dist = cams.iter().map(|c| geometry::norm(geometry::sub(c.position(), center))).sum::<f64>() / cams.len() as f64;
    Ok(Bounds {
        center,
        radius: dist / 3.0,
    })
}

fn solve3(a: [[f64; 3]; 3], b: Vec3) -> Option<Vec3> {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    if d.abs() < 1e-9 {
        return None;
    }
    Some([0, 1, 2].map(|k| {
        let mut m = a;
        for i in 0..3 {
            m[i][k] = b[i];
        }
        det(m) / d
    }))
}

struct ViewData {
    camera: Camera,
    image: Image,
    depth: Option<DepthMap>,
    features: Option<FeatureMap>,
}

struct Data {
    views: Vec<ViewData>,
    pool: Vec<(usize, usize, usize)>,
}

fn prepare(scene: &Scene, cfg: &TrainConfig, bounds: &Bounds) -> Result<Data> {
    if scene.input_views.is_empty() {
        return Err(Error::EmptyScene);
    }
    let scene = scene.downscaled(cfg.resolution_scale);
    let mut views = Vec::with_capacity(scene.input_views.len());
    for (i, v) in scene.input_views.iter().enumerate() {
        let depth = if cfg.method.uses_depth() {
            let d = v.depth.as_ref().ok_or_else(|| {
                Error::Config(format!("method {} needs depth priors; view {} has none", cfg.method.name(), v.name))
            })?;
            Some(match cfg.depth_prior.kind {
                DepthPriorKind::File => d.clone(),
                DepthPriorKind::SyntheticGtPlusNoise => priors::noisy_depth(
                    d,
                    cfg.depth_prior.noise_fraction * bounds.diameter(),
                    cfg.depth_prior.seed.wrapping_add(i as u64),
                )?,
            })
        } else {
            None
        };
        let features = if cfg.method.uses_features() {
            Some(match (&cfg.feature_prior, &cfg.feature_dir) {
                (FeaturePriorKind::LocalDescriptor, _) => priors::local_descriptor(&v.image),
                (FeaturePriorKind::File, Some(dir)) => priors::feature_prior_from_file(
                    &dir.join(format!("{}.feat", v.name)),
                    v.image.width,
                    v.image.height,
                    cfg.field.feature_dim,
                )?,
                (FeaturePriorKind::File, None) => {
                    return Err(Error::Config("feature_prior = \"file\" needs feature_dir".into()))
                }
            })
        } else {
            None
        };
        views.push(ViewData {
            camera: v.camera.clone(),
            image: v.image.clone(),
            depth,
            features,
        });
    }
    let pool = views
        .iter()
        .enumerate()
        .flat_map(|(i, v)| (0..v.camera.height).flat_map(move |r| (0..v.camera.width).map(move |c| (i, r, c))))
        .collect();
    Ok(Data { views, pool })
}

/// Seeded permutation of the pixel pool, redrawn each epoch.
struct Sampler {
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    seed: u64,
}

impl Sampler {
    fn new(len: usize, seed: u64) -> Self {
        let mut s = Self {
            order: (0..len).collect(),
            cursor: len,
            epoch: 0,
            seed,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ self.epoch.wrapping_mul(0x2545_F491_4F6C_DD1D));
        self.order.sort_unstable();
        self.order.shuffle(&mut rng);
        self.cursor = 0;
        self.epoch += 1;
    }

    fn next(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.reshuffle();
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }
}

struct Patch {
    view: usize,
    row: usize,
    col: usize,
    size: usize,
}

fn pick_patch(data: &Data, size: usize, rng: &mut ChaCha8Rng) -> Patch {
    let view = rng.random_range(0..data.views.len());
    let v = &data.views[view];
    let (w, h) = (v.camera.width, v.camera.height);
    let size = size.min(w).min(h);
    let defined: Vec<usize> = v
        .depth
        .as_ref()
        .map(|d| (0..d.data.len()).filter(|&i| d.data[i] > 0.0).collect())
        .unwrap_or_default();
    let (cr, cc) = if defined.is_empty() {
        (rng.random_range(0..h), rng.random_range(0..w))
    } else {
        let i = defined[rng.random_range(0..defined.len())];
        (i / w, i % w)
    };
    Patch {
        view,
        row: cr.saturating_sub(size / 2).min(h - size),
        col: cc.saturating_sub(size / 2).min(w - size),
        size,
    }
}

fn model_fields(cfg: &TrainConfig, bounds: &Bounds) -> Result<(Field<f32>, Option<Field<f32>>)> {
    let norm = Normalization {
        center: bounds.center,
        scale: bounds.radius,
    };
    let with_features = |on: bool| FieldConfig {
        variant: if on { FieldVariant::FeatureConditioned } else { FieldVariant::Plain },
        ..cfg.field
    };
    let feat = cfg.method.uses_features();
    if feat && cfg.feature_prior == FeaturePriorKind::LocalDescriptor && cfg.field.feature_dim != DESCRIPTOR_DIM {
        return Err(Error::Config(format!(
            "field.feature_dim must be {DESCRIPTOR_DIM} for the local descriptor prior"
        )));
    }
    let coarse_cfg = with_features(feat && (cfg.feature_in_coarse || !cfg.use_fine));
    let coarse = Field::new(coarse_cfg, cfg.encoding, splitmix(cfg.seed.wrapping_mul(2).wrapping_add(1)))?.with_normalization(norm);
    let fine = if cfg.use_fine {
        Some(Field::new(with_features(feat), cfg.encoding, splitmix(cfg.seed.wrapping_mul(2).wrapping_add(2)))?.with_normalization(norm))
    } else {
        None
    };
    Ok((coarse, fine))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Trains fresh fields on the scene's input views.
pub fn train(scene: &Scene, cfg: &TrainConfig) -> Result<TrainOutput> {
    train_from(scene, cfg, None, 0, None)
}

/// Trains starting from `init` (or fresh fields), with step-dependent
/// schedules evaluated at `start_step + i`. A fresh optimizer is always
/// used. On divergence the last finite model is written to `failure_dir`
/// when one is given.
pub fn train_from(
    scene: &Scene,
    cfg: &TrainConfig,
    init: Option<TrainedModel>,
    start_step: usize,
    failure_dir: Option<&Path>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let bounds = scene_bounds(scene)?;
    let data = prepare(scene, cfg, &bounds)?;
    let (mut coarse, mut fine) = match init {
        Some(m) => (m.coarse, m.fine),
        None => model_fields(cfg, &bounds)?,
    };
    let sampling = SamplingConfig {
        seed: cfg.seed,
        ..cfg.sampling
    };
    let background = scene.background.rgb();
    let schedule = LrSchedule {
        initial: cfg.lr,
        last: cfg.lr_final,
        steps: cfg.iterations,
    };
    let adam = AdamConfig::default();
    let mut opt_c = OptimizerState::new(&coarse.params, schedule);
    let mut opt_f = fine.as_ref().map(|f| OptimizerState::new(&f.params, schedule));
    let mut sampler = Sampler::new(data.pool.len(), cfg.seed);
    let mut log = TrainLog::default();
    let max_step = start_step + cfg.iterations;
    let mut bad_in_a_row = 0;

    for i in 0..cfg.iterations {
        let step = start_step + i;
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(cfg.seed ^ splitmix(step as u64)));
        let mut rays: Vec<Ray> = Vec::with_capacity(cfg.batch_size + cfg.patch_size * cfg.patch_size);
        let mut pixels: Vec<(usize, usize, usize)> = Vec::with_capacity(rays.capacity());
        for _ in 0..cfg.batch_size {
            let (v, r, c) = data.pool[sampler.next()];
            rays.push(data.views[v].camera.ray(r, c, v)?);
            pixels.push((v, r, c));
        }
        let patch = cfg.method.uses_depth().then(|| pick_patch(&data, cfg.patch_size, &mut rng));
        if let Some(p) = &patch {
            for r in p.row..p.row + p.size {
                for c in p.col..p.col + p.size {
                    rays.push(data.views[p.view].camera.ray(r, c, p.view)?);
                    pixels.push((p.view, r, c));
                }
            }
        }
        let mask = cfg.method.uses_frequency_mask().then(|| mask_at(step, &cfg.encoding));

        let mut g = Graph::<f32>::new();
        let forward = (|| -> Result<(crate::autodiff::Var, Vec<(Term, f64, crate::autodiff::Var)>)> {
            let br = render_batch(&mut g, &coarse, fine.as_ref(), &rays, &sampling, background, mask.as_ref(), step)?;
            let target = Tensor::new(
                pixels.len(),
                3,
                pixels.iter().flat_map(|&(v, r, c)| data.views[v].image.get(r, c)).collect(),
            )?;
            let target = g.constant(target);
            let mut terms = Terms::new();
            let fine_colour = br.fine.as_ref().map(|p| p.colour);
            terms.insert(
                Term::Photometric,
                losses::photometric(&mut g, br.coarse.colour, fine_colour, target, cfg.losses.mean_photometric)?,
            );

            let mut occ = g.scalar(0.0);
            let mut passes = Vec::new();
            if cfg.losses.occlusion_coarse || br.fine.is_none() {
                passes.push(br.coarse.sigma);
            }
            if let (true, Some(p)) = (cfg.losses.occlusion_fine, br.fine.as_ref()) {
                passes.push(p.sigma);
            }
            for s in passes {
                let k = g.shape(s)[1];
                let o = losses::occlusion(&mut g, s, cfg.losses.occlusion_range.min(k))?;
                occ = g.add(occ, o)?;
            }
            terms.insert(Term::Occlusion, occ);

            if let Some(p) = &patch {
                let last = br.last();
                let n = p.size * p.size;
                let off = cfg.batch_size;
                let depth = g.slice(last.depth, crate::autodiff::Axis::Rows, off, n)?;
                let opacity = g.slice(last.opacity, crate::autodiff::Axis::Rows, off, n)?;
                let floor = g.scalar(1e-3);
                let denom = g.max(opacity, floor)?;
                let dn = g.div(depth, denom)?;
                let prior_map = data.views[p.view].depth.as_ref().expect("depth prior");
                let w = data.views[p.view].camera.width;
                let op_vals = g.value(opacity).data().to_vec();
                let mut prior = Vec::with_capacity(n);
                let mut valid = Vec::with_capacity(n);
                for k in 0..n {
                    let (r, c) = (p.row + k / p.size, p.col + k % p.size);
                    let d = prior_map.data[r * w + c] as f64;
                    prior.push(d);
                    valid.push(d > 0.0 && op_vals[k] > 0.5);
                }
                let grid = g.reshape(dn, p.size, p.size)?;
                terms.insert(Term::Tv, losses::depth_tv(&mut g, grid, Some(&valid))?);
                let rp = losses::rank_pairs(&prior, &valid, cfg.losses.rank_pairs, &mut rng);
                terms.insert(Term::Rank, losses::depth_rank(&mut g, dn, &rp, cfg.losses.rank_margin)?);
                let kp = losses::knn_pairs(&prior, &valid, p.size, p.size, cfg.losses.knn, cfg.losses.knn_window);
                terms.insert(
                    Term::Continuity,
                    losses::depth_continuity(&mut g, dn, &kp, cfg.losses.continuity_threshold)?,
                );
            }

            if cfg.method.uses_features() {
                let d = cfg.field.feature_dim;
                let ft = Tensor::new(
                    pixels.len(),
                    d,
                    pixels
                        .iter()
                        .flat_map(|&(v, r, c)| data.views[v].features.as_ref().expect("feature prior").pixel(r, c).to_vec())
                        .collect(),
                )?;
                let ft = g.constant(ft);
                let mut lf = g.scalar(0.0);
                for f in [Some(&br.coarse), br.fine.as_ref()].into_iter().flatten().filter_map(|p| p.feature) {
                    let l = losses::feature(&mut g, f, ft)?;
                    lf = g.add(lf, l)?;
                }
                terms.insert(Term::Feature, lf);
            }
            losses::total_loss(&mut g, cfg.method, &terms, &cfg.losses, step, max_step)
        })();

        let (total, parts) = match forward {
            Ok(v) => {
                bad_in_a_row = 0;
                v
            }
            Err(Error::NonFinite { op }) => {
                bad_in_a_row += 1;
                log::warn!("non-finite value in {op} at step {step}");
                if bad_in_a_row >= 2 {
                    if let Some(dir) = failure_dir {
                        model_of(cfg, coarse.clone(), fine.clone(), scene.background, max_step).save(dir)?;
                    }
                    return Err(Error::Diverged { step });
                }
                continue;
            }
            Err(e) => return Err(e),
        };
        let report = (cfg.log_every > 0 && (i % cfg.log_every == 0 || i + 1 == cfg.iterations))
            .then(|| losses::report(&g, step, total, &parts))
            .transpose()?;
        let grads = g.backward(total)?;
        let gc = grads.for_store(&coarse.params);
        let mut skipped = adam_step(&mut coarse.params, &gc, &mut opt_c, &adam)? == StepOutcome::Skipped;
        if let (Some(f), Some(o)) = (fine.as_mut(), opt_f.as_mut()) {
            let gf = grads.for_store(&f.params);
            skipped |= adam_step(&mut f.params, &gf, o, &adam)? == StepOutcome::Skipped;
        }
        if skipped {
            log.skipped += 1;
        }
        if let Some(r) = report {
            log.reports.push(r);
        }
    }
    Ok(TrainOutput {
        model: model_of(cfg, coarse, fine, scene.background, max_step),
        log,
    })
}

fn model_of(
    cfg: &TrainConfig,
    coarse: Field<f32>,
    fine: Option<Field<f32>>,
    background: Background,
    end_step: usize,
) -> TrainedModel {
    TrainedModel {
        method: cfg.method,
        coarse,
        fine,
        sampling: SamplingConfig {
            seed: cfg.seed,
            ..cfg.sampling
        },
        background,
        mask_step: cfg.method.uses_frequency_mask().then_some(end_step),
    }
}

/// Renders each camera at `1 / upsample` of its resolution and bilinearly
/// upsamples the image back to the camera size. Depth and opacity stay at
/// the rendered resolution.
pub fn render_views(model: &TrainedModel, cameras: &[Camera], upsample: usize) -> Result<Vec<RenderedView>> {
    let factor = upsample.max(1);
    cameras
        .iter()
        .enumerate()
        .map(|(i, cam)| {
            let small = if factor == 1 {
                cam.clone()
            } else {
                cam.rescaled((cam.width / factor).max(1), (cam.height / factor).max(1))
            };
            let mut out = model.render(&small, i)?;
            if (small.width, small.height) != (cam.width, cam.height) {
                out.image = image::resize_bilinear(&out.image, cam.width, cam.height);
            }
            Ok(out)
        })
        .collect()
}

/// Renders every target with ground truth and scores it.
pub fn score_targets(model: &TrainedModel, scene: &Scene, upsample: usize) -> Result<MetricReport> {
    let targets: Vec<_> = scene.targets.iter().filter(|t| t.image.is_some()).collect();
    if targets.is_empty() {
        return Err(Error::MissingReferences);
    }
    let cams: Vec<Camera> = targets.iter().map(|t| t.camera.clone()).collect();
    let renders = render_views(model, &cams, upsample)?;
    score_images(scene, &renders.into_iter().map(|r| r.image).collect::<Vec<_>>())
}

/// Scores predictions (in target order, skipping targets without ground
/// truth) against the scene's targets.
pub fn score_images(scene: &Scene, predictions: &[Image]) -> Result<MetricReport> {
    let targets: Vec<_> = scene.targets.iter().filter(|t| t.image.is_some()).collect();
    if targets.len() != predictions.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let views = targets
        .iter()
        .zip(predictions)
        .map(|(t, p)| {
            let gt = Frame::from_image(t.image.as_ref().expect("filtered"));
            let pred = Frame::from_image(p);
            let (psnr, psnr_m, ssim_m, bbox) = metrics::view_metrics(&pred, &gt, t.mask.as_ref(), SsimMode::Luma)?;
            Ok(ViewMetrics {
                scene: scene.name.clone(),
                view: t.name.clone(),
                source: scene.source.clone(),
                psnr,
                psnr_m,
                ssim_m,
                bbox,
                perceptual: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MetricReport::from_views(views)
}

/// Writes rendered images (and depth rasters) as `<name>.png` / `<name>.depth`.
pub fn write_renders(dir: &Path, names: &[String], renders: &[RenderedView]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(renders.len());
    for (name, r) in names.iter().zip(renders) {
        let p = dir.join(format!("{name}.png"));
        image::write_image(&p, &r.image)?;
        image::write_depth(&dir.join(format!("{name}.depth")), &r.depth)?;
        paths.push(p);
    }
    Ok(paths)
}

/// Masks of the scene's input views, if every view has one.
pub fn input_masks(scene: &Scene) -> Option<Vec<Mask>> {
    scene.input_views.iter().map(|v| v.mask.clone()).collect()
}
