//! Image-quality metrics and the submission evaluator.
//!
//! Metrics work on [`Frame`]s: stored 8-bit sRGB values divided by 255, so
//! a prediction scores the same in memory as after a PNG round trip.
//!
//! SSIM uses an 11x11 Gaussian window (sigma 1.5), `C1 = 0.01^2`,
//! `C2 = 0.03^2`, population statistics, and averages the SSIM map over the
//! windows that fit entirely inside the crop. Crops smaller than 11 pixels on
//! a side are first reflection-padded to 11.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{self, Image, Mask};
use crate::scene;

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// RGB values in `[0, 1]`, row-major, interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::InvalidArgument(format!(
                "{} values for a {width}x{height} RGB frame",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    /// The stored 8-bit representation of a linear image.
    pub fn from_image(img: &Image) -> Self {
        Self {
            width: img.width,
            height: img.height,
            data: img.display_values(),
        }
    }

    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    fn luma(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }

    fn channel(&self, k: usize) -> Vec<f64> {
        self.data.chunks_exact(3).map(|p| p[k]).collect()
    }
}

fn check_sizes(pred: &Frame, gt: &Frame) -> Result<()> {
    if pred.size() != gt.size() {
        return Err(Error::SizeMismatch {
            what: "prediction".into(),
            expected: gt.size(),
            actual: pred.size(),
        });
    }
    Ok(())
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

/// Mean squared error over the pixels where `keep` holds, all channels.
fn masked_mse(pred: &Frame, gt: &Frame, keep: impl Fn(usize) -> bool) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, (p, g)) in pred.data.chunks_exact(3).zip(gt.data.chunks_exact(3)).enumerate() {
        if keep(i) {
            for k in 0..3 {
                let d = p[k] - g[k];
                sum += d * d;
            }
            count += 3;
        }
    }
    (count > 0).then(|| sum / count as f64)
}

/// `10 log10(1 / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(pred: &Frame, gt: &Frame) -> Result<f64> {
    check_sizes(pred, gt)?;
    let mse = masked_mse(pred, gt, |_| true).ok_or_else(|| Error::InvalidArgument("empty frame".into()))?;
    Ok(psnr_from_mse(mse))
}

/// PSNR over the masked pixels only.
pub fn masked_psnr(pred: &Frame, gt: &Frame, mask: &Mask) -> Result<f64> {
    check_sizes(pred, gt)?;
    if (mask.width, mask.height) != gt.size() {
        return Err(Error::SizeMismatch {
            what: "mask".into(),
            expected: gt.size(),
            actual: (mask.width, mask.height),
        });
    }
    let mse = masked_mse(pred, gt, |i| mask.data[i]).ok_or(Error::EmptyMask)?;
    Ok(psnr_from_mse(mse))
}

/// Inclusive pixel box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskBox {
    pub row_min: usize,
    pub row_max: usize,
    pub col_min: usize,
    pub col_max: usize,
}

impl MaskBox {
    pub fn height(&self) -> usize {
        self.row_max - self.row_min + 1
    }

    pub fn width(&self) -> usize {
        self.col_max - self.col_min + 1
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            row_min: 0,
            row_max: height - 1,
            col_min: 0,
            col_max: width - 1,
        }
    }
}

/// Smallest box containing every set pixel.
pub fn mask_bbox(mask: &Mask) -> Result<MaskBox> {
    let mut b: Option<MaskBox> = None;
    for r in 0..mask.height {
        for c in 0..mask.width {
            if mask.get(r, c) {
                b = Some(match b {
                    None => MaskBox {
                        row_min: r,
                        row_max: r,
                        col_min: c,
                        col_max: c,
                    },
                    Some(b) => MaskBox {
                        row_min: b.row_min.min(r),
                        row_max: b.row_max.max(r),
                        col_min: b.col_min.min(c),
                        col_max: b.col_max.max(c),
                    },
                });
            }
        }
    }
    b.ok_or(Error::EmptyMask)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SsimMode {
    /// BT.601 luma.
    #[default]
    Luma,
    /// Mean of per-channel SSIM.
    ChannelMean,
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Reflection index (edge not repeated) into `0..n`.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Crops `plane` (of width `w`) to `b`, reflection-padding each side that is
/// shorter than the window.
fn crop_padded(plane: &[f64], w: usize, b: &MaskBox) -> (Vec<f64>, usize, usize) {
    let (bh, bw) = (b.height(), b.width());
    let (ph, pw) = (bh.max(SSIM_WINDOW), bw.max(SSIM_WINDOW));
    let (top, left) = ((ph - bh) / 2, (pw - bw) / 2);
    let mut out = Vec::with_capacity(ph * pw);
    for r in 0..ph {
        let rr = reflect(r as isize - top as isize, bh);
        for c in 0..pw {
            let cc = reflect(c as isize - left as isize, bw);
            out.push(plane[(b.row_min + rr) * w + b.col_min + cc]);
        }
    }
    (out, ph, pw)
}

fn ssim_plane(x: &[f64], y: &[f64], h: usize, w: usize) -> f64 {
    let win = gaussian_window();
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for r in 0..oh {
        for c in 0..ow {
            let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..SSIM_WINDOW {
                for j in 0..SSIM_WINDOW {
                    let k = win[i] * win[j];
                    let idx = (r + i) * w + c + j;
                    let (a, b) = (x[idx], y[idx]);
                    mx += k * a;
                    my += k * b;
                    xx += k * (a * a);
                    yy += k * (b * b);
                    xy += k * (a * b);
                }
            }
            let vx = xx - mx * mx;
            let vy = yy - my * my;
            let cxy = xy - mx * my;
            total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
        }
    }
    total / (oh * ow) as f64
}

/// Mean SSIM over the crop `b`.
pub fn ssim_box(pred: &Frame, gt: &Frame, b: &MaskBox, mode: SsimMode) -> Result<f64> {
    check_sizes(pred, gt)?;
    if b.row_min > b.row_max || b.col_min > b.col_max || b.row_max >= gt.height || b.col_max >= gt.width {
        return Err(Error::InvalidArgument(format!("box {b:?} outside a {}x{} frame", gt.width, gt.height)));
    }
    let planes: Vec<(Vec<f64>, Vec<f64>)> = match mode {
        SsimMode::Luma => vec![(pred.luma(), gt.luma())],
        SsimMode::ChannelMean => (0..3).map(|k| (pred.channel(k), gt.channel(k))).collect(),
    };
    let mut sum = 0.0;
    for (p, g) in &planes {
        let (pc, h, w) = crop_padded(p, pred.width, b);
        let (gc, _, _) = crop_padded(g, gt.width, b);
        sum += ssim_plane(&pc, &gc, h, w);
    }
    Ok(sum / planes.len() as f64)
}

/// An external per-pair perceptual scorer, such as a wrapper around a
/// learned metric.
pub trait PerceptualScorer {
    fn name(&self) -> &str;
    fn score(&self, pred: &Path, gt: &Path) -> Result<f64>;
}

/// Runs `program [args..] <pred> <gt>` and parses a number from stdout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExternalScorer {
    pub program: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
}

impl PerceptualScorer for ExternalScorer {
    fn name(&self) -> &str {
        "perceptual"
    }

    fn score(&self, pred: &Path, gt: &Path) -> Result<f64> {
        let out = Command::new(&self.program).args(&self.args).arg(pred).arg(gt).output()?;
        if !out.status.success() {
            return Err(Error::Scorer(format!(
                "{} exited with {}",
                self.program.display(),
                out.status
            )));
        }
        let text = String::from_utf8_lossy(&out.stdout);
        text.trim()
            .parse::<f64>()
            .map_err(|_| Error::Scorer(format!("could not parse score from {:?}", text.trim())))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ViewMetrics {
    pub scene: String,
    pub view: String,
    pub source: String,
    pub psnr: f64,
    pub psnr_m: f64,
    pub ssim_m: f64,
    pub bbox: MaskBox,
    pub perceptual: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Default)]
pub struct Means {
    pub psnr: f64,
    pub psnr_m: f64,
    pub ssim_m: f64,
    pub count: usize,
}

impl Means {
    fn of<'a>(views: impl Iterator<Item = &'a ViewMetrics>) -> Self {
        let mut m = Means::default();
        for v in views {
            m.psnr += v.psnr;
            m.psnr_m += v.psnr_m;
            m.ssim_m += v.ssim_m;
            m.count += 1;
        }
        if m.count > 0 {
            let n = m.count as f64;
            m.psnr /= n;
            m.psnr_m /= n;
            m.ssim_m /= n;
        }
        m
    }

    fn mean_of(items: &[Means]) -> Self {
        let n = items.len() as f64;
        Means {
            psnr: items.iter().map(|m| m.psnr).sum::<f64>() / n,
            psnr_m: items.iter().map(|m| m.psnr_m).sum::<f64>() / n,
            ssim_m: items.iter().map(|m| m.ssim_m).sum::<f64>() / n,
            count: items.iter().map(|m| m.count).sum(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub views: Vec<ViewMetrics>,
    pub sources: BTreeMap<String, Means>,
    /// Mean of the per-source means.
    pub source_mean: Means,
    /// Mean over all views.
    pub view_mean: Means,
}

impl MetricReport {
    pub fn from_views(views: Vec<ViewMetrics>) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::InvalidArgument("no views to aggregate".into()));
        }
        let mut labels: Vec<&str> = views.iter().map(|v| v.source.as_str()).collect();
        labels.sort();
        labels.dedup();
        let sources: BTreeMap<String, Means> = labels
            .iter()
            .map(|s| (s.to_string(), Means::of(views.iter().filter(|v| v.source == *s))))
            .collect();
        let per_source: Vec<Means> = sources.values().copied().collect();
        Ok(Self {
            source_mean: Means::mean_of(&per_source),
            view_mean: Means::of(views.iter()),
            sources,
            views,
        })
    }

    /// `scene,view,source,psnr,psnr_m,ssim_m`, plus a `perceptual` column
    /// when any view has one.
    pub fn to_csv(&self) -> String {
        let extra = self.views.iter().any(|v| v.perceptual.is_some());
        let mut s = String::from("scene,view,source,psnr,psnr_m,ssim_m");
        s.push_str(if extra { ",perceptual\n" } else { "\n" });
        for v in &self.views {
            let _ = write!(s, "{},{},{},{:.6},{:.6},{:.6}", v.scene, v.view, v.source, v.psnr, v.psnr_m, v.ssim_m);
            if extra {
                let _ = write!(s, ",{}", v.perceptual.map(|p| format!("{p:.6}")).unwrap_or_default());
            }
            s.push('\n');
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<24} {:>6} {:>9} {:>9} {:>8}\n", "group", "views", "PSNR", "PSNR-M", "SSIM-M");
        let mut row = |name: &str, m: &Means| {
            let _ = writeln!(s, "{name:<24} {:>6} {:>9.3} {:>9.3} {:>8.4}", m.count, m.psnr, m.psnr_m, m.ssim_m);
        };
        for (name, m) in &self.sources {
            row(name, m);
        }
        row("avg (mean of sources)", &self.source_mean);
        row("avg (mean of views)", &self.view_mean);
        if self.views.iter().any(|v| v.psnr_m >= PSNR_CAP || v.psnr >= PSNR_CAP) {
            s.push_str(&format!("note: identical images are reported at the {PSNR_CAP} dB cap\n"));
        }
        s
    }
}

/// Metrics for one prediction against its ground truth; a missing mask
/// counts as a full mask.
pub fn view_metrics(pred: &Frame, gt: &Frame, mask: Option<&Mask>, mode: SsimMode) -> Result<(f64, f64, f64, MaskBox)> {
    let full;
    let mask = match mask {
        Some(m) => m,
        None => {
            full = Mask::full(gt.width, gt.height);
            &full
        }
    };
    let p = psnr(pred, gt)?;
    let pm = masked_psnr(pred, gt, mask)?;
    let b = mask_bbox(mask)?;
    let sm = ssim_box(pred, gt, &b, mode)?;
    Ok((p, pm, sm, b))
}

/// Scores `pred_dir` against ground truth in `gt_dir`.
///
/// `gt_dir` is either one scene directory (it holds `cameras.json`) or a
/// directory of scene directories. Ground truth comes from each scene's
/// `targets/images` and `targets/masks`; predictions are read from
/// `<pred_dir>/<view>.png` for a single scene and
/// `<pred_dir>/<scene>/<view>.png` otherwise. Every target view must have a
/// prediction.
pub fn evaluate_submission(
    pred_dir: &Path,
    gt_dir: &Path,
    mode: SsimMode,
    scorer: Option<&dyn PerceptualScorer>,
) -> Result<MetricReport> {
    let single = gt_dir.join(scene::MANIFEST_FILE).exists();
    let scene_dirs: Vec<(PathBuf, PathBuf)> = if single {
        vec![(gt_dir.to_path_buf(), pred_dir.to_path_buf())]
    } else {
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(gt_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(scene::MANIFEST_FILE).exists())
            .collect();
        dirs.sort();
        if dirs.is_empty() {
            return Err(Error::MissingCamera(gt_dir.join(scene::MANIFEST_FILE)));
        }
        dirs.into_iter()
            .map(|d| {
                let name = d.file_name().expect("scene dir name").to_owned();
                (d, pred_dir.join(name))
            })
            .collect()
    };

    let mut missing = Vec::new();
    let mut views = Vec::new();
    for (gdir, pdir) in scene_dirs {
        let sc = scene::load_scene(&gdir)?;
        for t in &sc.targets {
            let gt_img = t.image.as_ref().ok_or(Error::MissingReferences)?;
            let ppath = pdir.join(format!("{}.png", t.name));
            if !ppath.exists() {
                missing.push(format!("{}/{}", sc.name, t.name));
                continue;
            }
            let pred = Frame::from_image(&image::read_image(&ppath)?);
            let gt = Frame::from_image(gt_img);
            let (psnr, psnr_m, ssim_m, bbox) = view_metrics(&pred, &gt, t.mask.as_ref(), mode).map_err(|e| match e {
                Error::SizeMismatch { expected, actual, .. } => Error::SizeMismatch {
                    what: format!("prediction {}", ppath.display()),
                    expected,
                    actual,
                },
                other => other,
            })?;
            let perceptual = match scorer {
                Some(s) => Some(s.score(&ppath, &gdir.join("targets/images").join(format!("{}.png", t.name)))?),
                None => None,
            };
            views.push(ViewMetrics {
                scene: sc.name.clone(),
                view: t.name.clone(),
                source: sc.source.clone(),
                psnr,
                psnr_m,
                ssim_m,
                bbox,
                perceptual,
            });
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingPredictions(missing));
    }
    MetricReport::from_views(views)
}
