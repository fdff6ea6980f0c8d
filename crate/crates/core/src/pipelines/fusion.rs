use super::config::{FusionConfig, FusionMode};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::{self, Frame};

/// Blend weights: one scalar per candidate, or one map per candidate with
/// a weight per pixel.
#[derive(Clone, Debug, PartialEq)]
pub enum FusionWeights {
    Global(Vec<f64>),
    PerPixel(Vec<Vec<f32>>),
}

fn check_sizes(candidates: &[Image]) -> Result<(usize, usize)> {
    let first = candidates
        .first()
        .ok_or_else(|| Error::InvalidArgument("fusion needs at least one candidate".into()))?;
    let size = first.size();
    for c in &candidates[1..] {
        if c.size() != size {
            return Err(Error::SizeMismatch {
                what: "fusion candidate".into(),
                expected: size,
                actual: c.size(),
            });
        }
    }
    Ok(size)
}

fn normalized(w: &[f64]) -> Result<Vec<f64>> {
    let s: f64 = w.iter().sum();
    if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) || !(s > 0.0) {
        return Err(Error::InvalidArgument(format!("fusion weights must be non-negative with a positive sum: {w:?}")));
    }
    Ok(w.iter().map(|x| x / s).collect())
}

/// Per-pixel convex blend written as `c0 + sum_k w_k (c_k - c0)` so that a
/// weight of zero on every other candidate returns `c0` exactly.
pub fn pixel_weighted(candidates: &[Image], weights: &FusionWeights) -> Result<Image> {
    let (w, h) = check_sizes(candidates)?;
    let n = candidates.len();
    let mut out = candidates[0].clone();
    let pixel_weights: Box<dyn Fn(usize) -> Result<Vec<f64>>> = match weights {
        FusionWeights::Global(v) => {
            if v.len() != n {
                return Err(Error::InvalidArgument(format!("{} weights for {n} candidates", v.len())));
            }
            let v = normalized(v)?;
            Box::new(move |_| Ok(v.clone()))
        }
        FusionWeights::PerPixel(maps) => {
            if maps.len() != n || maps.iter().any(|m| m.len() != w * h) {
                return Err(Error::InvalidArgument(format!("expected {n} weight maps of {w}x{h}")));
            }
            Box::new(move |p| normalized(&maps.iter().map(|m| m[p] as f64).collect::<Vec<_>>()))
        }
    };
    for p in 0..w * h {
        let (r, c) = (p / w, p % w);
        let wk = pixel_weights(p)?;
        let base = candidates[0].get(r, c);
        let mut px = base.map(f64::from);
        for (k, cand) in candidates.iter().enumerate().skip(1) {
            let v = cand.get(r, c);
            for ch in 0..3 {
                px[ch] += wk[k] * (v[ch] as f64 - base[ch] as f64);
            }
        }
        out.set(r, c, px.map(|x| x as f32));
    }
    Ok(out)
}

/// Picks, per view, the candidate with the highest PSNR against the
/// reference (the first on ties). `candidates[k][v]` is candidate `k`'s
/// render of view `v`. Returns the fused views and the chosen indices.
pub fn metric_select(candidates: &[Vec<Image>], references: Option<&[Image]>) -> Result<(Vec<Image>, Vec<usize>)> {
    let refs = references.ok_or(Error::MissingReferences)?;
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("fusion needs at least one candidate".into()));
    }
    if candidates.iter().any(|c| c.len() != refs.len()) {
        return Err(Error::InvalidArgument("every candidate needs one image per reference".into()));
    }
    let mut fused = Vec::with_capacity(refs.len());
    let mut chosen = Vec::with_capacity(refs.len());
    for (v, gt) in refs.iter().enumerate() {
        let gt = Frame::from_image(gt);
        let mut best = (0, f64::NEG_INFINITY);
        for (k, cand) in candidates.iter().enumerate() {
            let s = metrics::psnr(&Frame::from_image(&cand[v]), &gt)?;
            if s > best.1 {
                best = (k, s);
            }
        }
        chosen.push(best.0);
        fused.push(candidates[best.0][v].clone());
    }
    Ok((fused, chosen))
}

/// Fuses candidate render sets view by view according to `cfg`. Empty
/// weights mean a uniform blend.
pub fn fuse(candidates: &[Vec<Image>], cfg: &FusionConfig, references: Option<&[Image]>) -> Result<Vec<Image>> {
    match cfg.mode {
        FusionMode::MetricSelect => metric_select(candidates, references).map(|(f, _)| f),
        FusionMode::PixelWeighted => {
            let n = candidates.len();
            let views = candidates.first().map_or(0, Vec::len);
            if candidates.iter().any(|c| c.len() != views) {
                return Err(Error::InvalidArgument("candidates have different view counts".into()));
            }
            let w = if cfg.weights.is_empty() { vec![1.0; n] } else { cfg.weights.clone() };
            let w = FusionWeights::Global(w);
            (0..views)
                .map(|v| {
                    let set: Vec<Image> = candidates.iter().map(|c| c[v].clone()).collect();
                    pixel_weighted(&set, &w)
                })
                .collect()
        }
    }
}
