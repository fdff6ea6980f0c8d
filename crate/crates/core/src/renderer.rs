//! Ray sampling and volumetric compositing.
//!
//! For sorted samples `t_1 < ... < t_N` on a ray with far bound `t_far`:
//!
//! ```text
//! delta_k = t_{k+1} - t_k,  delta_N = t_far - t_N
//! T_k     = exp(-sum_{j<k} sigma_j delta_j)
//! w_k     = T_k (1 - exp(-sigma_k delta_k))
//! C       = sum_k w_k c_k + (1 - sum_k w_k) background
//! depth   = sum_k w_k t_k
//! F       = sum_k w_k f_k
//! ```
//!
//! Depth is not renormalised, so an empty ray has depth 0. Compositing runs
//! on the autodiff graph; sample positions and encodings are constants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Real, Reduce, Tensor, Var};
use crate::encoding::FrequencyMask;
use crate::error::{Error, Result};
use crate::field::RadianceField;
use crate::geometry::Vec3;
use crate::scene::{Camera, Ray};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    #[serde(default = "default_samples")]
    pub n_coarse: usize,
    #[serde(default = "default_samples")]
    pub n_fine: usize,
    #[serde(default = "default_true")]
    pub jitter: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_samples() -> usize {
    32
}
fn default_true() -> bool {
    true
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n_coarse: 32,
            n_fine: 32,
            jitter: true,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_coarse == 0 {
            return Err(Error::Config("sampling.n_coarse must be at least 1".into()));
        }
        Ok(())
    }

    /// Deterministic samples for evaluation renders.
    pub fn without_jitter(&self) -> Self {
        Self { jitter: false, ..*self }
    }
}

/// Seed for the ray through `pixel` of `view` at training `step`.
pub fn ray_seed(seed: u64, view: usize, pixel: (usize, usize), step: usize) -> u64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for v in [view as u64, pixel.0 as u64, pixel.1 as u64, step as u64] {
        h = splitmix(h ^ v);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One sample per equal stratum of `[t_near, t_far]`, ascending. Without
/// jitter the samples are the stratum midpoints.
pub fn sample_stratified(t_near: f64, t_far: f64, n: usize, jitter: bool, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if !(t_near < t_far) {
        return Err(Error::InvalidArgument(format!("need t_near < t_far, got {t_near} {t_far}")));
    }
    let width = (t_far - t_near) / n as f64;
    Ok((0..n)
        .map(|i| {
            let u = if jitter { rng.random::<f64>() } else { 0.5 };
            t_near + (i as f64 + u) * width
        })
        .collect())
}

/// Draws `n` samples by inverse CDF over the piecewise-constant histogram
/// whose bin `k` spans `[t_k, t_{k+1}]` (the last bin ends at `t_far`) with
/// mass `weights[k]`. All-zero weights fall back to a uniform histogram.
/// Without jitter the CDF is read at evenly spaced levels instead of random
/// ones. The result is the sorted union of `coarse` and the new samples.
pub fn sample_hierarchical(
    coarse: &[f64],
    weights: &[f64],
    t_far: f64,
    n: usize,
    jitter: bool,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    if coarse.len() != weights.len() || coarse.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} coarse samples with {} weights",
            coarse.len(),
            weights.len()
        )));
    }
    check_sorted(coarse, t_far)?;
    let fine = if jitter {
        inverse_cdf(coarse, weights, t_far, n, rng)
    } else {
        let u: Vec<f64> = (0..n).map(|k| (k as f64 + 0.5) / n as f64).collect();
        inverse_cdf_at(coarse, weights, t_far, &u)
    };
    let mut all = Vec::with_capacity(coarse.len() + n);
    all.extend_from_slice(coarse);
    all.extend(fine);
    all.sort_by(f64::total_cmp);
    Ok(all)
}

/// The `n` new samples of [`sample_hierarchical`] at random levels, sorted.
pub fn inverse_cdf(coarse: &[f64], weights: &[f64], t_far: f64, n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let u: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    inverse_cdf_at(coarse, weights, t_far, &u)
}

/// Inverts the sample histogram's CDF at each level in `u` (values in
/// `[0, 1)`), sorted.
pub fn inverse_cdf_at(coarse: &[f64], weights: &[f64], t_far: f64, u: &[f64]) -> Vec<f64> {
    let clean: Vec<f64> = weights.iter().map(|&w| if w.is_finite() { w.max(0.0) } else { 0.0 }).collect();
    let total: f64 = clean.iter().sum();
    let mass: Vec<f64> = if total > 0.0 {
        clean.iter().map(|w| w / total).collect()
    } else {
        vec![1.0 / coarse.len() as f64; coarse.len()]
    };
    let mut cdf = Vec::with_capacity(mass.len() + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for m in &mass {
        acc += m;
        cdf.push(acc);
    }
    let last = cdf.len() - 1;
    cdf[last] = 1.0;
    let edge = |k: usize| if k < coarse.len() { coarse[k] } else { t_far };
    let mut out: Vec<f64> = u
        .iter()
        .map(|&u| {
            // First bin whose upper cdf exceeds u, skipping empty bins.
            let mut k = cdf.partition_point(|&c| c <= u).clamp(1, mass.len()) - 1;
            while mass[k] == 0.0 && k + 1 < mass.len() {
                k += 1;
            }
            let frac = if mass[k] > 0.0 { ((u - cdf[k]) / mass[k]).clamp(0.0, 1.0) } else { 0.5 };
            edge(k) + frac * (edge(k + 1) - edge(k))
        })
        .collect();
    out.sort_by(f64::total_cmp);
    out
}

fn check_sorted(t: &[f64], t_far: f64) -> Result<()> {
    if t.windows(2).any(|w| !(w[0] <= w[1])) || t.last().is_some_and(|&l| !(l <= t_far)) {
        return Err(Error::UnsortedSamples);
    }
    Ok(())
}

fn deltas(t: &[f64], t_far: f64) -> Vec<f64> {
    let n = t.len();
    (0..n).map(|k| if k + 1 < n { t[k + 1] - t[k] } else { t_far - t[k] }).collect()
}

/// Constant matrices shared by every pass with `n` samples per ray.
struct CompositeConsts<T> {
    /// `U[j, k] = 1` for `j < k`: right-multiplying gives exclusive cumsums.
    upper: Tensor<T>,
}

impl<T: Real> CompositeConsts<T> {
    fn new(n: usize) -> Self {
        Self {
            upper: Tensor::from_fn(n, n, |j, k| if j < k { T::one() } else { T::zero() }),
        }
    }
}

/// `E[k, k * c + i] = 1`: expands per-sample weights to `c` channels.
fn expand_matrix<T: Real>(n: usize, c: usize) -> Tensor<T> {
    Tensor::from_fn(n, n * c, |k, j| if j / c == k { T::one() } else { T::zero() })
}

/// `S[k * c + i, i] = 1`: sums sample-major channels back to `c`.
fn select_matrix<T: Real>(n: usize, c: usize) -> Tensor<T> {
    Tensor::from_fn(n * c, c, |j, i| if j % c == i { T::one() } else { T::zero() })
}

/// Graph handles for one compositing pass over `r` rays with `n` samples.
#[derive(Clone, Debug)]
pub struct PassVars {
    /// `r x 3`
    pub colour: Var,
    /// `r x 1`, not renormalised.
    pub depth: Var,
    /// `r x 1`, the sum of weights.
    pub opacity: Var,
    /// `r x d`, or `None` when the field has no feature head.
    pub feature: Option<Var>,
    /// `r x n`, near to far.
    pub sigma: Var,
    /// `r x n`
    pub weights: Var,
    /// `r x n` transmittance before each sample.
    pub transmittance: Var,
    /// Sample distances, `r` rows of `n`.
    pub t: Vec<Vec<f64>>,
}

/// Composites per-sample field outputs already on the graph.
///
/// `sigma` is `(r n) x 1`, `rgb` is `(r n) x 3`, `feature` is `(r n) x d`,
/// all ray-major.
#[allow(clippy::too_many_arguments)]
pub fn composite_vars<T: Real>(
    g: &mut Graph<T>,
    t: &[Vec<f64>],
    t_far: &[f64],
    sigma: Var,
    rgb: Var,
    feature: Option<Var>,
    background: [f32; 3],
) -> Result<PassVars> {
    let r = t.len();
    let n = t.first().map_or(0, Vec::len);
    if r == 0 || n == 0 || t.iter().any(|row| row.len() != n) || t_far.len() != r {
        return Err(Error::InvalidArgument("composite needs a non-empty rectangular sample grid".into()));
    }
    for (row, &far) in t.iter().zip(t_far) {
        check_sorted(row, far)?;
    }
    let consts = CompositeConsts::<T>::new(n);
    let delta = Tensor::from_fn(r, n, {
        let d: Vec<Vec<f64>> = t.iter().zip(t_far).map(|(row, &far)| deltas(row, far)).collect();
        move |i, k| T::from_f64_lossy(d[i][k])
    });
    let tt = Tensor::from_fn(r, n, |i, k| T::from_f64_lossy(t[i][k]));

    let sigma = g.reshape(sigma, r, n)?;
    let delta = g.constant(delta);
    let sd = g.mul(sigma, delta)?;
    let upper = g.constant(consts.upper);
    let cum = g.matmul(sd, upper)?;
    let neg_cum = g.scale(cum, -T::one())?;
    let transmittance = g.exp(neg_cum)?;
    let neg_sd = g.scale(sd, -T::one())?;
    let keep = g.exp(neg_sd)?;
    let alpha = g.scale(keep, -T::one())?;
    let alpha = g.offset(alpha, T::one())?;
    let weights = g.mul(transmittance, alpha)?;
    let opacity = g.sum(weights, Reduce::Cols)?;

    let colour = weighted_sum(g, weights, rgb, r, n, 3)?;
    let empty = g.scale(opacity, -T::one())?;
    let empty = g.offset(empty, T::one())?;
    let bg = g.constant(Tensor::row(background.iter().map(|&c| T::from_f64_lossy(c as f64)).collect()));
    let fill = g.mul(empty, bg)?;
    let colour = g.add(colour, fill)?;

    let tv = g.constant(tt);
    let wt = g.mul(weights, tv)?;
    let depth = g.sum(wt, Reduce::Cols)?;

    let feature = match feature {
        Some(f) => {
            let d = g.shape(f)[1];
            Some(weighted_sum(g, weights, f, r, n, d)?)
        }
        None => None,
    };
    Ok(PassVars {
        colour,
        depth,
        opacity,
        feature,
        sigma,
        weights,
        transmittance,
        t: t.to_vec(),
    })
}

/// `sum_k w[i, k] x[i n + k, :]` for every ray `i`.
fn weighted_sum<T: Real>(g: &mut Graph<T>, weights: Var, x: Var, r: usize, n: usize, c: usize) -> Result<Var> {
    let x = g.reshape(x, r, n * c)?;
    let w = if c == 1 {
        weights
    } else {
        let e = g.constant(expand_matrix(n, c));
        g.matmul(weights, e)?
    };
    let wx = g.mul(w, x)?;
    let s = g.constant(select_matrix(n, c));
    g.matmul(wx, s)
}

/// Numeric result for one ray and one pass.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub colour: [f64; 3],
    pub depth: f64,
    pub feature: Vec<f64>,
    pub weights: Vec<f64>,
    /// Transmittance before each sample.
    pub transmittance: Vec<f64>,
    /// Transmittance after the last sample.
    pub final_transmittance: f64,
    pub opacity: f64,
    pub t: Vec<f64>,
}

impl RenderOutput {
    /// Depth divided by opacity; `None` for empty rays.
    pub fn renormalized_depth(&self) -> Option<f64> {
        (self.opacity > 0.0).then(|| self.depth / self.opacity)
    }
}

/// Composites a single ray from per-sample values.
pub fn composite(
    t: &[f64],
    t_far: f64,
    sigma: &[f64],
    rgb: &[[f64; 3]],
    feature: &[Vec<f64>],
    background: [f32; 3],
) -> Result<RenderOutput> {
    let n = t.len();
    if sigma.len() != n || rgb.len() != n || !(feature.is_empty() || feature.len() == n) {
        return Err(Error::InvalidArgument("per-sample arrays differ in length".into()));
    }
    let mut g = Graph::<f64>::new();
    let s = g.constant(Tensor::column(sigma.to_vec()));
    let c = g.constant(Tensor::new(n, 3, rgb.iter().flatten().copied().collect())?);
    let f = if feature.is_empty() {
        None
    } else {
        let d = feature[0].len();
        Some(g.constant(Tensor::new(n, d, feature.iter().flatten().copied().collect())?))
    };
    let pass = composite_vars(&mut g, &[t.to_vec()], &[t_far], s, c, f, background)?;
    Ok(extract(&g, &pass).remove(0))
}

fn extract<T: Real>(g: &Graph<T>, p: &PassVars) -> Vec<RenderOutput> {
    let row = |v: Var, i: usize| -> Vec<f64> { g.value(v).row_slice(i).iter().map(|x| x.as_f64()).collect() };
    (0..p.t.len())
        .map(|i| {
            let colour = row(p.colour, i);
            let weights = row(p.weights, i);
            let transmittance = row(p.transmittance, i);
            let n = weights.len();
            let alpha_last = if transmittance[n - 1] > 0.0 { weights[n - 1] / transmittance[n - 1] } else { 1.0 };
            RenderOutput {
                colour: [colour[0], colour[1], colour[2]],
                depth: g.value(p.depth).get(i, 0).as_f64(),
                feature: p.feature.map(|f| row(f, i)).unwrap_or_default(),
                final_transmittance: transmittance[n - 1] * (1.0 - alpha_last),
                transmittance,
                weights,
                opacity: g.value(p.opacity).get(i, 0).as_f64(),
                t: p.t[i].clone(),
            }
        })
        .collect()
}

/// Graph handles for a batch of rays through the coarse and fine fields.
#[derive(Clone, Debug)]
pub struct BatchRender {
    pub coarse: PassVars,
    pub fine: Option<PassVars>,
}

impl BatchRender {
    /// The pass whose colour is the final prediction.
    pub fn last(&self) -> &PassVars {
        self.fine.as_ref().unwrap_or(&self.coarse)
    }
}

/// Renders `rays` on `g`: stratified coarse samples, then (when a fine field
/// is given) hierarchical samples drawn from the detached coarse weights.
#[allow(clippy::too_many_arguments)]
pub fn render_batch<T: Real, F: RadianceField<T> + ?Sized>(
    g: &mut Graph<T>,
    coarse: &F,
    fine: Option<&F>,
    rays: &[Ray],
    cfg: &SamplingConfig,
    background: [f32; 3],
    mask: Option<&FrequencyMask>,
    step: usize,
) -> Result<BatchRender> {
    cfg.validate()?;
    if rays.is_empty() {
        return Err(Error::InvalidArgument("render_batch needs at least one ray".into()));
    }
    let mut rngs: Vec<ChaCha8Rng> = rays
        .iter()
        .map(|r| ChaCha8Rng::seed_from_u64(ray_seed(cfg.seed, r.view, r.pixel, step)))
        .collect();
    let t_far: Vec<f64> = rays.iter().map(|r| r.t_far).collect();
    let tc = rays
        .iter()
        .zip(&mut rngs)
        .map(|(r, rng)| sample_stratified(r.t_near, r.t_far, cfg.n_coarse, cfg.jitter, rng))
        .collect::<Result<Vec<_>>>()?;
    let coarse_pass = run_pass(g, coarse, rays, &tc, &t_far, background, mask)?;

    let fine_pass = match fine {
        Some(field) => {
            let tf = if cfg.n_fine == 0 {
                tc.clone()
            } else {
                let w = g.value(coarse_pass.weights);
                rays.iter()
                    .enumerate()
                    .zip(&mut rngs)
                    .map(|((i, r), rng)| {
                        let wi: Vec<f64> = w.row_slice(i).iter().map(|x| x.as_f64()).collect();
                        sample_hierarchical(&tc[i], &wi, r.t_far, cfg.n_fine, cfg.jitter, rng)
                    })
                    .collect::<Result<Vec<_>>>()?
            };
            Some(run_pass(g, field, rays, &tf, &t_far, background, mask)?)
        }
        None => None,
    };
    Ok(BatchRender {
        coarse: coarse_pass,
        fine: fine_pass,
    })
}

fn run_pass<T: Real, F: RadianceField<T> + ?Sized>(
    g: &mut Graph<T>,
    field: &F,
    rays: &[Ray],
    t: &[Vec<f64>],
    t_far: &[f64],
    background: [f32; 3],
    mask: Option<&FrequencyMask>,
) -> Result<PassVars> {
    let total: usize = t.iter().map(Vec::len).sum();
    let mut positions: Vec<Vec3> = Vec::with_capacity(total);
    let mut directions: Vec<Vec3> = Vec::with_capacity(total);
    for (ray, ts) in rays.iter().zip(t) {
        for &tk in ts {
            positions.push(ray.at(tk));
            directions.push(ray.direction);
        }
    }
    let out = field.query(g, &positions, &directions, mask)?;
    composite_vars(g, t, t_far, out.sigma, out.rgb, out.feature, background)
}

/// Numeric coarse and fine outputs per ray.
pub fn render_rays<T: Real, F: RadianceField<T> + ?Sized>(
    coarse: &F,
    fine: Option<&F>,
    rays: &[Ray],
    cfg: &SamplingConfig,
    background: [f32; 3],
    mask: Option<&FrequencyMask>,
    step: usize,
) -> Result<Vec<(RenderOutput, Option<RenderOutput>)>> {
    const CHUNK: usize = 512;
    let mut out = Vec::with_capacity(rays.len());
    for chunk in rays.chunks(CHUNK) {
        let mut g = Graph::new();
        let b = render_batch(&mut g, coarse, fine, chunk, cfg, background, mask, step)?;
        let c = extract(&g, &b.coarse);
        let f = b.fine.as_ref().map(|p| extract(&g, p));
        match f {
            Some(f) => out.extend(c.into_iter().zip(f).map(|(c, f)| (c, Some(f)))),
            None => out.extend(c.into_iter().map(|c| (c, None))),
        }
    }
    Ok(out)
}

/// Full-frame render products of one camera.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedView {
    pub image: crate::image::Image,
    pub depth: crate::image::DepthMap,
    pub opacity: Vec<f32>,
}

/// Renders every pixel of `camera` without jitter.
pub fn render_camera<T: Real, F: RadianceField<T> + ?Sized>(
    coarse: &F,
    fine: Option<&F>,
    camera: &Camera,
    view: usize,
    cfg: &SamplingConfig,
    background: [f32; 3],
    mask: Option<&FrequencyMask>,
) -> Result<RenderedView> {
    let pixels = crate::scene::all_pixels(camera.width, camera.height);
    let rays = crate::scene::generate_rays(camera, &pixels, view)?;
    let outs = render_rays(coarse, fine, &rays, &cfg.without_jitter(), background, mask, 0)?;
    let mut image = crate::image::Image::new(camera.width, camera.height);
    let mut depth = crate::image::DepthMap::new(camera.width, camera.height);
    let mut opacity = vec![0.0; camera.width * camera.height];
    for ((r, c), (co, fo)) in pixels.into_iter().zip(outs) {
        let o = fo.unwrap_or(co);
        image.set(r, c, o.colour.map(|v| v.clamp(0.0, 1.0) as f32));
        depth.set(r, c, o.depth as f32);
        opacity[r * camera.width + c] = o.opacity as f32;
    }
    Ok(RenderedView { image, depth, opacity })
}

/// A field defined by closures; used to inject analytic scenes.
pub struct FnField<S, C>
where
    S: Fn(Vec3) -> f64,
    C: Fn(Vec3, Vec3) -> [f64; 3],
{
    pub sigma: S,
    pub rgb: C,
}

impl<T: Real, S, C> RadianceField<T> for FnField<S, C>
where
    S: Fn(Vec3) -> f64,
    C: Fn(Vec3, Vec3) -> [f64; 3],
{
    fn feature_dim(&self) -> usize {
        0
    }

    fn query(
        &self,
        g: &mut Graph<T>,
        positions: &[Vec3],
        directions: &[Vec3],
        _mask: Option<&FrequencyMask>,
    ) -> Result<crate::field::FieldOutput> {
        let n = positions.len();
        let sigma = Tensor::column(positions.iter().map(|&p| T::from_f64_lossy((self.sigma)(p))).collect());
        let rgb = Tensor::new(
            n,
            3,
            positions
                .iter()
                .zip(directions)
                .flat_map(|(&p, &d)| (self.rgb)(p, d))
                .map(T::from_f64_lossy)
                .collect(),
        )?;
        let sigma = g.constant(sigma);
        let rgb = g.constant(rgb);
        Ok(crate::field::FieldOutput {
            sigma,
            rgb,
            feature: None,
            bottleneck: sigma,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(5)
    }

    #[test]
    fn stratified_midpoints() {
        assert_eq!(
            sample_stratified(0.0, 1.0, 4, false, &mut rng()).unwrap(),
            vec![0.125, 0.375, 0.625, 0.875]
        );
        assert_eq!(sample_stratified(2.0, 4.0, 1, false, &mut rng()).unwrap(), vec![3.0]);
        assert!(sample_stratified(1.0, 1.0, 4, false, &mut rng()).is_err());
    }

    #[test]
    fn jittered_samples_stay_in_strata() {
        let a = sample_stratified(1.0, 3.0, 16, true, &mut rng()).unwrap();
        let b = sample_stratified(1.0, 3.0, 16, true, &mut rng()).unwrap();
        assert_eq!(a, b);
        for (i, t) in a.iter().enumerate() {
            let lo = 1.0 + i as f64 * 0.125;
            assert!(*t >= lo && *t < lo + 0.125);
        }
    }

    #[test]
    fn empty_space_is_background() {
        let t = [0.5, 1.0, 1.5];
        let o = composite(&t, 2.0, &[0.0; 3], &[[0.2, 0.3, 0.4]; 3], &[], [1.0, 0.5, 0.25]).unwrap();
        assert_eq!(o.colour, [1.0, 0.5, 0.25]);
        assert_eq!(o.opacity, 0.0);
        assert_eq!(o.depth, 0.0);
    }

    #[test]
    fn half_blend() {
        let o = composite(&[1.0], 2.0, &[2f64.ln()], &[[0.8, 0.4, 0.2]], &[], [0.0; 3]).unwrap();
        assert!((o.weights[0] - 0.5).abs() < 1e-15);
        for (c, want) in o.colour.iter().zip([0.4, 0.2, 0.1]) {
            assert!((c - want).abs() < 1e-15);
        }
    }

    #[test]
    fn opaque_first_sample() {
        let o = composite(
            &[0.0, 1.0, 2.0],
            3.0,
            &[20.0, 5.0, 5.0],
            &[[0.9, 0.1, 0.3], [0.0; 3], [0.0; 3]],
            &[],
            [1.0; 3],
        )
        .unwrap();
        for (c, want) in o.colour.iter().zip([0.9, 0.1, 0.3]) {
            assert!((c - want).abs() < 1e-8);
        }
        assert!(o.transmittance[1] < 1e-8);
    }

    #[test]
    fn unsorted_samples_rejected() {
        let r = composite(&[1.0, 0.5], 2.0, &[1.0; 2], &[[0.0; 3]; 2], &[], [0.0; 3]);
        assert!(matches!(r, Err(Error::UnsortedSamples)));
    }

    #[test]
    fn features_are_composited() {
        let o = composite(&[1.0], 2.0, &[2f64.ln()], &[[0.0; 3]], &[vec![2.0, -4.0]], [0.0; 3]).unwrap();
        assert!((o.feature[0] - 1.0).abs() < 1e-15 && (o.feature[1] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn hierarchical_concentrates_and_falls_back() {
        let coarse: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let mut w = vec![0.0; 8];
        w[3] = 1.0;
        let fine = inverse_cdf(&coarse, &w, 8.0, 64, &mut rng());
        assert!(fine.iter().all(|&t| (3.0..=4.0).contains(&t)));
        let all = sample_hierarchical(&coarse, &w, 8.0, 64, true, &mut rng()).unwrap();
        assert_eq!(all.len(), 72);
        assert!(all.windows(2).all(|p| p[0] <= p[1]));
        let uniform = inverse_cdf(&coarse, &[0.0; 8], 8.0, 4000, &mut rng());
        let first_half = uniform.iter().filter(|&&t| t < 4.0).count();
        assert!((first_half as f64 / 4000.0 - 0.5).abs() < 0.05);
    }
}
