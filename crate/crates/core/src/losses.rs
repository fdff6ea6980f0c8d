//! Training objectives as graph expressions, and their weighted totals.
//!
//! Every function takes graph handles for the differentiable inputs; priors
//! and targets enter as constants.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, Graph, Real, Reduce, Tensor, Var};
use crate::error::{Error, Result};

/// `sum_r ||c_r - C_r||^2 + ||f_r - C_r||^2` over rays, or its mean over
/// rays when `mean` is set.
pub fn photometric<T: Real>(g: &mut Graph<T>, coarse: Var, fine: Option<Var>, target: Var, mean: bool) -> Result<Var> {
    let mut total = squared_error(g, coarse, target)?;
    if let Some(f) = fine {
        let e = squared_error(g, f, target)?;
        total = g.add(total, e)?;
    }
    if mean {
        let rays = g.shape(coarse)[0];
        total = g.scale(total, T::one() / T::from_usize(rays).expect("ray count"))?;
    }
    Ok(total)
}

fn squared_error<T: Real>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::ShapeMismatch {
            op: "photometric",
            lhs: g.shape(a),
            rhs: g.shape(b),
        });
    }
    let d = g.sub(a, b)?;
    let sq = g.square(d)?;
    g.sum(sq, Reduce::All)
}

/// `(1 / R) sum_r (1 / K) sum_{k <= M} sigma_{r,k}` for near-to-far densities
/// `sigma` of shape `R x K`.
pub fn occlusion<T: Real>(g: &mut Graph<T>, sigma: Var, range: usize) -> Result<Var> {
    let [r, k] = g.shape(sigma);
    if range > k {
        return Err(Error::InvalidArgument(format!("occlusion range {range} exceeds {k} samples")));
    }
    if range == 0 {
        return Ok(g.scalar(T::zero()));
    }
    let head = g.slice(sigma, Axis::Cols, 0, range)?;
    let s = g.sum(head, Reduce::All)?;
    g.scale(s, T::one() / T::from_usize(r * k).expect("sample count"))
}

/// Sum of squared differences between vertical and horizontal neighbours of
/// an `H x W` depth patch. With `valid` (row-major, `H * W`), only pairs of
/// valid pixels count.
pub fn depth_tv<T: Real>(g: &mut Graph<T>, depth: Var, valid: Option<&[bool]>) -> Result<Var> {
    let [h, w] = g.shape(depth);
    if let Some(v) = valid {
        if v.len() != h * w {
            return Err(Error::InvalidArgument(format!("{} validity flags for a {h}x{w} patch", v.len())));
        }
    }
    let mut total = g.scalar(T::zero());
    if w > 1 {
        let a = g.slice(depth, Axis::Cols, 1, w - 1)?;
        let b = g.slice(depth, Axis::Cols, 0, w - 1)?;
        let term = masked_square_sum(g, a, b, valid.map(|v| pair_mask(v, h, w, 0, 1)))?;
        total = g.add(total, term)?;
    }
    if h > 1 {
        let a = g.slice(depth, Axis::Rows, 1, h - 1)?;
        let b = g.slice(depth, Axis::Rows, 0, h - 1)?;
        let term = masked_square_sum(g, a, b, valid.map(|v| pair_mask(v, h, w, 1, 0)))?;
        total = g.add(total, term)?;
    }
    Ok(total)
}

fn pair_mask(valid: &[bool], h: usize, w: usize, dr: usize, dc: usize) -> Vec<bool> {
    let mut out = Vec::with_capacity((h - dr) * (w - dc));
    for i in 0..h - dr {
        for j in 0..w - dc {
            out.push(valid[i * w + j] && valid[(i + dr) * w + j + dc]);
        }
    }
    out
}

fn masked_square_sum<T: Real>(g: &mut Graph<T>, a: Var, b: Var, mask: Option<Vec<bool>>) -> Result<Var> {
    let d = g.sub(a, b)?;
    let sq = g.square(d)?;
    let sq = match mask {
        Some(m) => {
            let [r, c] = g.shape(sq);
            let mv = g.constant(Tensor::new(r, c, m.into_iter().map(|x| if x { T::one() } else { T::zero() }).collect())?);
            g.mul(sq, mv)?
        }
        None => sq,
    };
    g.sum(sq, Reduce::All)
}

/// Matrix with `+1` at `(p, i)` and `-1` at `(p, j)` for each pair `p`.
fn difference_matrix<T: Real>(pairs: &[(usize, usize)], n: usize) -> Result<Tensor<T>> {
    let mut m = Tensor::zeros(pairs.len(), n);
    for (p, &(i, j)) in pairs.iter().enumerate() {
        if i >= n || j >= n {
            return Err(Error::InvalidArgument(format!("pair ({i}, {j}) outside {n} rays")));
        }
        m.data_mut()[p * n + i] = m.data()[p * n + i] + T::one();
        m.data_mut()[p * n + j] = m.data()[p * n + j] - T::one();
    }
    Ok(m)
}

/// `sum_{(i, j)} max(d_i - d_j + margin, 0)` over pairs already ordered so
/// that the prior has `d_i <= d_j`. `rendered` is `n x 1`.
pub fn depth_rank<T: Real>(g: &mut Graph<T>, rendered: Var, pairs: &[(usize, usize)], margin: f64) -> Result<Var> {
    if pairs.is_empty() {
        return Ok(g.scalar(T::zero()));
    }
    let n = g.shape(rendered)[0];
    let dm = g.constant(difference_matrix(pairs, n)?);
    let diff = g.matmul(dm, rendered)?;
    let shifted = g.offset(diff, T::from_f64_lossy(margin))?;
    let hinge = g.relu(shifted)?;
    g.sum(hinge, Reduce::All)
}

/// `sum_{(i, j)} max(|d_i - d_j| - threshold, 0)` over directed neighbour
/// pairs. An infinite threshold gives a constant zero.
pub fn depth_continuity<T: Real>(
    g: &mut Graph<T>,
    rendered: Var,
    pairs: &[(usize, usize)],
    threshold: f64,
) -> Result<Var> {
    if pairs.is_empty() || threshold == f64::INFINITY {
        return Ok(g.scalar(T::zero()));
    }
    let n = g.shape(rendered)[0];
    let dm = g.constant(difference_matrix(pairs, n)?);
    let diff = g.matmul(dm, rendered)?;
    let mag = g.abs(diff)?;
    let shifted = g.offset(mag, T::from_f64_lossy(-threshold))?;
    let hinge = g.relu(shifted)?;
    g.sum(hinge, Reduce::All)
}

/// Mean over rays of `||F_r - F^gt_r||_2`.
pub fn feature<T: Real>(g: &mut Graph<T>, rendered: Var, target: Var) -> Result<Var> {
    if g.shape(rendered) != g.shape(target) {
        return Err(Error::ShapeMismatch {
            op: "feature",
            lhs: g.shape(rendered),
            rhs: g.shape(target),
        });
    }
    let d = g.sub(rendered, target)?;
    let sq = g.square(d)?;
    let per_ray = g.sum(sq, Reduce::Cols)?;
    let norm = g.sqrt(per_ray)?;
    g.mean(norm, Reduce::All)
}

/// Random pixel pairs for the ranking loss, ordered so the prior depth of the
/// first index is not larger than the second. Only pixels flagged in `valid`
/// are used.
pub fn rank_pairs(prior: &[f64], valid: &[bool], count: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let idx: Vec<usize> = (0..prior.len()).filter(|&i| valid[i]).collect();
    if idx.len() < 2 {
        return Vec::new();
    }
    (0..count)
        .filter_map(|_| {
            let a = idx[rng.random_range(0..idx.len())];
            let b = idx[rng.random_range(0..idx.len())];
            match prior[a].total_cmp(&prior[b]) {
                _ if a == b => None,
                std::cmp::Ordering::Greater => Some((b, a)),
                _ => Some((a, b)),
            }
        })
        .collect()
}

/// For every valid pixel of an `h x w` patch, directed pairs to its `k`
/// nearest valid neighbours in prior-depth value within a `window x window`
/// spatial window. Ties break toward the lower index.
pub fn knn_pairs(prior: &[f64], valid: &[bool], h: usize, w: usize, k: usize, window: usize) -> Vec<(usize, usize)> {
    let lo = window / 2;
    let hi = window - lo;
    let mut pairs = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if !valid[i] {
                continue;
            }
            let mut cand: Vec<(f64, usize)> = Vec::new();
            for rr in r.saturating_sub(lo)..(r + hi).min(h) {
                for cc in c.saturating_sub(lo)..(c + hi).min(w) {
                    let j = rr * w + cc;
                    if j != i && valid[j] {
                        cand.push(((prior[i] - prior[j]).abs(), j));
                    }
                }
            }
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            pairs.extend(cand.into_iter().take(k).map(|(_, j)| (i, j)));
        }
    }
    pairs
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Hash, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Baseline,
    FreqOcc,
    Esnerf,
    FeatureCond,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::FreqOcc => "freq_occ",
            Method::Esnerf => "esnerf",
            Method::FeatureCond => "feature_cond",
        }
    }

    /// Whether the frequency mask is annealed.
    pub fn uses_frequency_mask(self) -> bool {
        !matches!(self, Method::Baseline)
    }

    pub fn uses_depth(self) -> bool {
        matches!(self, Method::Esnerf)
    }

    pub fn uses_features(self) -> bool {
        matches!(self, Method::FeatureCond)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Occlusion weight; `None` picks the method default.
    pub occlusion: Option<f64>,
    /// Regularisation range `M` in sample indices.
    pub occlusion_range: usize,
    pub occlusion_coarse: bool,
    pub occlusion_fine: bool,
    /// Final total-variation weight, reached at `anneal_steps`.
    pub tv: f64,
    pub rank: f64,
    pub continuity: f64,
    /// Feature weight `lambda`.
    pub feature: f64,
    /// Step at which the TV weight stops growing; 0 means the run length.
    pub anneal_steps: usize,
    pub rank_margin: f64,
    pub continuity_threshold: f64,
    pub knn: usize,
    pub knn_window: usize,
    pub rank_pairs: usize,
    /// Divide the photometric sum by the ray count.
    pub mean_photometric: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            occlusion: None,
            occlusion_range: 8,
            occlusion_coarse: true,
            occlusion_fine: true,
            tv: 1.0,
            rank: 0.2,
            continuity: 0.2,
            feature: 0.1,
            anneal_steps: 0,
            rank_margin: 1e-4,
            continuity_threshold: 0.05,
            knn: 4,
            knn_window: 8,
            rank_pairs: 128,
            mean_photometric: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.occlusion.unwrap_or(0.0),
            self.tv,
            self.rank,
            self.continuity,
            self.feature,
            self.rank_margin,
            self.continuity_threshold,
        ];
        if all.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("loss weights, margins and thresholds must be non-negative".into()));
        }
        Ok(())
    }

    pub fn occlusion_for(&self, method: Method) -> f64 {
        self.occlusion.unwrap_or(match method {
            Method::Baseline | Method::FeatureCond => 0.0,
            Method::FreqOcc => 0.01,
            Method::Esnerf => 0.1,
        })
    }

    /// TV weight at `step`, rising linearly from 0 to `tv` at the horizon.
    pub fn tv_at(&self, step: usize, max_step: usize) -> f64 {
        let horizon = if self.anneal_steps == 0 { max_step } else { self.anneal_steps }.max(1);
        self.tv * (step as f64 / horizon as f64).min(1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Photometric,
    Occlusion,
    Tv,
    Rank,
    Continuity,
    Feature,
}

impl Term {
    pub fn name(self) -> &'static str {
        match self {
            Term::Photometric => "photometric",
            Term::Occlusion => "occlusion",
            Term::Tv => "tv",
            Term::Rank => "rank",
            Term::Continuity => "continuity",
            Term::Feature => "feature",
        }
    }
}

/// Per-method weights at `step`; terms absent from the method are omitted.
pub fn resolved_weights(method: Method, w: &LossWeights, step: usize, max_step: usize) -> Vec<(Term, f64)> {
    let mut out = vec![(Term::Photometric, 1.0)];
    let occ = w.occlusion_for(method);
    match method {
        Method::Baseline => {}
        Method::FreqOcc => out.push((Term::Occlusion, occ)),
        Method::Esnerf => out.extend([
            (Term::Tv, w.tv_at(step, max_step)),
            (Term::Rank, w.rank),
            (Term::Continuity, w.continuity),
            (Term::Occlusion, occ),
        ]),
        Method::FeatureCond => {
            if occ > 0.0 {
                out.push((Term::Occlusion, occ));
            }
            out.push((Term::Feature, w.feature));
        }
    }
    out
}

/// Loss terms on the graph, keyed by name.
pub type Terms = BTreeMap<Term, Var>;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TermReport {
    pub term: Term,
    pub weight: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossReport {
    pub step: usize,
    pub terms: Vec<TermReport>,
    pub total: f64,
}

impl LossReport {
    pub fn get(&self, term: Term) -> Option<&TermReport> {
        self.terms.iter().find(|t| t.term == term)
    }

    /// `sum weight * value`, recomputed from the parts.
    pub fn weighted_sum(&self) -> f64 {
        self.terms.iter().map(|t| t.weight * t.value).sum()
    }

    /// CSV rows `step,term,weight,value`.
    pub fn csv_rows(&self) -> String {
        let mut s = String::new();
        for t in &self.terms {
            s.push_str(&format!("{},{},{},{}\n", self.step, t.term.name(), t.weight, t.value));
        }
        s.push_str(&format!("{},total,1,{}\n", self.step, self.total));
        s
    }
}

/// Weighted total of `terms` for `method` at `step`.
pub fn total_loss<T: Real>(
    g: &mut Graph<T>,
    method: Method,
    terms: &Terms,
    weights: &LossWeights,
    step: usize,
    max_step: usize,
) -> Result<(Var, Vec<(Term, f64, Var)>)> {
    let resolved = resolved_weights(method, weights, step, max_step);
    let mut parts = Vec::with_capacity(resolved.len());
    let mut total: Option<Var> = None;
    for (term, weight) in resolved {
        let v = *terms.get(&term).ok_or_else(|| {
            Error::InvalidArgument(format!("method {} needs the {} term", method.name(), term.name()))
        })?;
        let scaled = g.scale(v, T::from_f64_lossy(weight))?;
        total = Some(match total {
            Some(t) => g.add(t, scaled)?,
            None => scaled,
        });
        parts.push((term, weight, v));
    }
    Ok((total.expect("photometric term is always present"), parts))
}

/// Reads term values after the forward pass.
pub fn report<T: Real>(g: &Graph<T>, step: usize, total: Var, parts: &[(Term, f64, Var)]) -> Result<LossReport> {
    Ok(LossReport {
        step,
        terms: parts
            .iter()
            .map(|&(term, weight, v)| {
                Ok(TermReport {
                    term,
                    weight,
                    value: g.item(v)?.as_f64(),
                })
            })
            .collect::<Result<_>>()?,
        total: g.item(total)?.as_f64(),
    })
}
