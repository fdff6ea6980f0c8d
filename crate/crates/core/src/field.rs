//! Radiance fields with a shared density bottleneck.
//!
//! A trunk MLP maps the encoded position to a bottleneck `b`. Density is
//! `softplus(M_sigma(b))`, an optional per-point feature is `M_f(b)`, and
//! colour is `sigmoid(M_c(b, f, encode(d)))`. The view direction only enters
//! the colour head, so density and features are view-independent by
//! construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::encoding::{encode_batch, EncodingConfig, FrequencyMask};
use crate::error::{Error, Result};
use crate::geometry::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FieldVariant {
    #[default]
    Plain,
    FeatureConditioned,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    #[serde(default = "default_width")]
    pub width: usize,
    /// Number of trunk layers.
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_width")]
    pub bottleneck: usize,
    #[serde(default = "default_feature")]
    pub feature_dim: usize,
    /// Trunk layer whose input is concatenated with the encoded position.
    #[serde(default = "default_skip")]
    pub skip_layer: usize,
    #[serde(default)]
    pub variant: FieldVariant,
}

fn default_width() -> usize {
    64
}
fn default_depth() -> usize {
    4
}
fn default_feature() -> usize {
    12
}
fn default_skip() -> usize {
    2
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            width: 64,
            depth: 4,
            bottleneck: 64,
            feature_dim: 12,
            skip_layer: 2,
            variant: FieldVariant::Plain,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.depth == 0 || self.bottleneck == 0 {
            return Err(Error::Config("field width, depth and bottleneck must be at least 1".into()));
        }
        if self.variant == FieldVariant::FeatureConditioned && self.feature_dim == 0 {
            return Err(Error::Config("feature-conditioned field needs feature_dim >= 1".into()));
        }
        Ok(())
    }

    /// Feature width produced by this field; 0 for the plain variant.
    pub fn output_feature_dim(&self) -> usize {
        match self.variant {
            FieldVariant::Plain => 0,
            FieldVariant::FeatureConditioned => self.feature_dim,
        }
    }

    fn colour_width(&self) -> usize {
        (self.width / 2).max(1)
    }

    /// Same architecture scaled in width and bottleneck.
    pub fn widened(&self, factor: usize) -> Self {
        Self {
            width: self.width * factor,
            bottleneck: self.bottleneck * factor,
            ..*self
        }
    }
}

/// Affine map applied to world positions before encoding.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub center: Vec3,
    pub scale: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            center: [0.0; 3],
            scale: 1.0,
        }
    }
}

impl Normalization {
    pub fn apply(&self, p: Vec3) -> Vec3 {
        [0, 1, 2].map(|k| (p[k] - self.center[k]) / self.scale)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Dense {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    trunk: Vec<Dense>,
    bottleneck: Dense,
    sigma: Dense,
    feature: Option<Dense>,
    colour_hidden: Dense,
    colour_out: Dense,
}

/// Graph handles for a batch query.
#[derive(Clone, Copy, Debug)]
pub struct FieldOutput {
    /// `n x 1`, non-negative.
    pub sigma: Var,
    /// `n x 3` in `[0, 1]`.
    pub rgb: Var,
    /// `n x feature_dim`; `None` for the plain variant.
    pub feature: Option<Var>,
    pub bottleneck: Var,
}

/// Anything the renderer can query for density, colour and features.
pub trait RadianceField<T: Real> {
    fn feature_dim(&self) -> usize;

    fn query(
        &self,
        g: &mut Graph<T>,
        positions: &[Vec3],
        directions: &[Vec3],
        mask: Option<&FrequencyMask>,
    ) -> Result<FieldOutput>;
}

/// Values of a single point query.
#[derive(Clone, Debug, PartialEq)]
pub struct PointOutput {
    pub sigma: f64,
    pub rgb: [f64; 3],
    pub feature: Vec<f64>,
    pub bottleneck: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Field<T: Real> {
    pub config: FieldConfig,
    pub encoding: EncodingConfig,
    pub normalization: Normalization,
    pub params: ParamStore<T>,
    layout: Layout,
}

fn dense<T: Real>(
    store: &mut ParamStore<T>,
    rng: &mut ChaCha8Rng,
    name: &str,
    fan_in: usize,
    fan_out: usize,
) -> Dense {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let w = Tensor::from_fn(fan_in, fan_out, |_, _| T::from_f64_lossy(rng.random_range(-limit..limit)));
    Dense {
        weight: store.add(format!("{name}.weight"), w),
        bias: store.add(format!("{name}.bias"), Tensor::zeros(1, fan_out)),
    }
}

impl<T: Real> Field<T> {
    /// Glorot-uniform weights and zero biases, declared in a fixed order.
    pub fn new(config: FieldConfig, encoding: EncodingConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        encoding.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let pos_dim = encoding.position_dim();
        let mut trunk = Vec::with_capacity(config.depth);
        for i in 0..config.depth {
            let mut fan_in = if i == 0 { pos_dim } else { config.width };
            if i == config.skip_layer && i > 0 {
                fan_in += pos_dim;
            }
            trunk.push(dense(&mut params, &mut rng, &format!("trunk.{i}"), fan_in, config.width));
        }
        let bottleneck = dense(&mut params, &mut rng, "bottleneck", config.width, config.bottleneck);
        let sigma = dense(&mut params, &mut rng, "sigma", config.bottleneck, 1);
        let feature = (config.variant == FieldVariant::FeatureConditioned)
            .then(|| dense(&mut params, &mut rng, "feature", config.bottleneck, config.feature_dim));
        let colour_in = config.bottleneck + config.output_feature_dim() + encoding.direction_dim();
        let colour_hidden = dense(&mut params, &mut rng, "colour.hidden", colour_in, config.colour_width());
        let colour_out = dense(&mut params, &mut rng, "colour.out", config.colour_width(), 3);
        Ok(Self {
            config,
            encoding,
            normalization: Normalization::default(),
            params,
            layout: Layout {
                trunk,
                bottleneck,
                sigma,
                feature,
                colour_hidden,
                colour_out,
            },
        })
    }

    /// Same field at another precision.
    pub fn cast<U: Real>(&self) -> Field<U> {
        Field {
            config: self.config,
            encoding: self.encoding,
            normalization: self.normalization,
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    pub fn with_normalization(mut self, normalization: Normalization) -> Self {
        self.normalization = normalization;
        self
    }

    /// Id of the final density layer's weight, bias.
    pub fn sigma_layer(&self) -> (ParamId, ParamId) {
        (self.layout.sigma.weight, self.layout.sigma.bias)
    }

    fn linear(&self, g: &mut Graph<T>, x: Var, layer: Dense) -> Result<Var> {
        let w = g.param(&self.params, layer.weight);
        let b = g.param(&self.params, layer.bias);
        let xw = g.matmul(x, w)?;
        g.add(xw, b)
    }

    /// Numeric query of one point.
    pub fn query_point(&self, position: Vec3, direction: Vec3, mask: Option<&FrequencyMask>) -> Result<PointOutput> {
        let mut out = self.batch_query(&[position], &[direction], mask)?;
        Ok(out.remove(0))
    }

    /// Numeric batch query; equal to independent [`Field::query_point`] calls.
    pub fn batch_query(
        &self,
        positions: &[Vec3],
        directions: &[Vec3],
        mask: Option<&FrequencyMask>,
    ) -> Result<Vec<PointOutput>> {
        let mut g = Graph::new();
        let out = self.query(&mut g, positions, directions, mask)?;
        let fetch = |v: Var, i: usize| -> Vec<f64> { g.value(v).row_slice(i).iter().map(|x| x.as_f64()).collect() };
        Ok((0..positions.len())
            .map(|i| {
                let rgb = fetch(out.rgb, i);
                PointOutput {
                    sigma: g.value(out.sigma).get(i, 0).as_f64(),
                    rgb: [rgb[0], rgb[1], rgb[2]],
                    feature: out.feature.map(|f| fetch(f, i)).unwrap_or_default(),
                    bottleneck: fetch(out.bottleneck, i),
                }
            })
            .collect())
    }
}

impl<T: Real> RadianceField<T> for Field<T> {
    fn feature_dim(&self) -> usize {
        self.config.output_feature_dim()
    }

    fn query(
        &self,
        g: &mut Graph<T>,
        positions: &[Vec3],
        directions: &[Vec3],
        mask: Option<&FrequencyMask>,
    ) -> Result<FieldOutput> {
        if positions.len() != directions.len() {
            return Err(Error::InvalidArgument(format!(
                "{} positions but {} directions",
                positions.len(),
                directions.len()
            )));
        }
        let normalized: Vec<Vec3> = positions.iter().map(|&p| self.normalization.apply(p)).collect();
        let enc_pos = g.constant(encode_batch(
            &normalized,
            self.encoding.bands,
            self.encoding.include_identity,
            mask,
        ));
        let enc_dir = g.constant(encode_batch(directions, self.encoding.dir_bands, true, None));

        let mut h = enc_pos;
        for (i, layer) in self.layout.trunk.iter().enumerate() {
            if i == self.config.skip_layer && i > 0 {
                h = g.concat(&[h, enc_pos], Axis::Cols)?;
            }
            let z = self.linear(g, h, *layer)?;
            h = g.relu(z)?;
        }
        let bottleneck = self.linear(g, h, self.layout.bottleneck)?;
        let raw_sigma = self.linear(g, bottleneck, self.layout.sigma)?;
        let sigma = g.softplus(raw_sigma)?;
        let feature = match self.layout.feature {
            Some(layer) => Some(self.linear(g, bottleneck, layer)?),
            None => None,
        };
        let mut colour_in = vec![bottleneck];
        colour_in.extend(feature);
        colour_in.push(enc_dir);
        let ci = g.concat(&colour_in, Axis::Cols)?;
        let hc = self.linear(g, ci, self.layout.colour_hidden)?;
        let hc = g.relu(hc)?;
        let raw_rgb = self.linear(g, hc, self.layout.colour_out)?;
        let rgb = g.sigmoid(raw_rgb)?;
        Ok(FieldOutput {
            sigma,
            rgb,
            feature,
            bottleneck,
        })
    }
}
