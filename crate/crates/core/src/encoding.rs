//! Sinusoidal positional encoding and the frequency-annealing mask.
//!
//! Layout of `encode(x)` with `L` bands: the identity `x` (3 entries), then
//! for each band `j = 0..L` with frequency `2^j * pi`:
//! `sin(f x0), sin(f x1), sin(f x2), cos(f x0), cos(f x1), cos(f x2)`.
//!
//! The mask has `L + 3` slots: one per identity entry followed by one per
//! band, each band slot scaling all six entries of its band.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};

/// How the partially revealed slots are valued mid-schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskReading {
    /// With `p = t L / T`: slots `i <= p + 3` (1-based) are 1, the next slot
    /// is `frac(p)`, the rest 0.
    #[default]
    Fractional,
    /// Slots `i <= p + 3` are 1, slots in `(p + 3, p + 6]` are `min(p, 1)`,
    /// the rest 0.
    Literal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodingConfig {
    /// Number of frequency bands for positions.
    #[serde(default = "default_bands")]
    pub bands: usize,
    #[serde(default = "default_true")]
    pub include_identity: bool,
    /// Step at which the mask is fully open.
    #[serde(default = "default_anneal")]
    pub anneal_steps: usize,
    /// Bands for view directions; never masked.
    #[serde(default = "default_dir_bands")]
    pub dir_bands: usize,
    #[serde(default)]
    pub mask_reading: MaskReading,
}

fn default_bands() -> usize {
    10
}
fn default_true() -> bool {
    true
}
fn default_anneal() -> usize {
    40_000
}
fn default_dir_bands() -> usize {
    4
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            bands: default_bands(),
            include_identity: true,
            anneal_steps: default_anneal(),
            dir_bands: default_dir_bands(),
            mask_reading: MaskReading::Fractional,
        }
    }
}

impl EncodingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.anneal_steps == 0 {
            return Err(Error::Config("encoding.anneal_steps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn position_dim(&self) -> usize {
        encoded_len(self.bands, self.include_identity)
    }

    pub fn direction_dim(&self) -> usize {
        encoded_len(self.dir_bands, true)
    }
}

pub fn encoded_len(bands: usize, include_identity: bool) -> usize {
    6 * bands + if include_identity { 3 } else { 0 }
}

/// Encodes one point.
pub fn encode(x: [f64; 3], bands: usize, include_identity: bool) -> Vec<f64> {
    let mut out = Vec::with_capacity(encoded_len(bands, include_identity));
    encode_into(x, bands, include_identity, &mut out);
    out
}

fn encode_into(x: [f64; 3], bands: usize, include_identity: bool, out: &mut Vec<f64>) {
    if include_identity {
        out.extend_from_slice(&x);
    }
    let mut freq = std::f64::consts::PI;
    for _ in 0..bands {
        out.extend(x.iter().map(|v| (freq * v).sin()));
        out.extend(x.iter().map(|v| (freq * v).cos()));
        freq *= 2.0;
    }
}

/// Per-slot reveal weights at one training step.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyMask {
    /// `L + 3` values in `[0, 1]`: three identity slots, then one per band.
    pub slots: Vec<f64>,
    pub step: usize,
}

impl FrequencyMask {
    pub fn open(bands: usize) -> Self {
        Self {
            slots: vec![1.0; bands + 3],
            step: 0,
        }
    }

    /// Number of slots equal to exactly 1.
    pub fn fully_on(&self) -> usize {
        self.slots.iter().filter(|&&s| s == 1.0).count()
    }
}

pub fn mask_at(step: usize, cfg: &EncodingConfig) -> FrequencyMask {
    let l = cfg.bands;
    let t_max = cfg.anneal_steps.max(1);
    if step >= t_max {
        return FrequencyMask {
            slots: vec![1.0; l + 3],
            step,
        };
    }
    // p = step * L / T, kept exact as a quotient and remainder.
    let num = step as u128 * l as u128;
    let whole = (num / t_max as u128) as usize;
    let frac = (num % t_max as u128) as f64 / t_max as f64;
    let p = whole as f64 + frac;
    let slots = (1..=l + 3)
        .map(|i| {
            if i <= whole + 3 {
                1.0
            } else {
                match cfg.mask_reading {
                    MaskReading::Fractional if i == whole + 4 => frac,
                    MaskReading::Literal if (i as f64) <= p + 6.0 => p.min(1.0),
                    _ => 0.0,
                }
            }
        })
        .collect();
    FrequencyMask { slots, step }
}

/// Scales an encoded vector by its slot weights.
pub fn apply_mask(encoded: &[f64], mask: &FrequencyMask, include_identity: bool) -> Result<Vec<f64>> {
    let bands = mask.slots.len().saturating_sub(3);
    if encoded.len() != encoded_len(bands, include_identity) {
        return Err(Error::InvalidArgument(format!(
            "mask with {} slots does not fit an encoding of length {}",
            mask.slots.len(),
            encoded.len()
        )));
    }
    let weights = entry_weights(mask, include_identity);
    Ok(encoded.iter().zip(&weights).map(|(v, w)| v * w).collect())
}

fn entry_weights(mask: &FrequencyMask, include_identity: bool) -> Vec<f64> {
    let mut w = Vec::new();
    if include_identity {
        w.extend_from_slice(&mask.slots[..3]);
    }
    for s in &mask.slots[3..] {
        w.extend(std::iter::repeat_n(*s, 6));
    }
    w
}

/// Encodes (and optionally masks) a batch of points as an `n x dim` tensor.
pub fn encode_batch<T: Real>(
    points: &[[f64; 3]],
    bands: usize,
    include_identity: bool,
    mask: Option<&FrequencyMask>,
) -> Tensor<T> {
    let dim = encoded_len(bands, include_identity);
    let weights = mask.map(|m| entry_weights(m, include_identity));
    let mut data = Vec::with_capacity(points.len() * dim);
    let mut scratch = Vec::with_capacity(dim);
    for p in points {
        scratch.clear();
        encode_into(*p, bands, include_identity, &mut scratch);
        match &weights {
            Some(w) => data.extend(scratch.iter().zip(w).map(|(v, w)| T::from_f64_lossy(v * w))),
            None => data.extend(scratch.iter().map(|&v| T::from_f64_lossy(v))),
        }
    }
    Tensor::new(points.len(), dim, data).expect("encoded batch shape")
}
