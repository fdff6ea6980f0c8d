use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Exponential learning-rate decay from `initial` to `last` over `steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub last: f64,
    pub steps: usize,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        Self {
            initial: lr,
            last: lr,
            steps: 1,
        }
    }

    pub fn at(&self, step: usize) -> f64 {
        if self.initial == 0.0 || self.last == self.initial {
            return self.initial;
        }
        let frac = (step as f64 / self.steps.max(1) as f64).min(1.0);
        self.initial * (self.last / self.initial).powf(frac)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators, shaped like the parameters they track.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
    pub step: u64,
    pub schedule: LrSchedule,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(params: &ParamStore<T>, schedule: LrSchedule) -> Self {
        let zeros: Vec<_> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        Self {
            first: zeros.clone(),
            second: zeros,
            step: 0,
            schedule,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepOutcome {
    Applied { lr: f64 },
    /// A gradient held NaN or infinity; parameters and moments untouched.
    Skipped,
}

/// One bias-corrected adaptive-moment update:
///
/// ```text
/// m <- b1 m + (1 - b1) g
/// v <- b2 v + (1 - b2) g^2
/// p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
/// ```
///
/// `t` is the step count after incrementing and `lr` is the schedule value at
/// the step count before incrementing.
pub fn adam_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &[Tensor<T>],
    state: &mut OptimizerState<T>,
    cfg: &AdamConfig,
) -> Result<StepOutcome> {
    if grads.len() != params.len() || state.first.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "{} gradients / {} moments for {} parameters",
            grads.len(),
            state.first.len(),
            params.len()
        )));
    }
    for (g, p) in grads.iter().zip(params.tensors()) {
        if g.shape() != p.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: p.shape(),
                rhs: g.shape(),
            });
        }
    }
    if grads.iter().any(|g| !g.is_finite()) {
        log::warn!("skipping optimizer step {}: non-finite gradient", state.step);
        return Ok(StepOutcome::Skipped);
    }

    let lr = state.schedule.at(state.step as usize);
    state.step += 1;
    let t = state.step as i32;
    let b1 = cfg.beta1;
    let b2 = cfg.beta2;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (tb1, tb2) = (T::from_f64_lossy(b1), T::from_f64_lossy(b2));
    let (one_m_b1, one_m_b2) = (T::from_f64_lossy(1.0 - b1), T::from_f64_lossy(1.0 - b2));
    let (tc1, tc2) = (T::from_f64_lossy(c1), T::from_f64_lossy(c2));
    let (tlr, teps) = (T::from_f64_lossy(lr), T::from_f64_lossy(cfg.eps));

    for (i, p) in params.tensors_mut().iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for (k, w) in p.data_mut().iter_mut().enumerate() {
            m[k] = tb1 * m[k] + one_m_b1 * g[k];
            v[k] = tb2 * v[k] + one_m_b2 * g[k] * g[k];
            let m_hat = m[k] / tc1;
            let v_hat = v[k] / tc2;
            *w = *w - tlr * m_hat / (v_hat.sqrt() + teps);
        }
    }
    Ok(StepOutcome::Applied { lr })
}
