//! Central finite differences, used as the oracle for analytic gradients.

use super::{Graph, ParamStore, Tensor, Var};
use crate::error::Result;

/// Default step for 64-bit checks.
pub const STEP: f64 = 1e-5;

/// Gradients below this magnitude are compared absolutely.
pub const ERROR_FLOOR: f64 = 1e-4;

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for each coordinate `i` in `coords`.
pub fn central_difference(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    coords: &[usize],
    h: f64,
) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(coords.len());
    for &i in coords {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe)?;
        probe[i] = orig - h;
        let minus = f(&probe)?;
        probe[i] = orig;
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ERROR_FLOOR)
}

/// Largest [`relative_error`] over paired entries.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Compares the analytic gradient of `build` with respect to each input
/// against central differences over every input entry. Returns the largest
/// relative error.
pub fn check_inputs(
    inputs: &[Tensor<f64>],
    build: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    h: f64,
) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let root = build(&mut g, &vars)?;
    let grads = g.backward(root)?;
    let mut analytic = Vec::new();
    for (v, t) in vars.iter().zip(inputs) {
        match grads.wrt(*v) {
            Some(d) => analytic.extend_from_slice(d.data()),
            None => analytic.extend(std::iter::repeat_n(0.0, t.len())),
        }
    }
    let flat: Vec<f64> = inputs.iter().flat_map(|t| t.data().iter().copied()).collect();
    let eval = |x: &[f64]| -> Result<f64> {
        let mut g = Graph::new();
        let mut off = 0;
        let vars: Vec<Var> = inputs
            .iter()
            .map(|t| {
                let part = Tensor::new(t.rows(), t.cols(), x[off..off + t.len()].to_vec())?;
                off += t.len();
                Ok(g.input(part))
            })
            .collect::<Result<_>>()?;
        let root = build(&mut g, &vars)?;
        g.item(root)
    };
    let coords: Vec<usize> = (0..flat.len()).collect();
    let numeric = central_difference(eval, &flat, &coords, h)?;
    Ok(max_relative_error(&analytic, &numeric))
}

/// Compares parameter gradients of `build` against central differences on
/// the flat parameter indices `coords`. Returns the largest relative error.
pub fn check_params(
    store: &ParamStore<f64>,
    coords: &[usize],
    build: impl Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
    h: f64,
) -> Result<f64> {
    let mut g = Graph::new();
    let root = build(&mut g, store)?;
    let grads = g.backward(root)?;
    let flat_grads: Vec<f64> = grads.for_store(store).iter().flat_map(|t| t.data().iter().copied()).collect();
    let analytic: Vec<f64> = coords.iter().map(|&i| flat_grads[i]).collect();
    let mut probe = store.clone();
    let eval = |x: &[f64]| -> Result<f64> {
        for &i in coords {
            probe.set_flat(i, x[i]);
        }
        let mut g = Graph::new();
        let root = build(&mut g, &probe)?;
        g.item(root)
    };
    let numeric = central_difference(eval, &store.to_flat(), coords, h)?;
    Ok(max_relative_error(&analytic, &numeric))
}
