//! Python bindings: scenes, training, rendering, metrics and fusion.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use sparse_nerf::encoding::{mask_at as core_mask_at, EncodingConfig};
use sparse_nerf::image::{Image, Mask};
use sparse_nerf::metrics::{self, Frame, SsimMode};
use sparse_nerf::pipelines::{self, FusionWeights, TrainConfig, TrainedModel};
use sparse_nerf::scene::{self as core_scene, SyntheticSceneSpec};

fn py_err(e: sparse_nerf::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn frame(data: Vec<f64>, width: usize, height: usize) -> PyResult<Frame> {
    Frame::new(width, height, data).map_err(py_err)
}

fn image(data: &[f64], width: usize, height: usize) -> PyResult<Image> {
    if data.len() != width * height * 3 {
        return Err(PyValueError::new_err(format!("{} values for a {width}x{height} RGB image", data.len())));
    }
    let mut img = Image::new(width, height);
    for (dst, &src) in img.data.iter_mut().zip(data) {
        *dst = src as f32;
    }
    Ok(img)
}

fn mask(data: Vec<bool>, width: usize, height: usize) -> PyResult<Mask> {
    if data.len() != width * height {
        return Err(PyValueError::new_err(format!("{} values for a {width}x{height} mask", data.len())));
    }
    Ok(Mask { width, height, data })
}

fn ssim_mode(name: &str) -> PyResult<SsimMode> {
    match name {
        "luma" => Ok(SsimMode::Luma),
        "channel_mean" => Ok(SsimMode::ChannelMean),
        other => Err(PyValueError::new_err(format!("unknown SSIM mode {other:?}"))),
    }
}

/// A scene on disk: input views with cameras, plus held-out targets.
#[pyclass(name = "Scene", skip_from_py_object)]
#[derive(Clone)]
struct PyScene {
    inner: core_scene::Scene,
}

#[pymethods]
impl PyScene {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: core_scene::load_scene(&path).map_err(py_err)?,
        })
    }

    /// Renders a synthetic scene analytically. `spec_json` defaults to the
    /// sphere-and-box layout.
    #[staticmethod]
    #[pyo3(signature = (seed, spec_json=None))]
    fn synthetic(seed: u64, spec_json: Option<&str>) -> PyResult<Self> {
        let spec = match spec_json {
            Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))?,
            None => SyntheticSceneSpec::sphere_and_box(),
        };
        let syn = core_scene::synthesize_scene(&spec, seed).map_err(py_err)?;
        Ok(Self {
            inner: syn.scene_with_depths(),
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        core_scene::save_scene(&self.inner, &path).map_err(py_err)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn input_names(&self) -> Vec<String> {
        self.inner.input_views.iter().map(|v| v.name.clone()).collect()
    }

    #[getter]
    fn target_names(&self) -> Vec<String> {
        self.inner.targets.iter().map(|t| t.name.clone()).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Scene(name={:?}, inputs={}, targets={})",
            self.inner.name,
            self.inner.input_views.len(),
            self.inner.targets.len()
        )
    }
}

/// A trained coarse (and optional fine) field.
#[pyclass(name = "Model")]
struct PyModel {
    inner: TrainedModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: TrainedModel::load(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(py_err)
    }

    #[getter]
    fn method(&self) -> String {
        self.inner.method.name().to_string()
    }

    /// Renders every target view of `scene`. Returns `(name, width, height,
    /// rgb)` tuples with `rgb` row-major and interleaved in `[0, 1]`.
    #[pyo3(signature = (scene, upsample=1))]
    fn render_targets(&self, scene: &PyScene, upsample: usize) -> PyResult<Vec<(String, usize, usize, Vec<f64>)>> {
        let cams = scene.inner.target_cameras();
        let renders = pipelines::render_views(&self.inner, &cams, upsample).map_err(py_err)?;
        Ok(scene
            .inner
            .targets
            .iter()
            .zip(renders)
            .map(|(t, r)| {
                let data = r.image.data.iter().map(|&v| v as f64).collect();
                (t.name.clone(), r.image.width, r.image.height, data)
            })
            .collect())
    }

    /// Per-view `(view, psnr, psnr_m, ssim_m)` on the scene's held-out targets.
    #[pyo3(signature = (scene, upsample=1))]
    fn score(&self, scene: &PyScene, upsample: usize) -> PyResult<Vec<(String, f64, f64, f64)>> {
        let report = pipelines::score_targets(&self.inner, &scene.inner, upsample).map_err(py_err)?;
        Ok(report.views.into_iter().map(|v| (v.view, v.psnr, v.psnr_m, v.ssim_m)).collect())
    }
}

/// Default training configuration as JSON, optionally for a given method.
#[pyfunction]
#[pyo3(signature = (method=None))]
fn default_config(method: Option<&str>) -> PyResult<String> {
    let mut cfg = TrainConfig::default();
    if let Some(m) = method {
        cfg.method =
            serde_json::from_value(serde_json::Value::String(m.into())).map_err(|e| PyValueError::new_err(e.to_string()))?;
    }
    serde_json::to_string_pretty(&cfg).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Trains on `scene`. `config_json` is merged onto the defaults; unknown
/// keys are rejected.
#[pyfunction]
#[pyo3(signature = (scene, config_json=None))]
fn train(py: Python<'_>, scene: &PyScene, config_json: Option<&str>) -> PyResult<(PyModel, String)> {
    let cfg: TrainConfig = match config_json {
        Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => TrainConfig::default(),
    };
    let scene = scene.inner.clone();
    let out = py.detach(move || pipelines::train(&scene, &cfg)).map_err(py_err)?;
    Ok((PyModel { inner: out.model }, out.log.to_csv()))
}

#[pyfunction]
fn psnr(pred: Vec<f64>, gt: Vec<f64>, width: usize, height: usize) -> PyResult<f64> {
    metrics::psnr(&frame(pred, width, height)?, &frame(gt, width, height)?).map_err(py_err)
}

#[pyfunction]
fn masked_psnr(pred: Vec<f64>, gt: Vec<f64>, object_mask: Vec<bool>, width: usize, height: usize) -> PyResult<f64> {
    metrics::masked_psnr(
        &frame(pred, width, height)?,
        &frame(gt, width, height)?,
        &mask(object_mask, width, height)?,
    )
    .map_err(py_err)
}

/// SSIM inside the tight bounding box of `object_mask` (the whole frame
/// when omitted).
#[pyfunction]
#[pyo3(signature = (pred, gt, width, height, object_mask=None, mode="luma"))]
fn masked_ssim(
    pred: Vec<f64>,
    gt: Vec<f64>,
    width: usize,
    height: usize,
    object_mask: Option<Vec<bool>>,
    mode: &str,
) -> PyResult<f64> {
    let m = match object_mask {
        Some(m) => mask(m, width, height)?,
        None => Mask::full(width, height),
    };
    let b = metrics::mask_bbox(&m).map_err(py_err)?;
    metrics::ssim_box(&frame(pred, width, height)?, &frame(gt, width, height)?, &b, ssim_mode(mode)?).map_err(py_err)
}

/// Scores a directory of predictions against ground-truth scenes and
/// returns the metrics CSV.
#[pyfunction]
#[pyo3(signature = (pred_dir, gt_dir, mode="luma"))]
fn evaluate(pred_dir: PathBuf, gt_dir: PathBuf, mode: &str) -> PyResult<String> {
    let report = metrics::evaluate_submission(&pred_dir, &gt_dir, ssim_mode(mode)?, None).map_err(py_err)?;
    Ok(report.to_csv())
}

/// Frequency-mask slots at `step`: three identity slots, then one per band.
#[pyfunction]
fn mask_at(step: usize, bands: usize, anneal_steps: usize) -> Vec<f64> {
    let cfg = EncodingConfig {
        bands,
        anneal_steps,
        ..EncodingConfig::default()
    };
    core_mask_at(step, &cfg).slots
}

/// Convex per-image blend of equally sized candidates.
#[pyfunction]
fn pixel_weighted(candidates: Vec<Vec<f64>>, weights: Vec<f64>, width: usize, height: usize) -> PyResult<Vec<f64>> {
    let imgs = candidates
        .iter()
        .map(|c| image(c, width, height))
        .collect::<PyResult<Vec<_>>>()?;
    let out = pipelines::pixel_weighted(&imgs, &FusionWeights::Global(weights)).map_err(py_err)?;
    Ok(out.data.iter().map(|&v| v as f64).collect())
}

#[pymodule]
fn sparse_nerf_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScene>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(masked_psnr, m)?)?;
    m.add_function(wrap_pyfunction!(masked_ssim, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(mask_at, m)?)?;
    m.add_function(wrap_pyfunction!(pixel_weighted, m)?)?;
    Ok(())
}
