//! Python bindings: light fields, model configs and weights, training,
//! evaluation and attention analysis.
//!
//! Tensors cross the boundary as a shape plus a flat row-major list of floats.

use std::collections::BTreeMap;
use std::path::PathBuf;

use lft_core::analysis::{self, EpiAxis, Region};
use lft_core::lf::{self, DegradeConfig, SceneSet, Split};
use lft_core::model::{self, count_params};
use lft_core::train::{self, lr_schedule};
use lft_core::{Error, Tensor};
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyIndexError, PyValueError};
use pyo3::prelude::*;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::Numeric(_) => PyArithmeticError::new_err(e.to_string()),
        Error::Bounds(_) => PyIndexError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for lft_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

#[pyclass(name = "LightField", module = "lft", from_py_object)]
#[derive(Clone)]
pub struct PyLightField {
    pub inner: lf::LightField,
}

#[pymethods]
impl PyLightField {
    /// `shape` is `[U, V, C, H, W]`.
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f64>) -> PyResult<Self> {
        let t = Tensor::new(shape, data).py()?;
        Ok(PyLightField { inner: lf::LightField::new(t).py()? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyLightField { inner: lf::load_lf(&path).py()? })
    }

    /// Packed file for a `.lf` path, otherwise a PGM view directory.
    fn save(&self, path: PathBuf) -> PyResult<()> {
        lf::save_lf(&self.inner, &path).py()
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.samples().shape().to_vec()
    }

    #[getter]
    fn angular(&self) -> PyResult<usize> {
        self.inner.angular().py()
    }

    fn data(&self) -> Vec<f64> {
        self.inner.samples().data().to_vec()
    }

    /// Sub-aperture image `(u, v)` as a flat `[C, H, W]` list.
    fn view(&self, u: usize, v: usize) -> PyResult<Vec<f64>> {
        Ok(self.inner.view(u, v).py()?.into_data())
    }

    fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> PyResult<Self> {
        Ok(PyLightField { inner: self.inner.crop(y0, x0, h, w).py()? })
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("LightField(shape={:?})", self.shape())
    }
}

#[pyclass(name = "ModelConfig", module = "lft", skip_from_py_object)]
#[derive(Clone)]
pub struct PyModelConfig {
    pub inner: model::ModelConfig,
}

#[pymethods]
impl PyModelConfig {
    /// Full-size defaults, then any `key=value` keyword overrides.
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<BTreeMap<String, Bound<'_, PyAny>>>) -> PyResult<Self> {
        let mut cfg = PyModelConfig { inner: model::ModelConfig::default() };
        for (k, v) in kwargs.unwrap_or_default() {
            cfg.set(&k, &v.str()?.to_string_lossy())?;
        }
        Ok(cfg)
    }

    /// Eight channels, one block pair, two heads.
    #[staticmethod]
    fn tiny(angular: usize) -> Self {
        PyModelConfig { inner: model::ModelConfig::tiny(angular) }
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        let value = match value {
            "True" => "true",
            "False" => "false",
            v => v,
        };
        self.inner.set(key, value).py()
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().py()
    }

    fn to_dict(&self) -> BTreeMap<String, String> {
        self.inner.to_kv()
    }

    fn num_params(&self) -> usize {
        count_params(&self.inner)
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!(
            "ModelConfig(angular={}, channels={}, n_pairs={}, heads={}, scale={})",
            c.angular, c.channels, c.n_pairs, c.heads, c.scale
        )
    }
}

#[pyclass(name = "ModelParams", module = "lft", skip_from_py_object)]
#[derive(Clone)]
pub struct PyModelParams {
    pub inner: model::ModelParams,
}

#[pymethods]
impl PyModelParams {
    #[staticmethod]
    fn xavier(cfg: &PyModelConfig, seed: u64) -> PyResult<Self> {
        Ok(PyModelParams { inner: train::xavier_init(&cfg.inner, seed).py()? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModelParams { inner: model::ModelParams::load(&path).py()? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).py()
    }

    fn names(&self) -> Vec<String> {
        self.inner.names().cloned().collect()
    }

    /// `(shape, flat data)` of one tensor.
    fn get(&self, name: &str) -> PyResult<(Vec<usize>, Vec<f64>)> {
        let t = self.inner.get(name).py()?;
        Ok((t.shape().to_vec(), t.data().to_vec()))
    }

    fn num_scalars(&self) -> usize {
        self.inner.num_scalars()
    }

    fn check(&self, cfg: &PyModelConfig) -> PyResult<()> {
        self.inner.check(&cfg.inner).py()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyclass(name = "TrainConfig", module = "lft", skip_from_py_object)]
#[derive(Clone)]
pub struct PyTrainConfig {
    pub inner: train::TrainConfig,
}

#[pymethods]
impl PyTrainConfig {
    #[new]
    #[pyo3(signature = (scale, **kwargs))]
    fn new(scale: usize, kwargs: Option<BTreeMap<String, Bound<'_, PyAny>>>) -> PyResult<Self> {
        let mut tc = PyTrainConfig { inner: train::TrainConfig::new(scale) };
        for (k, v) in kwargs.unwrap_or_default() {
            tc.set(&k, &v.str()?.to_string_lossy())?;
        }
        Ok(tc)
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).py()
    }

    fn to_dict(&self) -> BTreeMap<String, String> {
        self.inner.to_kv()
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        lr_schedule(epoch, &self.inner)
    }
}

#[pyclass(name = "MetricReport", module = "lft")]
pub struct PyMetricReport {
    pub inner: train::MetricReport,
}

#[pymethods]
impl PyMetricReport {
    #[getter]
    fn mean_psnr(&self) -> f64 {
        self.inner.mean_psnr()
    }

    #[getter]
    fn mean_ssim(&self) -> f64 {
        self.inner.mean_ssim()
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.inner.warnings.clone()
    }

    /// `(scene, u, v, psnr, ssim)` per view.
    fn rows(&self) -> Vec<(String, usize, usize, f64, f64)> {
        let s = &self.inner.scenes;
        s.iter().flat_map(|sc| sc.views.iter().map(|v| (sc.name.clone(), v.u, v.v, v.psnr, v.ssim))).collect()
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    fn __len__(&self) -> usize {
        self.inner.count()
    }
}

fn scene_set(scenes: Vec<(String, PyLightField)>, split: Split) -> PyResult<SceneSet> {
    SceneSet::new(scenes.into_iter().map(|(n, l)| (n, l.inner)).collect(), split).py()
}

#[pyfunction]
fn synth_lf(seed: u64, angular: usize, height: usize, width: usize, disparity: f64) -> PyResult<PyLightField> {
    Ok(PyLightField { inner: lf::synth_lf(seed, angular, height, width, disparity).py()? })
}

/// `(lr, hr)` patch pairs cut on a grid.
#[pyfunction]
#[pyo3(signature = (lf, scale, lr_patch = 32, stride = 32))]
fn degrade(
    lf: &PyLightField,
    scale: usize,
    lr_patch: usize,
    stride: usize,
) -> PyResult<Vec<(PyLightField, PyLightField)>> {
    let d = lf::degrade(&lf.inner, &DegradeConfig::with_lr_patch(scale, lr_patch, stride)).py()?;
    Ok(d.pairs.into_iter().map(|p| (PyLightField { inner: p.lr }, PyLightField { inner: p.hr })).collect())
}

#[pyfunction]
fn bicubic_upsample(lf: &PyLightField, scale: usize) -> PyResult<PyLightField> {
    Ok(PyLightField { inner: model::bicubic_upsample(&lf.inner, scale).py()? })
}

/// Super-resolves `lr`; output clamped to `[0, 1]`.
#[pyfunction]
fn forward(py: Python<'_>, lr: &PyLightField, params: &PyModelParams, cfg: &PyModelConfig) -> PyResult<PyLightField> {
    let (lr, params, cfg) = (&lr.inner, &params.inner, &cfg.inner);
    let out = py.detach(|| model::forward(lr, params, cfg)).py()?;
    Ok(PyLightField { inner: out })
}

#[pyfunction]
fn psnr(a: &PyLightField, b: &PyLightField) -> PyResult<f64> {
    train::psnr(a.inner.samples(), b.inner.samples()).py()
}

/// Mean SSIM over views.
#[pyfunction]
fn ssim(a: &PyLightField, b: &PyLightField) -> PyResult<f64> {
    let (ua, va) = (a.inner.u_views(), a.inner.v_views());
    let mut total = 0.0;
    for u in 0..ua {
        for v in 0..va {
            total += train::ssim(&a.inner.view(u, v).py()?, &b.inner.view(u, v).py()?).py()?;
        }
    }
    Ok(total / (ua * va) as f64)
}

/// Trains from `init` (Xavier with the training seed if omitted) on named
/// HR scenes. Returns the weights and the per-step losses.
#[pyfunction]
#[pyo3(signature = (cfg, tc, scenes, init = None))]
fn train_model(
    py: Python<'_>,
    cfg: &PyModelConfig,
    tc: &PyTrainConfig,
    scenes: Vec<(String, PyLightField)>,
    init: Option<&PyModelParams>,
) -> PyResult<(PyModelParams, Vec<f64>)> {
    let set = scene_set(scenes, Split::Train)?;
    let init = match init {
        Some(p) => p.inner.clone(),
        None => train::xavier_init(&cfg.inner, tc.inner.seed).py()?,
    };
    let (cfg, tc) = (&cfg.inner, &tc.inner);
    let out = py.detach(|| train::train(cfg, tc, init, &set, None)).py()?;
    let losses = out.history.iter().map(|r| r.loss).collect();
    Ok((PyModelParams { inner: out.params }, losses))
}

#[pyfunction]
fn evaluate(
    py: Python<'_>,
    params: &PyModelParams,
    cfg: &PyModelConfig,
    scenes: Vec<(String, PyLightField)>,
) -> PyResult<PyMetricReport> {
    let set = scene_set(scenes, Split::Test)?;
    let (params, cfg) = (&params.inner, &cfg.inner);
    let report = py.detach(|| train::evaluate(params, cfg, &set)).py()?;
    Ok(PyMetricReport { inner: report })
}

#[pyfunction]
fn evaluate_bicubic(scenes: Vec<(String, PyLightField)>, scale: usize) -> PyResult<PyMetricReport> {
    let set = scene_set(scenes, Split::Test)?;
    Ok(PyMetricReport { inner: train::evaluate_bicubic(&set, scale).py()? })
}

/// `[A², A²]` ratio matrix (flat) of one block's angular attention over a
/// region of `patch`; the whole patch if `region` is omitted.
#[pyfunction]
#[pyo3(signature = (params, cfg, patch, threshold = analysis::FIG_THRESHOLD, block = 0, region = None))]
fn local_angular_attention(
    params: &PyModelParams,
    cfg: &PyModelConfig,
    patch: &PyLightField,
    threshold: f64,
    block: usize,
    region: Option<(usize, usize, usize, usize)>,
) -> PyResult<Vec<f64>> {
    let records = analysis::capture_attention(&params.inner, &cfg.inner, &patch.inner).py()?;
    let (y0, x0, h, w) = region.unwrap_or((0, 0, patch.inner.height(), patch.inner.width()));
    let map = analysis::local_angular_attention(
        &analysis::records_for_block(&records, block),
        threshold,
        Region::new(y0, x0, h, w),
    )
    .py()?;
    Ok(map.ratios.into_data())
}

/// Epipolar-plane image through the central view row (`"horizontal"`) or
/// column (`"vertical"`): `(shape, flat data)`.
#[pyfunction]
fn epi(lf: &PyLightField, axis: &str, index: usize) -> PyResult<(Vec<usize>, Vec<f64>)> {
    let axis: EpiAxis = axis.parse().py()?;
    let t = analysis::epi_extract(&lf.inner, axis, index).py()?;
    Ok((t.shape().to_vec(), t.into_data()))
}

#[pymodule]
fn lft(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLightField>()?;
    m.add_class::<PyModelConfig>()?;
    m.add_class::<PyModelParams>()?;
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PyMetricReport>()?;
    m.add_function(wrap_pyfunction!(synth_lf, m)?)?;
    m.add_function(wrap_pyfunction!(degrade, m)?)?;
    m.add_function(wrap_pyfunction!(bicubic_upsample, m)?)?;
    m.add_function(wrap_pyfunction!(forward, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_bicubic, m)?)?;
    m.add_function(wrap_pyfunction!(local_angular_attention, m)?)?;
    m.add_function(wrap_pyfunction!(epi, m)?)?;
    Ok(())
}
