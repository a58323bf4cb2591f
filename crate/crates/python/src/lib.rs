//! Python bindings for the matting toolkit.

use std::path::PathBuf;

use alphagan::config::ExperimentConfig;
use alphagan::datapipe;
use alphagan::imgcore::{self, BitDepth, TrimapLabel};
use alphagan::metrics::{self, MetricParams, Scale};
use alphagan::trainer::{self, checkpoint};
use alphagan::Error;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn depth(bits: u8) -> PyResult<BitDepth> {
    BitDepth::from_bits(bits).map_err(to_py)
}

fn json_to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    use serde_json::Value;
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, json_to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

/// Planar RGB image with values in [0, 1], stored channel by channel.
#[pyclass(name = "RgbImage", skip_from_py_object)]
#[derive(Clone)]
pub struct PyRgbImage {
    inner: imgcore::RgbImage,
}

#[pymethods]
impl PyRgbImage {
    #[new]
    fn new(height: usize, width: usize, data: Vec<f32>) -> PyResult<Self> {
        Ok(PyRgbImage {
            inner: imgcore::RgbImage::new(height, width, data).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyRgbImage {
            inner: imgcore::load_rgb(&path).map_err(to_py)?,
        })
    }

    #[pyo3(signature = (path, bits = 8))]
    fn save(&self, path: PathBuf, bits: u8) -> PyResult<()> {
        imgcore::save_rgb(&self.inner, &path, depth(bits)?).map_err(to_py)
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    fn data(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.inner.get(c, y, x)
    }

    fn __repr__(&self) -> String {
        format!("RgbImage({}x{})", self.inner.height(), self.inner.width())
    }
}

/// Single-channel opacity matte in [0, 1].
#[pyclass(name = "AlphaMatte", skip_from_py_object)]
#[derive(Clone)]
pub struct PyAlphaMatte {
    inner: imgcore::AlphaMatte,
}

#[pymethods]
impl PyAlphaMatte {
    #[new]
    fn new(height: usize, width: usize, data: Vec<f32>) -> PyResult<Self> {
        Ok(PyAlphaMatte {
            inner: imgcore::AlphaMatte::new(height, width, data).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyAlphaMatte {
            inner: imgcore::load_alpha(&path).map_err(to_py)?,
        })
    }

    #[pyo3(signature = (path, bits = 16))]
    fn save(&self, path: PathBuf, bits: u8) -> PyResult<()> {
        imgcore::save_alpha(&self.inner, &path, depth(bits)?).map_err(to_py)
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    fn data(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn get(&self, y: usize, x: usize) -> f32 {
        self.inner.get(y, x)
    }

    fn __repr__(&self) -> String {
        format!("AlphaMatte({}x{})", self.inner.height(), self.inner.width())
    }
}

/// Three-level trimap. Values are 0 (background), 128 (unknown) and 255
/// (foreground).
#[pyclass(name = "Trimap", skip_from_py_object)]
#[derive(Clone)]
pub struct PyTrimap {
    inner: imgcore::Trimap,
}

#[pymethods]
impl PyTrimap {
    #[new]
    fn new(height: usize, width: usize, values: Vec<u8>) -> PyResult<Self> {
        let labels = values
            .iter()
            .map(|&v| {
                TrimapLabel::from_byte(v).ok_or_else(|| PyValueError::new_err(format!("{v} is not within 8 levels of 0, 128 or 255")))
            })
            .collect::<PyResult<Vec<_>>>()?;
        Ok(PyTrimap {
            inner: imgcore::Trimap::new(height, width, labels).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyTrimap {
            inner: imgcore::load_trimap(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        imgcore::save_trimap(&self.inner, &path).map_err(to_py)
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    fn values(&self) -> Vec<u8> {
        self.inner.to_bytes()
    }

    fn unknown_count(&self) -> usize {
        self.inner.unknown().count()
    }
}

/// One training example: foreground, background, matte, trimap and their
/// composite.
#[pyclass(name = "TrainingSample", from_py_object)]
#[derive(Clone)]
pub struct PyTrainingSample {
    inner: datapipe::TrainingSample,
}

#[pymethods]
impl PyTrainingSample {
    /// A procedurally generated sample: soft-edged ellipse over colour ramps.
    #[staticmethod]
    #[pyo3(signature = (seed, size, k = 7))]
    fn synthetic(seed: u64, size: usize, k: usize) -> PyResult<Self> {
        Ok(PyTrainingSample {
            inner: datapipe::synthetic_sample(seed, size, k).map_err(to_py)?,
        })
    }

    #[getter]
    fn composite(&self) -> PyRgbImage {
        PyRgbImage {
            inner: self.inner.composite.clone(),
        }
    }

    #[getter]
    fn foreground(&self) -> PyRgbImage {
        PyRgbImage {
            inner: self.inner.foreground.clone(),
        }
    }

    #[getter]
    fn background(&self) -> PyRgbImage {
        PyRgbImage {
            inner: self.inner.background.clone(),
        }
    }

    #[getter]
    fn alpha(&self) -> PyAlphaMatte {
        PyAlphaMatte {
            inner: self.inner.alpha_gt.clone(),
        }
    }

    #[getter]
    fn trimap(&self) -> PyTrimap {
        PyTrimap {
            inner: self.inner.trimap.clone(),
        }
    }
}

#[pyfunction]
fn composite(fg: &PyRgbImage, bg: &PyRgbImage, alpha: &PyAlphaMatte) -> PyResult<PyRgbImage> {
    Ok(PyRgbImage {
        inner: datapipe::composite(&fg.inner, &bg.inner, &alpha.inner).map_err(to_py)?,
    })
}

#[pyfunction]
fn synthesize_trimap(alpha: &PyAlphaMatte, k: usize) -> PyResult<PyTrimap> {
    Ok(PyTrimap {
        inner: datapipe::synthesize_trimap(&alpha.inner, k).map_err(to_py)?,
    })
}

/// Raw sum of absolute differences over the trimap's unknown region.
#[pyfunction]
fn sad(pred: &PyAlphaMatte, gt: &PyAlphaMatte, trimap: &PyTrimap) -> PyResult<f64> {
    Ok(metrics::sad(&pred.inner, &gt.inner, &trimap.inner.unknown()).map_err(to_py)?.raw)
}

#[pyfunction]
fn mse(pred: &PyAlphaMatte, gt: &PyAlphaMatte, trimap: &PyTrimap) -> PyResult<f64> {
    metrics::mse(&pred.inner, &gt.inner, &trimap.inner.unknown()).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (pred, gt, trimap, sigma = metrics::DEFAULT_SIGMA))]
fn gradient_error(pred: &PyAlphaMatte, gt: &PyAlphaMatte, trimap: &PyTrimap, sigma: f64) -> PyResult<f64> {
    metrics::gradient_error(&pred.inner, &gt.inner, &trimap.inner.unknown(), sigma).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (pred, gt, trimap, theta = metrics::DEFAULT_THETA, delta = metrics::DEFAULT_DELTA))]
fn connectivity_error(pred: &PyAlphaMatte, gt: &PyAlphaMatte, trimap: &PyTrimap, theta: f64, delta: f64) -> PyResult<f64> {
    Ok(metrics::connectivity_error(&pred.inner, &gt.inner, &trimap.inner.unknown(), theta, delta)
        .map_err(to_py)?
        .error)
}

/// Score every matte in `gt_dir` that has a prediction and a trimap with the
/// same name; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (pred_dir, gt_dir, trimap_dir, scale = "raw"))]
fn evaluate_dirs<'py>(
    py: Python<'py>,
    pred_dir: PathBuf,
    gt_dir: PathBuf,
    trimap_dir: PathBuf,
    scale: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let scale = match scale {
        "raw" => Scale::Raw,
        "benchmark" => Scale::Benchmark,
        other => return Err(PyValueError::new_err(format!("scale must be 'raw' or 'benchmark', got {other:?}"))),
    };
    let params = MetricParams {
        scale,
        ..MetricParams::default()
    };
    let report = metrics::evaluate_dirs(&pred_dir, &gt_dir, &trimap_dir, &params).map_err(to_py)?;
    json_to_py(py, &serde_json::to_value(&report).map_err(|e| to_py(e.into()))?)
}

#[pyfunction]
fn default_config(py: Python<'_>) -> PyResult<Bound<'_, PyAny>> {
    json_to_py(py, &serde_json::to_value(ExperimentConfig::default()).map_err(|e| to_py(e.into()))?)
}

fn parse_config(config: Option<&str>) -> PyResult<ExperimentConfig> {
    match config {
        None => Ok(ExperimentConfig::default()),
        Some(text) => {
            let doc = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
            ExperimentConfig::from_json(doc).map_err(to_py)
        }
    }
}

/// Alternating generator/discriminator trainer.
#[pyclass(name = "Trainer")]
pub struct PyTrainer {
    inner: trainer::Trainer,
}

#[pymethods]
impl PyTrainer {
    /// `config` is a JSON document; omitted fields keep their defaults.
    #[new]
    #[pyo3(signature = (config = None))]
    fn new(config: Option<&str>) -> PyResult<Self> {
        let cfg = parse_config(config)?;
        Ok(PyTrainer {
            inner: trainer::Trainer::new(&cfg, None).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn resume(dir: PathBuf) -> PyResult<Self> {
        let ckpt = checkpoint::load_checkpoint(&dir).map_err(to_py)?;
        Ok(PyTrainer {
            inner: trainer::Trainer::from_checkpoint(ckpt, None).map_err(to_py)?,
        })
    }

    #[getter]
    fn step(&self) -> u64 {
        self.inner.state.step
    }

    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &serde_json::to_value(self.inner.config()).map_err(|e| to_py(e.into()))?)
    }

    /// One update on `batch`; returns the loss components.
    fn train_step<'py>(&mut self, py: Python<'py>, batch: Vec<PyTrainingSample>) -> PyResult<Bound<'py, PyDict>> {
        let batch: Vec<_> = batch.into_iter().map(|s| s.inner).collect();
        let r = self.inner.train_step(&batch).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("l_alpha", r.l_alpha)?;
        d.set_item("l_comp", r.l_comp)?;
        d.set_item("l_gan_g", r.l_gan_g)?;
        d.set_item("l_gan_d", r.l_gan_d)?;
        d.set_item("total_g", r.total_g)?;
        Ok(d)
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        checkpoint::save_checkpoint(&self.inner.checkpoint(), &dir).map_err(to_py)
    }

    #[pyo3(signature = (image, trimap, clamp_known = true))]
    fn predict(&self, image: &PyRgbImage, trimap: &PyTrimap, clamp_known: bool) -> PyResult<PyAlphaMatte> {
        let inner = trainer::predict(
            &image.inner,
            &trimap.inner,
            &self.inner.state.generator,
            &self.inner.config().generator,
            clamp_known,
        )
        .map_err(to_py)?;
        Ok(PyAlphaMatte { inner })
    }
}

#[pymodule]
fn alphagan_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRgbImage>()?;
    m.add_class::<PyAlphaMatte>()?;
    m.add_class::<PyTrimap>()?;
    m.add_class::<PyTrainingSample>()?;
    m.add_class::<PyTrainer>()?;
    m.add_function(wrap_pyfunction!(composite, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize_trimap, m)?)?;
    m.add_function(wrap_pyfunction!(sad, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_error, m)?)?;
    m.add_function(wrap_pyfunction!(connectivity_error, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_dirs, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    Ok(())
}
