//! Python bindings: tensors, model configs, models, synthetic data, training
//! and evaluation.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use segattn_core::data::{self, Mask, SegSample, SyntheticConfig};
use segattn_core::network;
use segattn_core::nn::InitSpec;
use segattn_core::train::{self, AdamConfig, ConfusionMatrix, TrainConfig};
use segattn_core::{Error, ModelConfig, SegModel, Tensor};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Dense row-major float64 tensor.
#[pyclass(name = "Tensor", module = "segattn", from_py_object)]
#[derive(Clone)]
pub struct PyTensor(Tensor);

#[pymethods]
impl PyTensor {
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f64>) -> PyResult<Self> {
        Tensor::new(&shape, data).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn zeros(shape: Vec<usize>) -> Self {
        Self(Tensor::zeros(&shape))
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.0.shape().to_vec()
    }

    fn tolist(&self) -> Vec<f64> {
        self.0.data().to_vec()
    }

    fn numel(&self) -> usize {
        self.0.numel()
    }

    fn reshape(&self, shape: Vec<usize>) -> PyResult<Self> {
        self.0.reshape(&shape).map(Self).map_err(to_py)
    }

    fn sum(&self) -> f64 {
        self.0.sum()
    }

    fn __len__(&self) -> usize {
        self.0.numel()
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.0.shape())
    }
}

/// Architecture description; round-trips through the `key = value` text form.
#[pyclass(name = "ModelConfig", module = "segattn", from_py_object)]
#[derive(Clone)]
pub struct PyModelConfig(ModelConfig);

#[pymethods]
impl PyModelConfig {
    #[new]
    #[pyo3(signature = (text = None))]
    fn new(text: Option<&str>) -> PyResult<Self> {
        match text {
            Some(t) => ModelConfig::parse(t).map(Self).map_err(to_py),
            None => Ok(Self(ModelConfig::default())),
        }
    }

    #[staticmethod]
    fn minimal() -> Self {
        Self(ModelConfig::minimal())
    }

    fn to_text(&self) -> String {
        self.0.to_text()
    }

    #[getter]
    fn in_channels(&self) -> usize {
        self.0.in_channels
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.0.num_classes
    }

    #[getter]
    fn stage_channels(&self) -> Vec<usize> {
        self.0.stage_channels.clone()
    }

    #[getter]
    fn pooling_count(&self) -> usize {
        self.0.pooling_count
    }

    #[getter]
    fn branches(&self) -> usize {
        self.0.branches
    }

    fn __repr__(&self) -> String {
        format!("ModelConfig({:?})", self.0.to_text())
    }
}

/// One image with its label mask.
#[pyclass(name = "Sample", module = "segattn", from_py_object)]
#[derive(Clone)]
pub struct PySample(SegSample);

#[pymethods]
impl PySample {
    #[new]
    fn new(id: String, image: PyTensor, height: usize, width: usize, labels: Vec<u8>) -> PyResult<Self> {
        let mask = Mask::new(height, width, labels).map_err(to_py)?;
        SegSample::new(id, image.0, mask).map(Self).map_err(to_py)
    }

    #[getter]
    fn id(&self) -> String {
        self.0.id.clone()
    }

    #[getter]
    fn image(&self) -> PyTensor {
        PyTensor(self.0.image.clone())
    }

    #[getter]
    fn labels(&self) -> Vec<u8> {
        self.0.mask.labels.clone()
    }

    #[getter]
    fn size(&self) -> (usize, usize) {
        (self.0.height(), self.0.width())
    }
}

/// Segmentation network with its parameters.
#[pyclass(name = "SegModel", module = "segattn")]
pub struct PySegModel(SegModel);

#[pymethods]
impl PySegModel {
    #[new]
    #[pyo3(signature = (config, seed = 0))]
    fn new(config: &PyModelConfig, seed: u64) -> PyResult<Self> {
        SegModel::build(&config.0, InitSpec::new(seed)).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        network::load_checkpoint(path).map(Self).map_err(to_py)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        network::save_checkpoint(&self.0, path).map_err(to_py)
    }

    #[getter]
    fn config(&self) -> PyModelConfig {
        PyModelConfig(self.0.config().clone())
    }

    fn count_params(&self) -> usize {
        self.0.count_params()
    }

    fn count_flops(&self, shape: [usize; 4]) -> PyResult<u64> {
        self.0.count_flops(shape).map_err(to_py)
    }

    fn layer_names(&self) -> Vec<String> {
        self.0.layer_names()
    }

    fn param_names(&self) -> Vec<String> {
        self.0.params().iter().map(|p| p.name.clone()).collect()
    }

    /// `(name, output shape, flops)` per layer for an `N x C x H x W` input.
    fn trace(&self, shape: [usize; 4]) -> PyResult<Vec<(String, [usize; 4], u64)>> {
        let t = self.0.trace(shape).map_err(to_py)?;
        Ok(t.into_iter().map(|l| (l.name, l.out_shape, l.flops)).collect())
    }

    fn forward(&self, x: &PyTensor) -> PyResult<PyTensor> {
        self.0.forward(&x.0).map(PyTensor).map_err(to_py)
    }

    /// Per-pixel class labels, `N * H * W` entries.
    fn predict(&self, x: &PyTensor) -> PyResult<Vec<u8>> {
        let logits = self.0.forward(&x.0).map_err(to_py)?;
        Ok(train::argmax_classes(&logits))
    }

    /// Finite-difference check of every parameter group on a seeded input;
    /// returns `(name, max_rel_err, passed)` rows.
    #[pyo3(signature = (size = (8, 8), batch = 2, step = 1e-5, tol = 1e-4, seed = 0))]
    fn gradcheck(
        &self,
        size: (usize, usize),
        batch: usize,
        step: f64,
        tol: f64,
        seed: u64,
    ) -> PyResult<Vec<(String, f64, bool)>> {
        let cfg = self.0.config();
        let mut model = self.0.clone();
        model.jitter_zero_params(seed);
        let (h, w) = size;
        let n = batch.max(1);
        let x = Tensor::from_fn(&[n, cfg.in_channels, h, w], |i| {
            ((i as u64).wrapping_mul(2_654_435_761).wrapping_add(seed) % 1000) as f64 / 1000.0 - 0.5
        });
        let targets: Vec<u8> = (0..n * h * w).map(|i| ((i * 7) % cfg.num_classes) as u8).collect();
        let rows = network::check_gradients(&model, &x, &targets, step, tol).map_err(to_py)?;
        Ok(rows.into_iter().map(|r| (r.name, r.max_rel_err, r.pass)).collect())
    }

    fn __repr__(&self) -> String {
        format!("SegModel(params={})", self.0.count_params())
    }
}

/// Seeded synthetic shapes dataset.
#[pyfunction]
#[pyo3(signature = (n, height, width, classes, seed = 0))]
fn gen_synthetic(n: usize, height: usize, width: usize, classes: usize, seed: u64) -> PyResult<Vec<PySample>> {
    let cfg = SyntheticConfig::new(n, (height, width), classes, seed);
    let samples = data::gen_synthetic(&cfg).map_err(to_py)?;
    Ok(samples.into_iter().map(PySample).collect())
}

fn unwrap_samples(v: &[PySample]) -> Vec<SegSample> {
    v.iter().map(|s| s.0.clone()).collect()
}

fn evaluation_dict<'py>(py: Python<'py>, e: &train::Evaluation) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("mean_iou", e.mean_iou)?;
    d.set_item("mean_class_accuracy", e.mean_class_accuracy)?;
    d.set_item("pixel_accuracy", e.pixel_accuracy)?;
    d.set_item("per_class_iou", e.per_class_iou.clone())?;
    Ok(d)
}

/// Trains in place; returns one dict per epoch.
#[pyfunction]
#[pyo3(signature = (model, train_set, val_set, epochs = 40, batch = 8, lr = 1e-3, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn train_model<'py>(
    py: Python<'py>,
    model: &mut PySegModel,
    train_set: Vec<PySample>,
    val_set: Vec<PySample>,
    epochs: usize,
    batch: usize,
    lr: f64,
    seed: u64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = TrainConfig {
        adam: AdamConfig { lr, ..AdamConfig::default() },
        batch,
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let (tr, va) = (unwrap_samples(&train_set), unwrap_samples(&val_set));
    let outcome = py
        .detach(|| train::train(&mut model.0, &tr, &va, &cfg, |_| {}))
        .map_err(to_py)?;
    outcome
        .report
        .records
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("epoch", r.epoch)?;
            d.set_item("train_loss", r.train_loss)?;
            d.set_item("train_pixel_acc", r.train_pixel_acc)?;
            d.set_item("val_pixel_acc", r.val_pixel_acc)?;
            d.set_item("val_miou", r.val_miou)?;
            Ok(d)
        })
        .collect()
}

#[pyfunction]
#[pyo3(signature = (model, samples, batch = 8))]
fn evaluate<'py>(py: Python<'py>, model: &PySegModel, samples: Vec<PySample>, batch: usize) -> PyResult<Bound<'py, PyDict>> {
    let data = unwrap_samples(&samples);
    let e = py.detach(|| train::evaluate(&model.0, &data, batch)).map_err(to_py)?;
    evaluation_dict(py, &e)
}

/// Per-class IoU and summaries for aligned label lists; 255 is ignored.
#[pyfunction]
fn score_labels<'py>(py: Python<'py>, gt: Vec<u8>, pred: Vec<u8>, num_classes: usize) -> PyResult<Bound<'py, PyDict>> {
    let mut cm = ConfusionMatrix::new(num_classes);
    cm.accumulate(&gt, &pred, Some(data::IGNORE_INDEX)).map_err(to_py)?;
    evaluation_dict(py, &cm.into())
}

#[pyfunction]
fn channel_attention(f: &PyTensor, alpha: f64) -> PyResult<PyTensor> {
    let c = f.0.shape().get(1).copied().unwrap_or(0);
    let att = segattn_core::attention::ChannelAttention { alpha, expected_channels: c };
    att.forward(&f.0).map(PyTensor).map_err(to_py)
}

#[pymodule]
fn segattn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyModelConfig>()?;
    m.add_class::<PySample>()?;
    m.add_class::<PySegModel>()?;
    m.add_function(wrap_pyfunction!(gen_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(score_labels, m)?)?;
    m.add_function(wrap_pyfunction!(channel_attention, m)?)?;
    Ok(())
}
