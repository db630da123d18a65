//! Python bindings: scene generation, training, evaluation and the merge kernel.

use std::path::PathBuf;

use distgrid::config::RunConfig;
use distgrid::data::{generate_dataset, Dataset, SceneSpec, Split};
use distgrid::dist::Precision;
use distgrid::field::MEAN_APPEARANCE;
use distgrid::render::{merge_forward, PartialRender};
use distgrid::train::{loss_transmittance as lt, LrSchedule};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: distgrid::Error) -> PyErr {
    match e {
        distgrid::Error::Config(_) | distgrid::Error::Shape(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Names of the built-in scenes.
#[pyfunction]
fn scene_presets() -> Vec<&'static str> {
    distgrid::data::PRESETS.to_vec()
}

/// Renders a built-in scene into `out` and returns the dataset content hash.
#[pyfunction]
#[pyo3(signature = (preset, out, samples = 2048))]
fn generate_scene(preset: &str, out: PathBuf, samples: usize) -> PyResult<String> {
    let mut spec = SceneSpec::from_preset(preset);
    spec.render_samples = samples;
    let (scene, rig) = spec.resolve().map_err(py_err)?;
    let ds = generate_dataset(&scene, &rig, samples).map_err(py_err)?;
    ds.save(&out).map_err(py_err)?;
    std::fs::write(out.join("scene.toml"), spec.to_toml().map_err(py_err)?)?;
    ds.content_hash().map_err(py_err)
}

/// Merges ordered `(r, g, b, transmittance)` partials front to back.
#[pyfunction]
fn merge(partials: Vec<(f64, f64, f64, f64)>) -> PyResult<((f64, f64, f64), f64)> {
    let p: Vec<PartialRender<f64>> = partials
        .iter()
        .enumerate()
        .map(|(i, &(r, g, b, t))| PartialRender {
            segment: i,
            region: i as u16,
            color: [r, g, b],
            transmittance: t,
            depth: 0.0,
        })
        .collect();
    let m = merge_forward(&p).map_err(py_err)?;
    Ok(((m.color[0], m.color[1], m.color[2]), m.transmittance))
}

#[pyfunction]
#[pyo3(signature = (t, epsilon = 1e-6))]
fn loss_transmittance(t: f64, epsilon: f64) -> f64 {
    lt(t, epsilon).0
}

/// Learning rate of the default schedule at `step` of `total_steps`.
#[pyfunction]
fn learning_rate(step: u64, total_steps: u64) -> f64 {
    LrSchedule {
        total_steps,
        ..Default::default()
    }
    .lr(step)
}

#[pyclass(unsendable)]
struct Trainer {
    inner: distgrid::trainer::Trainer,
    data: Dataset,
}

#[pymethods]
impl Trainer {
    #[new]
    #[pyo3(signature = (data, preset = "quick", partitions = (2, 2), seed = 0, precision = 64, steps = None))]
    fn new(data: PathBuf, preset: &str, partitions: (usize, usize), seed: u64, precision: u32, steps: Option<u64>) -> PyResult<Self> {
        let mut cfg = RunConfig::preset(preset).map_err(py_err)?;
        let precision = match precision {
            32 => Precision::F32,
            64 => Precision::F64,
            p => return Err(PyValueError::new_err(format!("precision must be 32 or 64, got {p}"))),
        };
        cfg.apply_overrides(Some([partitions.0, partitions.1]), None, Some(seed), Some(precision))
            .map_err(py_err)?;
        if let Some(s) = steps {
            cfg.steps = s;
            cfg.cluster.lr.total_steps = s;
        }
        let ds = Dataset::load(&data).map_err(py_err)?;
        let ground = match SceneSpec::load(&data.join("scene.toml")) {
            Ok(spec) => spec.resolve().map_err(py_err)?.0.ground_altitude,
            Err(_) => 0.0,
        };
        let inner = distgrid::trainer::Trainer::new(cfg, &ds, ground).map_err(py_err)?;
        Ok(Trainer { inner, data: ds })
    }

    #[getter]
    fn step_count(&self) -> u64 {
        self.inner.cluster.step
    }

    #[getter]
    fn workers(&self) -> usize {
        self.inner.cluster.world()
    }

    /// Runs one training step and returns `(rgb loss, transmittance loss, learning rate)`.
    fn step(&mut self) -> PyResult<(f64, f64, f64)> {
        let r = self.inner.step(&self.data).map_err(py_err)?;
        Ok((r.loss_rgb, r.loss_transmittance, r.lr))
    }

    /// Mean `(psnr, ssim)` over up to `limit` images of `split` (all when zero).
    #[pyo3(signature = (split = "val", limit = 0))]
    fn evaluate(&mut self, split: &str, limit: usize) -> PyResult<(f64, f64)> {
        let split: Split = split.parse().map_err(py_err)?;
        let s = self.inner.evaluate(&self.data, split, limit).map_err(py_err)?;
        Ok((s.mean_psnr, s.mean_ssim))
    }

    /// Renders a dataset camera; returns `(width, height, rgb)` with rgb row-major.
    fn render(&mut self, image: usize) -> PyResult<(u32, u32, Vec<f64>)> {
        let pose = self
            .data
            .poses
            .get(image)
            .ok_or_else(|| PyValueError::new_err(format!("no image {image}")))?
            .clone();
        let out = self.inner.cluster.evaluate_image(&pose, MEAN_APPEARANCE).map_err(py_err)?;
        Ok((out.rgb.width, out.rgb.height, out.rgb.data))
    }
}

#[pymodule]
#[pyo3(name = "distgrid")]
pub fn distgrid_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(scene_presets, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scene, m)?)?;
    m.add_function(wrap_pyfunction!(merge, m)?)?;
    m.add_function(wrap_pyfunction!(loss_transmittance, m)?)?;
    m.add_function(wrap_pyfunction!(learning_rate, m)?)?;
    m.add_class::<Trainer>()?;
    Ok(())
}
