//! Python bindings: load, render and extract splat models, RLE masks, and
//! dataset generation.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use splatsynth::annotations::{decode_rle, encode_rle, BinaryMask, Rle};
use splatsynth::extraction::{extract_foreground, recenter, save_foreground, ExtractionParams, ForegroundObject};
use splatsynth::pipeline::{run_generate, CameraSpec, GenerationConfig, RunOptions};
use splatsynth::renderer::{self, RenderOptions};
use splatsynth::splat_io;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

#[pyclass(name = "SplatModel", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySplatModel {
    inner: splat_io::SplatModel,
}

#[pymethods]
impl PySplatModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        splat_io::load_splat_ply(&path)
            .map(|inner| Self { inner })
            .map_err(value_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        splat_io::save_splat_ply(&self.inner, &path).map_err(runtime_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn sh_degree(&self) -> usize {
        self.inner.sh_degree
    }

    fn means(&self) -> Vec<(f64, f64, f64)> {
        self.inner.gaussians.iter().map(|g| (g.mean.x, g.mean.y, g.mean.z)).collect()
    }

    fn opacities(&self) -> Vec<f64> {
        self.inner.gaussians.iter().map(|g| g.opacity).collect()
    }

    fn __repr__(&self) -> String {
        format!("SplatModel(len={}, sh_degree={})", self.inner.len(), self.inner.sh_degree)
    }
}

#[pyclass(name = "Camera", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyCamera {
    inner: renderer::Camera,
}

#[pymethods]
impl PyCamera {
    /// Pinhole camera from a horizontal FOV, at `eye` looking at `target`.
    #[new]
    #[pyo3(signature = (width, height, eye, target, fov_deg = 55.0, up = [0.0, 1.0, 0.0]))]
    fn new(width: usize, height: usize, eye: [f64; 3], target: [f64; 3], fov_deg: f64, up: [f64; 3]) -> PyResult<Self> {
        let spec = CameraSpec {
            width,
            height,
            fov_deg,
            eye,
            target,
            up,
        };
        spec.to_camera().map(|inner| Self { inner }).map_err(value_err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn fx(&self) -> f64 {
        self.inner.intrinsics.fx
    }

    /// Pixel coordinates and depth of a world point, or None behind the camera.
    fn project(&self, p: [f64; 3]) -> Option<(f64, f64, f64)> {
        self.inner
            .project(&nalgebra::Vector3::from(p))
            .map(|(uv, z)| (uv.x, uv.y, z))
    }
}

/// Renders `model`; returns a dict with `width`, `height` and flat `color`
/// (RGB), `alpha` and `depth` lists.
#[pyfunction]
#[pyo3(signature = (model, camera, white = false, sh_dir = None))]
fn render<'py>(
    py: Python<'py>,
    model: &PySplatModel,
    camera: &PyCamera,
    white: bool,
    sh_dir: Option<[f64; 3]>,
) -> PyResult<Bound<'py, PyDict>> {
    let opts = RenderOptions {
        sh_dir_override: sh_dir.map(|d| nalgebra::Vector3::from(d).normalize()),
        white_override: white,
    };
    let out = py.detach(|| renderer::render(&model.inner, &camera.inner, &opts));
    let d = PyDict::new(py);
    d.set_item("width", out.width)?;
    d.set_item("height", out.height)?;
    d.set_item("color", out.color)?;
    d.set_item("alpha", out.alpha)?;
    d.set_item("depth", out.depth)?;
    Ok(d)
}

#[pyclass(name = "Foreground", frozen)]
struct PyForeground {
    inner: ForegroundObject,
    counts: (usize, usize, usize, usize),
}

#[pymethods]
impl PyForeground {
    /// Runs the plane, statistical and cluster filters with default parameters.
    #[staticmethod]
    #[pyo3(signature = (model, name, seed = 0))]
    fn extract(py: Python<'_>, model: &PySplatModel, name: &str, seed: u64) -> PyResult<Self> {
        let params = ExtractionParams::default();
        let ex = py
            .detach(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                extract_foreground(&model.inner, name, &params, &mut rng)
            })
            .map_err(value_err)?;
        let c = ex.counts;
        Ok(Self {
            inner: ex.object,
            counts: (c.input, c.after_plane, c.after_statistical, c.after_cluster),
        })
    }

    /// Gaussian counts: input, after plane, after statistical, after cluster.
    #[getter]
    fn counts(&self) -> (usize, usize, usize, usize) {
        self.counts
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn up(&self) -> (f64, f64, f64) {
        (self.inner.up.x, self.inner.up.y, self.inner.up.z)
    }

    #[getter]
    fn base_point(&self) -> (f64, f64, f64) {
        let b = self.inner.base_point;
        (b.x, b.y, b.z)
    }

    #[getter]
    fn model(&self) -> PySplatModel {
        PySplatModel {
            inner: self.inner.model.clone(),
        }
    }

    /// Copy moved so the base point is the origin and up is +y.
    fn recentered(&self) -> Self {
        Self {
            inner: recenter(&self.inner, ExtractionParams::default().sh_transform),
            counts: self.counts,
        }
    }

    /// Writes `<dir>/<name>.ply` plus its metadata sidecar; returns the PLY path.
    fn save(&self, dir: PathBuf) -> PyResult<PathBuf> {
        let ex = splatsynth::extraction::Extraction {
            object: self.inner.clone(),
            counts: splatsynth::extraction::StageCounts {
                input: self.counts.0,
                after_plane: self.counts.1,
                after_statistical: self.counts.2,
                after_cluster: self.counts.3,
            },
            kept: Vec::new(),
        };
        save_foreground(&ex, &ExtractionParams::default(), &dir, &self.inner.name).map_err(runtime_err)
    }
}

/// Column-major COCO RLE of a mask given as rows of booleans.
#[pyfunction]
fn rle_encode(rows: Vec<Vec<bool>>) -> PyResult<(Vec<u32>, [usize; 2])> {
    let height = rows.len();
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(PyValueError::new_err("mask rows must have equal length"));
    }
    let mask = BinaryMask::from_fn(width, height, |x, y| rows[y][x]);
    let rle = encode_rle(&mask);
    Ok((rle.counts, rle.size))
}

#[pyfunction]
fn rle_decode(counts: Vec<u32>, size: [usize; 2]) -> PyResult<Vec<Vec<bool>>> {
    let mask = decode_rle(&Rle { counts, size }).map_err(value_err)?;
    Ok((0..mask.height)
        .map(|y| (0..mask.width).map(|x| mask.get(x, y)).collect())
        .collect())
}

/// Default generation config as TOML.
#[pyfunction]
fn default_config() -> String {
    GenerationConfig::default().to_toml()
}

/// Runs a generation config file; returns the summary as a dict.
#[pyfunction]
#[pyo3(signature = (config, force = false, workers = None))]
fn generate<'py>(py: Python<'py>, config: PathBuf, force: bool, workers: Option<usize>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = GenerationConfig::load(&config).map_err(value_err)?;
    let (summary, _) = py
        .detach(|| run_generate(&cfg, RunOptions { force, workers }))
        .map_err(|e| if e.is_validation() { value_err(e) } else { runtime_err(e) })?;
    let json = serde_json::to_string(&summary).map_err(runtime_err)?;
    py.import("json")?.call_method1("loads", (json,))
}

#[pymodule]
fn splatsynth_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySplatModel>()?;
    m.add_class::<PyCamera>()?;
    m.add_class::<PyForeground>()?;
    m.add_function(wrap_pyfunction!(render, m)?)?;
    m.add_function(wrap_pyfunction!(rle_encode, m)?)?;
    m.add_function(wrap_pyfunction!(rle_decode, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    Ok(())
}
