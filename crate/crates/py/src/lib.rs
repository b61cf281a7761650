//! Python module `ptgan`.
//!
//! Images cross the boundary as flat row-major `H*W*3` float lists in
//! `[0, 1]`, poses as 75-float lists.

use std::path::PathBuf;

use pyo3::exceptions::{PyFileNotFoundError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use ptgan_core::augment::{AugmentConfig, Augmenter as CoreAugmenter};
use ptgan_core::backbone::{extract_descriptor, load_backbone, Backbone};
use ptgan_core::dataset::{build_pairs as core_build_pairs, make_synthetic_dataset, DatasetIndex};
use ptgan_core::generator::Generator as CoreGenerator;
use ptgan_core::image::Image;
use ptgan_core::metrics::SsimConfig;
use ptgan_core::pose::{self, PoseVector};
use ptgan_core::trainer::{self, TrainerConfig};
use ptgan_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config { .. }
        | Error::InvalidArgument(_)
        | Error::DimMismatch(_)
        | Error::MalformedDocument(_)
        | Error::WrongJointCount { .. }
        | Error::NegativeConfidence { .. }
        | Error::ZeroDims { .. }
        | Error::NoSharedVisibleJoints
        | Error::RowNotNormalized { .. } => PyValueError::new_err(e.to_string()),
        Error::MissingFile(_) => PyFileNotFoundError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn image(pixels: Vec<f32>, height: usize, width: usize) -> PyResult<Image> {
    Image::new(height, width, pixels).map_err(to_py)
}

fn pose_vector(values: Vec<f32>) -> PyResult<PoseVector> {
    PoseVector::from_values(values).map_err(to_py)
}

/// Parse a keypoint document and return its normalized 75-float pose vector.
#[pyfunction]
fn normalize_pose(document: &str) -> PyResult<Vec<f32>> {
    let kp = pose::parse_keypoints(document).map_err(to_py)?;
    Ok(pose::normalize_pose(&kp).map_err(to_py)?.values().to_vec())
}

#[pyfunction]
fn pose_distance(a: Vec<f32>, b: Vec<f32>) -> PyResult<f32> {
    pose::pose_distance(&pose_vector(a)?, &pose_vector(b)?).map_err(to_py)
}

#[pyfunction]
fn ssim(x: Vec<f32>, y: Vec<f32>, height: usize, width: usize) -> PyResult<f64> {
    ptgan_core::metrics::ssim(&image(x, height, width)?, &image(y, height, width)?, &SsimConfig::default())
        .map_err(to_py)
}

/// Returns `(mean, std)`.
#[pyfunction]
#[pyo3(signature = (probs, splits = 10))]
fn inception_score(probs: Vec<Vec<f64>>, splits: usize) -> PyResult<(f64, f64)> {
    ptgan_core::metrics::inception_score(&probs, splits).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (epoch, lr0 = 2e-4, decay_factor = 10.0, decay_every = 20))]
fn lr_schedule(epoch: u64, lr0: f64, decay_factor: f64, decay_every: u64) -> PyResult<f64> {
    let cfg = TrainerConfig {
        lr0,
        decay_factor,
        decay_every,
        ..Default::default()
    };
    cfg.validate().map_err(to_py)?;
    Ok(trainer::lr_schedule(epoch, &cfg))
}

/// Render a synthetic dataset under `out_dir`; returns the image count.
#[pyfunction]
#[pyo3(signature = (out_dir, identities = 8, per_identity = 6, size = 256, seed = 0))]
fn synth_data(out_dir: PathBuf, identities: usize, per_identity: usize, size: usize, seed: u64) -> PyResult<usize> {
    let synth = make_synthetic_dataset(identities, per_identity, seed, (size, size)).map_err(to_py)?;
    Ok(synth.write_to(&out_dir).map_err(to_py)?.entries.len())
}

/// `(source_image, target_image)` paths of every training pair.
#[pyfunction]
#[pyo3(signature = (manifest, min_pose_distance = 0.0))]
fn build_pairs(manifest: PathBuf, min_pose_distance: f32) -> PyResult<Vec<(String, String)>> {
    let index = DatasetIndex::load_manifest(&manifest).map_err(to_py)?;
    let pairs = core_build_pairs(&index, min_pose_distance).map_err(to_py)?;
    let path = |i: usize| index.resolve(&index.entries[i].image_path).display().to_string();
    Ok(pairs.iter().map(|p| (path(p.source), path(p.target))).collect())
}

/// Run the command-line interface in-process; returns the exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    ptgan_core::cli::run(std::iter::once("ptgan".to_string()).chain(args))
}

#[pyclass]
struct Augmenter {
    inner: CoreAugmenter,
}

#[pymethods]
impl Augmenter {
    /// `config` is the body of an `[augment]` section in TOML.
    #[new]
    #[pyo3(signature = (config = ""))]
    fn new(config: &str) -> PyResult<Self> {
        let cfg: AugmentConfig = toml::from_str(config).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self {
            inner: CoreAugmenter::new(cfg).map_err(to_py)?,
        })
    }

    #[getter]
    fn image_size(&self) -> usize {
        self.inner.config().image_size
    }

    /// Augment one image; returns the flat `S*S*3` result.
    fn apply(&self, pixels: Vec<f32>, height: usize, width: usize, index: u64) -> PyResult<Vec<f32>> {
        let out = self.inner.apply(&image(pixels, height, width)?, index).map_err(to_py)?;
        Ok(out.data().to_vec())
    }
}

#[pyclass]
struct Generator {
    generator: CoreGenerator,
    backbone: Box<dyn Backbone>,
    checkpoint_id: String,
}

#[pymethods]
impl Generator {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (generator, backbone_cfg, checkpoint_id) = trainer::load_generator(&path).map_err(to_py)?;
        let backbone = load_backbone(&backbone_cfg, generator.config().output_size).map_err(to_py)?;
        Ok(Self {
            generator,
            backbone,
            checkpoint_id,
        })
    }

    #[getter]
    fn output_size(&self) -> usize {
        self.generator.config().output_size
    }

    #[getter]
    fn checkpoint_id(&self) -> String {
        self.checkpoint_id.clone()
    }

    /// Synthesize the person in `source` (flat pixels) at `pose` (75
    /// floats); returns flat `S*S*3` pixels.
    fn generate(&self, source: Vec<f32>, height: usize, width: usize, pose: Vec<f32>) -> PyResult<Vec<f32>> {
        let s = self.output_size();
        let src = ptgan_core::augment::resize_and_pad(&image(source, height, width)?, (s, s)).map_err(to_py)?;
        let d = extract_descriptor(&src, self.backbone.as_ref()).map_err(to_py)?;
        let out = self.generator.generate(&d, &pose_vector(pose)?).map_err(to_py)?;
        Ok(out.data().to_vec())
    }
}

#[pymodule]
fn ptgan(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(normalize_pose, m)?)?;
    m.add_function(wrap_pyfunction!(pose_distance, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(inception_score, m)?)?;
    m.add_function(wrap_pyfunction!(lr_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(synth_data, m)?)?;
    m.add_function(wrap_pyfunction!(build_pairs, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add_class::<Augmenter>()?;
    m.add_class::<Generator>()?;
    Ok(())
}
