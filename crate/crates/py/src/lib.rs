//! Python bindings: poses, frustum overlap, checkpoints, the retrieval index
//! and the batch pipeline stages.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use reloc_core::dataset::{SyntheticSceneConfig, Trajectory};
use reloc_core::frustum::{self, CameraIntrinsics, DepthFrame};
use reloc_core::index::RetrievalIndex;
use reloc_core::losses::{LossConfig, Variant};
use reloc_core::mining::MiningConfig;
use reloc_core::model::{self as core_model, EncoderConfig, ModelParams};
use reloc_core::train::{self as core_train, TrainSchedule};
use reloc_core::workflow::{self, MineOptions, TrainRequest};
use reloc_core::{pose, RelocError, UnitQuaternion};

fn py_err(e: RelocError) -> PyErr {
    match e {
        RelocError::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Camera-to-world pose: translation and a w-first unit quaternion.
#[pyclass(name = "Pose", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyPose(reloc_core::Pose);

#[pymethods]
impl PyPose {
    #[new]
    #[pyo3(signature = (t = [0.0; 3], q = [1.0, 0.0, 0.0, 0.0]))]
    fn new(t: [f64; 3], q: [f64; 4]) -> PyResult<Self> {
        let q = UnitQuaternion::new(q[0], q[1], q[2], q[3]).map_err(py_err)?;
        reloc_core::Pose::new(t, q).map(PyPose).map_err(py_err)
    }

    #[getter]
    fn t(&self) -> [f64; 3] {
        self.0.t
    }

    #[getter]
    fn q(&self) -> [f64; 4] {
        self.0.q.to_array()
    }

    fn to_list(&self) -> [f64; 7] {
        self.0.to_array()
    }

    fn translation_error(&self, other: &PyPose) -> f64 {
        self.0.translation_error(&other.0)
    }

    fn rotation_error_degrees(&self, other: &PyPose) -> f64 {
        self.0.rotation_error_degrees(&other.0)
    }

    fn __repr__(&self) -> String {
        format!("Pose(t={:?}, q={:?})", self.0.t, self.0.q.to_array())
    }
}

/// Pose of `query` in the frame of `db`, as `(dt, dq)`.
#[pyfunction]
fn relative_pose(db: &PyPose, query: &PyPose) -> ([f64; 3], [f64; 4]) {
    let r = pose::relative_pose(&db.0, &query.0);
    (r.dt, r.dq.to_array())
}

#[pyfunction]
fn compose_absolute(db: &PyPose, dt: [f64; 3], dq: [f64; 4]) -> PyResult<PyPose> {
    let dq = UnitQuaternion::new(dq[0], dq[1], dq[2], dq[3]).map_err(py_err)?;
    Ok(PyPose(pose::compose_absolute(&db.0, &pose::RelativePose { dt, dq })))
}

/// Rotation angle between two quaternions divided by π, in [0, 1].
#[pyfunction]
fn angular_distance(a: [f64; 4], b: [f64; 4]) -> PyResult<f64> {
    let a = UnitQuaternion::new(a[0], a[1], a[2], a[3]).map_err(py_err)?;
    let b = UnitQuaternion::new(b[0], b[1], b[2], b[3]).map_err(py_err)?;
    Ok(pose::angular_distance(&a, &b))
}

/// Fraction of valid depth pixels of camera A that land inside camera B.
///
/// `depth` is row-major metres, 0 or non-finite for missing;
/// `intrinsics` is `(fx, fy, cx, cy, width, height)`.
#[pyfunction]
#[pyo3(signature = (depth, intrinsics, pose_a, pose_b, stride = frustum::DEFAULT_STRIDE))]
fn frustum_overlap(
    depth: Vec<f64>,
    intrinsics: (f64, f64, f64, f64, usize, usize),
    pose_a: &PyPose,
    pose_b: &PyPose,
    stride: usize,
) -> PyResult<f64> {
    let (fx, fy, cx, cy, w, h) = intrinsics;
    let k = CameraIntrinsics::new(fx, fy, cx, cy, w, h).map_err(py_err)?;
    let frame = DepthFrame::from_depth(k, depth).map_err(py_err)?;
    frustum::frustum_overlap(&frame, &pose_a.0, &pose_b.0, stride).map_err(py_err)
}

/// Encoder weights loaded from a checkpoint.
#[pyclass(name = "Model", frozen)]
struct PyModel(ModelParams);

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        core_model::load_checkpoint(&path).map(PyModel).map_err(py_err)
    }

    /// Freshly initialized desk-sized encoder.
    #[staticmethod]
    #[pyo3(signature = (seed = 0))]
    fn desk(seed: u64) -> PyResult<Self> {
        let config = EncoderConfig { seed, ..EncoderConfig::desk() };
        ModelParams::init(&config).map(PyModel).map_err(py_err)
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.0.config.input_dim
    }

    #[getter]
    fn block_dims(&self) -> Vec<usize> {
        self.0.config.block_dims.clone()
    }

    fn num_params(&self) -> usize {
        self.0.num_params()
    }

    fn full_model_params(&self) -> usize {
        self.0.full_model_params()
    }

    fn distilled_model_params(&self) -> usize {
        self.0.distilled_model_params()
    }

    /// Retrieval embedding (first block).
    fn encode(&self, input: Vec<f64>) -> PyResult<Vec<f64>> {
        let mut stack = core_model::encode_blocks(&self.0, &input, 1).map_err(py_err)?;
        Ok(stack.embeddings.remove(0))
    }

    /// Retrieve the nearest database frame and compose the regressed
    /// relative pose onto it. Returns `(pose, neighbor_id, distance)`.
    fn localize(&self, index: &PyIndex, input: Vec<f64>) -> PyResult<(PyPose, String, f64)> {
        let l = core_train::localize(&self.0, &index.0, &input).map_err(py_err)?;
        Ok((PyPose(l.pose), l.neighbor_id, l.neighbor_distance))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        core_model::save_checkpoint(&self.0, &path).map_err(py_err)
    }
}

#[pyclass(name = "Index", frozen)]
struct PyIndex(RetrievalIndex);

#[pymethods]
impl PyIndex {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        RetrievalIndex::load(&path).map(PyIndex).map_err(py_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    /// `k` nearest entries as `(frame_id, distance, pose)`.
    #[pyo3(signature = (embedding, k = 1))]
    fn query(&self, embedding: Vec<f64>, k: usize) -> PyResult<Vec<(String, f64, PyPose)>> {
        let hits = self.0.query_knn(&embedding, k).map_err(py_err)?;
        Ok(hits
            .into_iter()
            .map(|n| (n.entry.frame_id.clone(), n.distance, PyPose(*n.entry.pose())))
            .collect())
    }
}

#[pyfunction]
#[pyo3(signature = (out, seed = 0, frames = 500, queries = 100, orbit = false))]
fn synth(py: Python<'_>, out: PathBuf, seed: u64, frames: usize, queries: usize, orbit: bool) -> PyResult<usize> {
    let config = SyntheticSceneConfig {
        seed,
        n_database: frames,
        n_query: queries,
        trajectory: if orbit { Trajectory::Orbit } else { Trajectory::Scatter },
        ..Default::default()
    };
    py.detach(|| workflow::synth(&config, &out)).map_err(py_err)
}

/// Returns `(frames, pairs, quadruplets)`.
#[pyfunction]
#[pyo3(signature = (scene, out, seed = 0, min_overlap = 0.3))]
fn mine(py: Python<'_>, scene: PathBuf, out: PathBuf, seed: u64, min_overlap: f64) -> PyResult<(usize, usize, usize)> {
    let opts = MineOptions {
        mining: MiningConfig { seed, ..Default::default() },
        min_overlap,
    };
    let s = py.detach(|| workflow::mine(&scene, &out, &opts)).map_err(py_err)?;
    Ok((s.frames, s.pairs, s.quadruplets))
}

/// Runs one training phase with the desk schedule and returns the
/// per-epoch loss curve.
#[pyfunction]
#[pyo3(signature = (scene, records, out, phase, variant = "PL", init = None, epochs = None, lr = None, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    scene: PathBuf,
    records: PathBuf,
    out: PathBuf,
    phase: &str,
    variant: &str,
    init: Option<PathBuf>,
    epochs: Option<usize>,
    lr: Option<f64>,
    seed: u64,
) -> PyResult<Vec<f64>> {
    let mut schedule = match phase {
        "pretrain" => TrainSchedule::desk_pretrain(),
        "finetune" => TrainSchedule::desk_finetune(),
        other => return Err(PyValueError::new_err(format!("unknown phase `{other}`"))),
    };
    schedule.seed = seed;
    if let Some(e) = epochs {
        schedule.epochs = e;
    }
    if let Some(lr) = lr {
        schedule.learning_rate = lr;
    }
    let variant: Variant = variant.parse().map_err(py_err)?;
    let req = TrainRequest {
        scene,
        records,
        schedule,
        loss: LossConfig { variant, ..Default::default() },
        encoder: EncoderConfig { seed, ..EncoderConfig::desk() },
        init_checkpoint: init,
        out_checkpoint: out,
    };
    let (_, meta) = py.detach(|| workflow::train(&req)).map_err(py_err)?;
    Ok(meta.loss_curve)
}

/// Indexes the train split; returns the entry count.
#[pyfunction]
fn build_index(py: Python<'_>, scene: PathBuf, checkpoint: PathBuf, out: PathBuf) -> PyResult<usize> {
    let index = py.detach(|| workflow::index(&scene, &checkpoint, &out)).map_err(py_err)?;
    Ok(index.len())
}

/// Evaluates the test split and returns the report as JSON text.
#[pyfunction]
fn evaluate(py: Python<'_>, scene: PathBuf, checkpoint: PathBuf, index: PathBuf, out: PathBuf) -> PyResult<String> {
    let outcome = py.detach(|| workflow::eval(&scene, &checkpoint, &index, &out)).map_err(py_err)?;
    Ok(outcome.report.to_json())
}

#[pymodule]
fn reloc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPose>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyIndex>()?;
    m.add_function(wrap_pyfunction!(relative_pose, m)?)?;
    m.add_function(wrap_pyfunction!(compose_absolute, m)?)?;
    m.add_function(wrap_pyfunction!(angular_distance, m)?)?;
    m.add_function(wrap_pyfunction!(frustum_overlap, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(mine, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(build_index, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add("VARIANTS", Variant::ALL.to_vec())?;
    Ok(())
}
