//! Block-structured siamese encoder with per-block relative-pose heads.
//!
//! Stage `k` is `h_k = tanh(W_k h_{k-1} + b_k)` with `block_dims[k] * pool`
//! units; its embedding `e_k` is the mean over consecutive groups of `pool`
//! units. Pose head `k` maps `[e_db, e_q]` (length `2 * block_dims[k]`) to
//! seven raw values `[dt; q]`. The frustum and angle heads, as well as the
//! two homoscedastic log-variances, sit on block 1 and are only used while
//! fine-tuning the distilled model.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{affine_forward, avg_pool_forward, Gradients, Tape, Var};
use crate::error::{RelocError, Result};
use crate::pose::{RelativePose, UnitQuaternion};

pub const POSE_OUTPUTS: usize = 7;

/// Raw quaternion norms below this are reported instead of normalized.
pub const MIN_QUATERNION_NORM: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub block_dims: Vec<usize>,
    /// Units averaged into one embedding component.
    pub pool: usize,
    pub seed: u64,
}

impl EncoderConfig {
    /// Small configuration used for synthetic end-to-end runs. Block 1 keeps
    /// the 64-dimensional retrieval embedding.
    pub fn desk() -> Self {
        Self {
            input_dim: 64,
            block_dims: vec![64, 64, 64, 64],
            pool: 1,
            seed: 0,
        }
    }

    /// Block widths of the four ResNet34 residual stages.
    pub fn resnet_analog(input_dim: usize) -> Self {
        Self {
            input_dim,
            block_dims: vec![64, 128, 256, 512],
            pool: 2,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.pool == 0
            || self.block_dims.is_empty()
            || self.block_dims.contains(&0)
        {
            return Err(RelocError::Domain(format!("invalid encoder config {self:?}")));
        }
        Ok(())
    }

    pub fn num_blocks(&self) -> usize {
        self.block_dims.len()
    }

    fn stage_shape(&self, k: usize) -> (usize, usize) {
        let cols = if k == 0 {
            self.input_dim
        } else {
            self.block_dims[k - 1] * self.pool
        };
        (self.block_dims[k] * self.pool, cols)
    }

    /// Canonical text of the shape-defining fields.
    pub fn describe(&self) -> String {
        format!(
            "input_dim={};block_dims={:?};pool={};seed={}",
            self.input_dim, self.block_dims, self.pool, self.seed
        )
    }

    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.describe().as_bytes()).into()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows × cols`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Affine {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weight: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (cols as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        };
        let weight = draw(rows * cols);
        let bias = draw(rows);
        Self {
            rows,
            cols,
            weight,
            bias,
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        affine_forward(&self.weight, &self.bias, x)
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Which part of the model a tensor belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    /// Encoder stage (0-based).
    Stage(usize),
    /// Relative-pose head (0-based).
    PoseHead(usize),
    FrustumHead,
    AngleHead,
    PoseLogVar,
    AuxLogVar,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: EncoderConfig,
    pub stages: Vec<Affine>,
    pub pose_heads: Vec<Affine>,
    pub frustum_head: Affine,
    pub angle_head: Affine,
    /// `[β̂, γ̂]`: log-variance weights of the pose and auxiliary terms.
    pub log_vars: [f64; 2],
}

impl ModelParams {
    /// Seeded initialization, uniform in `±1/√fan_in`. Pose-head biases start
    /// at the identity relative pose and the log-variances at zero.
    pub fn init(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let stages = (0..config.num_blocks())
            .map(|k| {
                let (rows, cols) = config.stage_shape(k);
                Affine::uniform(rows, cols, &mut rng)
            })
            .collect();
        let pose_heads = config
            .block_dims
            .iter()
            .map(|d| {
                let mut head = Affine::uniform(POSE_OUTPUTS, 2 * d, &mut rng);
                head.bias = identity_pose_bias();
                head
            })
            .collect();
        let e1 = 2 * config.block_dims[0];
        let frustum_head = Affine::uniform(2, e1, &mut rng);
        let angle_head = Affine::uniform(1, e1, &mut rng);
        Ok(Self {
            config: config.clone(),
            stages,
            pose_heads,
            frustum_head,
            angle_head,
            log_vars: [0.0, 0.0],
        })
    }

    /// All-zero parameters with the shapes implied by `config`.
    pub fn zeros(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let e1 = 2 * config.block_dims[0];
        Ok(Self {
            config: config.clone(),
            stages: (0..config.num_blocks())
                .map(|k| {
                    let (r, c) = config.stage_shape(k);
                    Affine::zeros(r, c)
                })
                .collect(),
            pose_heads: config
                .block_dims
                .iter()
                .map(|d| Affine::zeros(POSE_OUTPUTS, 2 * d))
                .collect(),
            frustum_head: Affine::zeros(2, e1),
            angle_head: Affine::zeros(1, e1),
            log_vars: [0.0, 0.0],
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config).expect("config already validated")
    }

    /// Tensors in checkpoint order: stages (weight, bias), pose heads
    /// (weight, bias), frustum head, angle head, β̂, γ̂.
    pub fn tensors(&self) -> Vec<(ParamGroup, &[f64])> {
        let mut out: Vec<(ParamGroup, &[f64])> = Vec::new();
        for (k, s) in self.stages.iter().enumerate() {
            out.push((ParamGroup::Stage(k), &s.weight));
            out.push((ParamGroup::Stage(k), &s.bias));
        }
        for (k, h) in self.pose_heads.iter().enumerate() {
            out.push((ParamGroup::PoseHead(k), &h.weight));
            out.push((ParamGroup::PoseHead(k), &h.bias));
        }
        out.push((ParamGroup::FrustumHead, &self.frustum_head.weight));
        out.push((ParamGroup::FrustumHead, &self.frustum_head.bias));
        out.push((ParamGroup::AngleHead, &self.angle_head.weight));
        out.push((ParamGroup::AngleHead, &self.angle_head.bias));
        out.push((ParamGroup::PoseLogVar, &self.log_vars[0..1]));
        out.push((ParamGroup::AuxLogVar, &self.log_vars[1..2]));
        out
    }

    /// Mutable counterpart of [`ModelParams::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<(ParamGroup, &mut [f64])> {
        let mut out: Vec<(ParamGroup, &mut [f64])> = Vec::new();
        for (k, s) in self.stages.iter_mut().enumerate() {
            out.push((ParamGroup::Stage(k), &mut s.weight));
            out.push((ParamGroup::Stage(k), &mut s.bias));
        }
        for (k, h) in self.pose_heads.iter_mut().enumerate() {
            out.push((ParamGroup::PoseHead(k), &mut h.weight));
            out.push((ParamGroup::PoseHead(k), &mut h.bias));
        }
        out.push((ParamGroup::FrustumHead, &mut self.frustum_head.weight));
        out.push((ParamGroup::FrustumHead, &mut self.frustum_head.bias));
        out.push((ParamGroup::AngleHead, &mut self.angle_head.weight));
        out.push((ParamGroup::AngleHead, &mut self.angle_head.bias));
        let (pose, aux) = self.log_vars.split_at_mut(1);
        out.push((ParamGroup::PoseLogVar, pose));
        out.push((ParamGroup::AuxLogVar, aux));
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Encoder stages plus pose heads across all blocks.
    pub fn full_model_params(&self) -> usize {
        self.stages.iter().map(Affine::num_params).sum::<usize>()
            + self.pose_heads.iter().map(Affine::num_params).sum::<usize>()
    }

    /// Block 1 and pose head 1: what remains after distillation.
    pub fn distilled_model_params(&self) -> usize {
        self.stages[0].num_params() + self.pose_heads[0].num_params()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    /// Sum of squares of the tensors belonging to `groups`.
    pub fn squared_norm_where(&self, keep: impl Fn(ParamGroup) -> bool) -> f64 {
        self.tensors()
            .into_iter()
            .filter(|(g, _)| keep(*g))
            .map(|(_, t)| t.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }
}

fn identity_pose_bias() -> Vec<f64> {
    vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStack {
    pub embeddings: Vec<Vec<f64>>,
}

impl EmbeddingStack {
    /// Block-1 embedding, the retrieval vector.
    pub fn retrieval(&self) -> &[f64] {
        &self.embeddings[0]
    }

    pub fn block(&self, k: usize) -> &[f64] {
        &self.embeddings[k]
    }
}

/// Raw seven-value head output and its normalized relative pose.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseRegression {
    pub raw: [f64; POSE_OUTPUTS],
    pub relative: RelativePose,
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(RelocError::ShapeMismatch { expected, actual })
    }
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

/// Runs all encoder stages.
pub fn encode(params: &ModelParams, input: &[f64]) -> Result<EmbeddingStack> {
    encode_blocks(params, input, params.config.num_blocks())
}

/// Runs the first `blocks` stages only; `e_k` depends on stages `1..=k`.
pub fn encode_blocks(params: &ModelParams, input: &[f64], blocks: usize) -> Result<EmbeddingStack> {
    check_len(params.config.input_dim, input.len())?;
    if input.iter().any(|v| !v.is_finite()) {
        return Err(RelocError::Domain("non-finite encoder input".into()));
    }
    let mut h = input.to_vec();
    let mut embeddings = Vec::with_capacity(blocks);
    for stage in params.stages.iter().take(blocks) {
        h = stage.forward(&h).into_iter().map(f64::tanh).collect();
        embeddings.push(avg_pool_forward(&h, params.config.pool));
    }
    Ok(EmbeddingStack { embeddings })
}

/// Head `head` (1-based) applied to `[e_db, e_q]`.
pub fn regress_relative_pose(
    params: &ModelParams,
    head: usize,
    e_db: &[f64],
    e_q: &[f64],
) -> Result<PoseRegression> {
    if head == 0 || head > params.pose_heads.len() {
        return Err(RelocError::Domain(format!(
            "pose head {head} not in 1..={}",
            params.pose_heads.len()
        )));
    }
    let dim = params.config.block_dims[head - 1];
    check_len(dim, e_db.len())?;
    check_len(dim, e_q.len())?;
    let out = params.pose_heads[head - 1].forward(&concat(e_db, e_q));
    let raw: [f64; POSE_OUTPUTS] = out.try_into().expect("pose head has seven outputs");
    Ok(PoseRegression {
        raw,
        relative: relative_from_raw(&raw)?,
    })
}

/// Normalizes the quaternion part of a raw head output.
pub fn relative_from_raw(raw: &[f64; POSE_OUTPUTS]) -> Result<RelativePose> {
    let qn = (raw[3] * raw[3] + raw[4] * raw[4] + raw[5] * raw[5] + raw[6] * raw[6]).sqrt();
    if !(qn >= MIN_QUATERNION_NORM) {
        return Err(RelocError::DegenerateQuaternion(qn));
    }
    Ok(RelativePose {
        dt: [raw[0], raw[1], raw[2]],
        dq: UnitQuaternion::new(raw[3], raw[4], raw[5], raw[6])?,
    })
}

/// `(d̂1, d̂2)` for a pair of block-1 embeddings.
pub fn predict_frustum(params: &ModelParams, e_a: &[f64], e_b: &[f64]) -> Result<(f64, f64)> {
    let dim = params.config.block_dims[0];
    check_len(dim, e_a.len())?;
    check_len(dim, e_b.len())?;
    let out = params.frustum_head.forward(&concat(e_a, e_b));
    Ok((out[0], out[1]))
}

/// `α̂` for a pair of block-1 embeddings.
pub fn predict_angle(params: &ModelParams, e_a: &[f64], e_b: &[f64]) -> Result<f64> {
    let dim = params.config.block_dims[0];
    check_len(dim, e_a.len())?;
    check_len(dim, e_b.len())?;
    Ok(params.angle_head.forward(&concat(e_a, e_b))[0])
}

#[derive(Clone, Copy, Debug)]
struct BoundAffine {
    w: Var,
    b: Var,
    rows: usize,
    cols: usize,
}

impl BoundAffine {
    fn bind<'p>(tape: &mut Tape<'p>, a: &'p Affine) -> Self {
        Self {
            w: tape.leaf_ref(&a.weight),
            b: tape.leaf_ref(&a.bias),
            rows: a.rows,
            cols: a.cols,
        }
    }

    fn apply(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        tape.affine(self.w, self.b, x, self.rows, self.cols)
    }
}

/// Model parameters registered as leaves on a [`Tape`].
pub struct BoundModel {
    pool: usize,
    stages: Vec<BoundAffine>,
    pose_heads: Vec<BoundAffine>,
    frustum_head: BoundAffine,
    angle_head: BoundAffine,
    pub pose_log_var: Var,
    pub aux_log_var: Var,
}

impl BoundModel {
    /// Binds the first `blocks` stages and heads plus the block-1 auxiliaries.
    pub fn bind<'p>(tape: &mut Tape<'p>, params: &'p ModelParams, blocks: usize) -> Self {
        let blocks = blocks.min(params.config.num_blocks());
        Self {
            pool: params.config.pool,
            stages: params.stages[..blocks]
                .iter()
                .map(|s| BoundAffine::bind(tape, s))
                .collect(),
            pose_heads: params.pose_heads[..blocks]
                .iter()
                .map(|h| BoundAffine::bind(tape, h))
                .collect(),
            frustum_head: BoundAffine::bind(tape, &params.frustum_head),
            angle_head: BoundAffine::bind(tape, &params.angle_head),
            pose_log_var: tape.leaf_ref(&params.log_vars[0..1]),
            aux_log_var: tape.leaf_ref(&params.log_vars[1..2]),
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.stages.len()
    }

    /// Per-block embeddings of `input`.
    pub fn encode(&self, tape: &mut Tape<'_>, input: Var) -> Vec<Var> {
        let mut h = input;
        self.stages
            .iter()
            .map(|stage| {
                let z = stage.apply(tape, h);
                h = tape.tanh(z);
                tape.avg_pool(h, self.pool)
            })
            .collect()
    }

    /// Raw seven-value output of pose head `k` (0-based).
    pub fn pose_head(&self, tape: &mut Tape<'_>, k: usize, e_db: Var, e_q: Var) -> Var {
        let x = tape.concat(e_db, e_q);
        self.pose_heads[k].apply(tape, x)
    }

    pub fn frustum(&self, tape: &mut Tape<'_>, e_a: Var, e_b: Var) -> Var {
        let x = tape.concat(e_a, e_b);
        self.frustum_head.apply(tape, x)
    }

    pub fn angle(&self, tape: &mut Tape<'_>, e_a: Var, e_b: Var) -> Var {
        let x = tape.concat(e_a, e_b);
        self.angle_head.apply(tape, x)
    }

    /// Scatters tape gradients into a parameter-shaped gradient; anything not
    /// bound or not reached stays zero.
    pub fn gradient(&self, grads: &Gradients, like: &ModelParams) -> ModelParams {
        let mut out = like.zeros_like();
        let copy = |dst: &mut Vec<f64>, v: Var| {
            if let Some(g) = grads.get(v) {
                dst.copy_from_slice(g);
            }
        };
        for (dst, b) in out.stages.iter_mut().zip(&self.stages) {
            copy(&mut dst.weight, b.w);
            copy(&mut dst.bias, b.b);
        }
        for (dst, b) in out.pose_heads.iter_mut().zip(&self.pose_heads) {
            copy(&mut dst.weight, b.w);
            copy(&mut dst.bias, b.b);
        }
        copy(&mut out.frustum_head.weight, self.frustum_head.w);
        copy(&mut out.frustum_head.bias, self.frustum_head.b);
        copy(&mut out.angle_head.weight, self.angle_head.w);
        copy(&mut out.angle_head.bias, self.angle_head.b);
        if let Some(g) = grads.get(self.pose_log_var) {
            out.log_vars[0] = g[0];
        }
        if let Some(g) = grads.get(self.aux_log_var) {
            out.log_vars[1] = g[0];
        }
        out
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"RFCK";
const CHECKPOINT_VERSION: u32 = 1;

/// Writes a checkpoint:
///
/// ```text
/// "RFCK" | u32 version | u32 input_dim | u32 pool | u32 n_blocks
///        | n_blocks × u32 block_dim | u64 seed | [u8; 32] sha256(config)
///        | u64 param_count | param_count × f32
/// ```
///
/// All integers and floats are little-endian; floats follow
/// [`ModelParams::tensors`] order.
pub fn write_checkpoint<W: Write>(params: &ModelParams, mut out: W) -> std::io::Result<()> {
    let c = &params.config;
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(c.input_dim as u32).to_le_bytes())?;
    out.write_all(&(c.pool as u32).to_le_bytes())?;
    out.write_all(&(c.block_dims.len() as u32).to_le_bytes())?;
    for d in &c.block_dims {
        out.write_all(&(*d as u32).to_le_bytes())?;
    }
    out.write_all(&c.seed.to_le_bytes())?;
    out.write_all(&c.digest())?;
    out.write_all(&(params.num_params() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(params.num_params() * 4);
    for (_, t) in params.tensors() {
        for v in t {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    out.flush()
}

pub fn read_checkpoint<R: Read>(mut input: R) -> std::io::Result<ModelParams> {
    use std::io::{Error, ErrorKind};
    let bad = |m: &str| Error::new(ErrorKind::InvalidData, m.to_string());
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = read_u32(&mut input)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let input_dim = read_u32(&mut input)? as usize;
    let pool = read_u32(&mut input)? as usize;
    let n_blocks = read_u32(&mut input)? as usize;
    if n_blocks > 64 {
        return Err(bad("implausible block count"));
    }
    let block_dims = (0..n_blocks)
        .map(|_| read_u32(&mut input).map(|d| d as usize))
        .collect::<std::io::Result<Vec<_>>>()?;
    let mut seed = [0u8; 8];
    input.read_exact(&mut seed)?;
    let config = EncoderConfig {
        input_dim,
        block_dims,
        pool,
        seed: u64::from_le_bytes(seed),
    };
    let mut digest = [0u8; 32];
    input.read_exact(&mut digest)?;
    if digest != config.digest() {
        return Err(bad("config digest mismatch"));
    }
    let mut params = ModelParams::zeros(&config).map_err(|e| bad(&e.to_string()))?;
    let mut count = [0u8; 8];
    input.read_exact(&mut count)?;
    if u64::from_le_bytes(count) != params.num_params() as u64 {
        return Err(bad("parameter count does not match config"));
    }
    let mut buf = vec![0u8; params.num_params() * 4];
    input.read_exact(&mut buf)?;
    let mut values = buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
    for (_, t) in params.tensors_mut() {
        for v in t.iter_mut() {
            *v = values.next().expect("length checked");
        }
    }
    if !params.is_finite() {
        return Err(bad("non-finite parameter"));
    }
    Ok(params)
}

fn read_u32<R: Read>(input: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| RelocError::io(path, e))?;
    write_checkpoint(params, std::io::BufWriter::new(file)).map_err(|e| RelocError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let file = std::fs::File::open(path).map_err(|e| RelocError::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file)).map_err(|e| match e.kind() {
        std::io::ErrorKind::InvalidData | std::io::ErrorKind::UnexpectedEof => {
            RelocError::format(path, e.to_string())
        }
        _ => RelocError::io(path, e),
    })
}

/// Rounds every parameter through `f32`, matching what a checkpoint stores.
pub fn round_to_f32(params: &mut ModelParams) {
    for (_, t) in params.tensors_mut() {
        for v in t.iter_mut() {
            *v = *v as f32 as f64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> EncoderConfig {
        EncoderConfig {
            input_dim: 6,
            block_dims: vec![3, 4, 2, 5],
            pool: 2,
            seed: 42,
        }
    }

    fn input(n: usize) -> Vec<f64> {
        (0..n).map(|i| ((i as f64) * 0.7).sin()).collect()
    }

    #[test]
    fn zero_params_give_zero_embeddings() {
        let params = ModelParams::zeros(&small()).unwrap();
        let e = encode(&params, &input(6)).unwrap();
        assert_eq!(e.embeddings.len(), 4);
        assert!(e.embeddings.iter().flatten().all(|v| *v == 0.0));
        assert_eq!(e.block(3).len(), 5);
    }

    #[test]
    fn encoding_is_deterministic() {
        let a = ModelParams::init(&small()).unwrap();
        let b = ModelParams::init(&small()).unwrap();
        assert_eq!(a, b);
        let x = input(6);
        let ea = encode(&a, &x).unwrap();
        let eb = encode(&b, &x).unwrap();
        for (u, v) in ea.embeddings.iter().flatten().zip(eb.embeddings.iter().flatten()) {
            assert_eq!(u.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn later_stages_do_not_affect_earlier_embeddings() {
        let base = ModelParams::init(&small()).unwrap();
        let mut perturbed = base.clone();
        perturbed.stages[2].weight[1] += 0.5;
        let x = input(6);
        let e0 = encode(&base, &x).unwrap();
        let e1 = encode(&perturbed, &x).unwrap();
        assert_eq!(e0.block(0), e1.block(0));
        assert_eq!(e0.block(1), e1.block(1));
        assert_ne!(e0.block(2), e1.block(2));
    }

    #[test]
    fn shape_errors() {
        let params = ModelParams::init(&small()).unwrap();
        assert!(matches!(
            encode(&params, &input(5)),
            Err(RelocError::ShapeMismatch { expected: 6, actual: 5 })
        ));
        assert!(matches!(
            predict_frustum(&params, &[0.0; 2], &[0.0; 3]),
            Err(RelocError::ShapeMismatch { .. })
        ));
        assert!(regress_relative_pose(&params, 5, &[0.0; 5], &[0.0; 5]).is_err());
        assert!(ModelParams::init(&EncoderConfig {
            block_dims: vec![],
            ..small()
        })
        .is_err());
    }

    #[test]
    fn identity_bias_head_predicts_identity() {
        let mut params = ModelParams::zeros(&small()).unwrap();
        params.pose_heads[0].bias = identity_pose_bias();
        let r = regress_relative_pose(&params, 1, &[0.3, 0.1, -0.2], &[0.0, 0.5, 0.9]).unwrap();
        assert_eq!(r.relative, RelativePose::IDENTITY);
        assert_eq!(r.raw, [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn degenerate_quaternion_is_reported() {
        let params = ModelParams::zeros(&small()).unwrap();
        assert!(matches!(
            regress_relative_pose(&params, 1, &[0.0; 3], &[0.0; 3]),
            Err(RelocError::DegenerateQuaternion(_))
        ));
    }

    #[test]
    fn head_is_not_symmetric_in_its_inputs() {
        let params = ModelParams::init(&small()).unwrap();
        let (a, b) = ([0.3, 0.1, -0.2], [0.0, 0.5, 0.9]);
        let ab = regress_relative_pose(&params, 1, &a, &b).unwrap();
        let ba = regress_relative_pose(&params, 1, &b, &a).unwrap();
        assert_ne!(ab.raw, ba.raw);
    }

    #[test]
    fn head_input_widths_are_twice_block_widths() {
        let params = ModelParams::init(&EncoderConfig::resnet_analog(32)).unwrap();
        let widths: Vec<usize> = params.pose_heads.iter().map(|h| h.cols).collect();
        assert_eq!(widths, vec![128, 256, 512, 1024]);
    }

    #[test]
    fn zero_weight_auxiliary_heads_return_their_bias() {
        let mut params = ModelParams::zeros(&small()).unwrap();
        params.frustum_head.bias = vec![0.25, 0.75];
        params.angle_head.bias = vec![0.4];
        let e = [0.2, -0.1, 0.3];
        assert_eq!(predict_frustum(&params, &e, &e).unwrap(), (0.25, 0.75));
        assert_eq!(predict_angle(&params, &e, &[0.0; 3]).unwrap(), 0.4);
    }

    #[test]
    fn antisymmetric_head_on_equal_inputs_is_finite() {
        let mut params = ModelParams::init(&small()).unwrap();
        let d = params.config.block_dims[0];
        for r in 0..2 {
            for c in 0..d {
                let w = params.frustum_head.weight[r * 2 * d + c];
                params.frustum_head.weight[r * 2 * d + d + c] = -w;
            }
        }
        let e = [0.4, -0.2, 0.1];
        let (a, b) = predict_frustum(&params, &e, &e).unwrap();
        assert!(a.is_finite() && b.is_finite());
        assert!((a - params.frustum_head.bias[0]).abs() < 1e-12);
    }

    #[test]
    fn tape_forward_matches_plain_forward() {
        let params = ModelParams::init(&small()).unwrap();
        let x = input(6);
        let plain = encode(&params, &x).unwrap();
        let mut tape = Tape::new();
        let bound = BoundModel::bind(&mut tape, &params, 4);
        let xv = tape.leaf(x.clone());
        let embs = bound.encode(&mut tape, xv);
        for (k, e) in embs.iter().enumerate() {
            assert_eq!(tape.value(*e), plain.block(k));
        }
        let raw = bound.pose_head(&mut tape, 1, embs[1], embs[1]);
        let expected = regress_relative_pose(&params, 2, plain.block(1), plain.block(1)).unwrap();
        assert_eq!(tape.value(raw), &expected.raw);
    }

    #[test]
    fn block_locality_of_gradients() {
        let params = ModelParams::init(&small()).unwrap();
        let mut tape = Tape::new();
        let bound = BoundModel::bind(&mut tape, &params, 4);
        let x = tape.leaf(input(6));
        let embs = bound.encode(&mut tape, x);
        let s = tape.sum(embs[1]);
        let g = bound.gradient(&tape.backward(s), &params);
        assert!(g.stages[1].weight.iter().any(|v| *v != 0.0));
        assert!(g.stages[2].weight.iter().all(|v| *v == 0.0));
        assert!(g.stages[3].weight.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut params = ModelParams::init(&small()).unwrap();
        params.log_vars = [0.5, -0.25];
        let mut bytes = Vec::new();
        write_checkpoint(&params, &mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"RFCK");
        let back = read_checkpoint(bytes.as_slice()).unwrap();
        let mut rounded = params.clone();
        round_to_f32(&mut rounded);
        assert_eq!(back, rounded);

        let mut again = Vec::new();
        write_checkpoint(&back, &mut again).unwrap();
        assert_eq!(bytes, again);

        let mut corrupt = bytes.clone();
        corrupt[12] ^= 1;
        assert!(read_checkpoint(corrupt.as_slice()).is_err());
        assert!(read_checkpoint(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn parameter_counts() {
        let params = ModelParams::init(&small()).unwrap();
        let stage0 = 6 * 6 + 6;
        let head0 = 7 * 6 + 7;
        assert_eq!(params.distilled_model_params(), stage0 + head0);
        assert!(params.full_model_params() > params.distilled_model_params());
        assert_eq!(
            params.num_params(),
            params.full_model_params() + (2 * 6 + 2) + (6 + 1) + 2
        );
    }
}
