//! Layerwise pretraining, distilled fine-tuning, localization and evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::{index::sample, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{RelocError, Result};
use crate::index::RetrievalIndex;
use crate::losses::{self, AuxLoss, LossConfig, Variant};
use crate::mining::TierStats;
use crate::model::{self, BoundModel, ModelParams, ParamGroup};
use crate::pose::{compose_absolute, Pose, RelativePose};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Finetune,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub phase: Phase,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// SGD momentum; 0 gives plain SGD.
    pub momentum: f64,
    /// Seeded subsample of the training set used for every epoch.
    pub max_samples: Option<usize>,
}

impl TrainSchedule {
    /// Synthetic-scene pretraining.
    pub fn desk_pretrain() -> Self {
        Self {
            phase: Phase::Pretrain,
            epochs: 50,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            batch_size: 32,
            seed: 0,
            momentum: 0.0,
            max_samples: Some(3000),
        }
    }

    /// Synthetic-scene fine-tuning.
    pub fn desk_finetune() -> Self {
        Self {
            phase: Phase::Finetune,
            epochs: 20,
            optimizer: OptimizerKind::Sgd,
            learning_rate: 1e-3,
            batch_size: 32,
            seed: 0,
            momentum: 0.0,
            max_samples: None,
        }
    }

    /// 300 epochs of Adam, lr 1e-4, batch 128.
    pub fn full_pretrain() -> Self {
        Self {
            phase: Phase::Pretrain,
            epochs: 300,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-4,
            batch_size: 128,
            seed: 0,
            momentum: 0.0,
            max_samples: None,
        }
    }

    /// 75 epochs of SGD, lr 1e-4, batch 128.
    pub fn full_finetune() -> Self {
        Self {
            phase: Phase::Finetune,
            epochs: 75,
            optimizer: OptimizerKind::Sgd,
            learning_rate: 1e-4,
            batch_size: 128,
            seed: 0,
            momentum: 0.0,
            max_samples: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(RelocError::Domain("epochs and batch size must be at least 1".into()));
        }
        // lr = 0 is accepted as a no-op run.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(RelocError::Domain(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(RelocError::Domain("momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update; `step` is 1-based.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
    cfg: &AdamConfig,
) {
    let c1 = 1.0 - cfg.beta1.powi(step as i32);
    let c2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// `p ← p − lr·(μ·vel + g)`; with `μ = 0` this is plain SGD.
pub fn sgd_update(params: &mut [f64], grads: &[f64], velocity: &mut [f64], momentum: f64, lr: f64) {
    for i in 0..params.len() {
        let step = if momentum > 0.0 {
            velocity[i] = momentum * velocity[i] + grads[i];
            velocity[i]
        } else {
            grads[i]
        };
        params[i] -= lr * step;
    }
}

/// Optimizer state shaped like the model. Tensors excluded by the mask are
/// never read or written.
pub struct Optimizer {
    kind: OptimizerKind,
    adam: AdamConfig,
    momentum: f64,
    first: ModelParams,
    second: ModelParams,
    step: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, like: &ModelParams, momentum: f64) -> Self {
        Self {
            kind,
            adam: AdamConfig::default(),
            momentum,
            first: like.zeros_like(),
            second: like.zeros_like(),
            step: 0,
        }
    }

    pub fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &ModelParams,
        lr: f64,
        mask: impl Fn(ParamGroup) -> bool,
    ) {
        self.step += 1;
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.first.tensors_mut())
            .zip(self.second.tensors_mut());
        for ((((group, p), (_, g)), (_, m)), (_, v)) in tensors {
            if !mask(group) {
                continue;
            }
            match self.kind {
                OptimizerKind::Adam => adam_update(p, g, m, v, self.step, lr, &self.adam),
                OptimizerKind::Sgd => sgd_update(p, g, m, self.momentum, lr),
            }
        }
    }
}

/// Encoder inputs of a (database, query) pair and their ground truth.
#[derive(Clone, Copy, Debug)]
pub struct PairSample<'a> {
    pub db: &'a [f64],
    pub query: &'a [f64],
    pub target: RelativePose,
}

/// Encoder inputs of a quadruplet and the anchor→easy relative pose.
#[derive(Clone, Copy, Debug)]
pub struct QuadSample<'a> {
    pub anchor: &'a [f64],
    pub easy: &'a [f64],
    pub medium: &'a [f64],
    pub hard: &'a [f64],
    pub easy_target: RelativePose,
    pub stats: TierStats,
}

/// Layerwise pose loss over all heads, evaluated without a tape.
pub fn pretrain_objective(params: &ModelParams, s: &PairSample, beta: f64) -> Result<f64> {
    let a = model::encode(params, s.db)?;
    let b = model::encode(params, s.query)?;
    let mut preds = Vec::with_capacity(a.embeddings.len());
    for k in 0..a.embeddings.len() {
        let out = params.pose_heads[k].forward(&[a.block(k), b.block(k)].concat());
        preds.push(out.try_into().expect("seven outputs"));
    }
    Ok(losses::pose_loss_layerwise(&preds, &s.target, beta))
}

/// Value and gradient of [`pretrain_objective`].
pub fn pretrain_gradient(params: &ModelParams, s: &PairSample, beta: f64) -> (f64, ModelParams) {
    let mut tape = Tape::new();
    let bound = BoundModel::bind(&mut tape, params, params.config.num_blocks());
    let xa = tape.leaf(s.db.to_vec());
    let xb = tape.leaf(s.query.to_vec());
    let ea = bound.encode(&mut tape, xa);
    let eb = bound.encode(&mut tape, xb);
    let mut total = None;
    for k in 0..bound.num_blocks() {
        let raw = bound.pose_head(&mut tape, k, ea[k], eb[k]);
        let l = losses::tape_pose_l1(&mut tape, raw, &s.target, beta);
        total = Some(match total {
            None => l,
            Some(acc) => tape.add(acc, l),
        });
    }
    let total = total.expect("at least one block");
    let grads = tape.backward(total);
    (tape.scalar(total), bound.gradient(&grads, params))
}

/// The pose and auxiliary terms of the fine-tuning objective, without a
/// tape. Auxiliary terms are averaged over the tiers they use.
pub fn finetune_terms(params: &ModelParams, s: &QuadSample, cfg: &LossConfig) -> Result<(f64, f64)> {
    let e = |x: &[f64]| -> Result<Vec<f64>> {
        Ok(model::encode_blocks(params, x, 1)?.embeddings.remove(0))
    };
    let (ea, ee, em, eh) = (e(s.anchor)?, e(s.easy)?, e(s.medium)?, e(s.hard)?);
    let raw = params.pose_heads[0].forward(&[ea.as_slice(), ee.as_slice()].concat());
    let l_pose = losses::pose_loss_layerwise(&[raw.try_into().expect("seven outputs")], &s.easy_target, cfg.beta);
    let st = &s.stats;
    let frustum_tiers = [(&ee, st.easy), (&em, st.medium), (&eh, st.hard)];
    let angle_tiers = [(&ee, st.easy), (&em, st.medium)];
    let l_aux = match cfg.variant.aux {
        AuxLoss::None => 0.0,
        AuxLoss::PredictFrustum => {
            let mut sum = 0.0;
            for (x, p) in frustum_tiers {
                let (d1, d2) = model::predict_frustum(params, &ea, x)?;
                sum += losses::predict_frustum_loss(d1, d2, p.d1, p.d2);
            }
            sum / 3.0
        }
        AuxLoss::EnforceFrustum => {
            frustum_tiers
                .iter()
                .map(|(x, p)| losses::enforce_frustum_loss(&ea, x, p.d1, p.d2))
                .sum::<f64>()
                / 3.0
        }
        AuxLoss::PredictAngle => {
            let mut sum = 0.0;
            for (x, p) in angle_tiers {
                sum += losses::predict_angle_loss(model::predict_angle(params, &ea, x)?, p.alpha);
            }
            sum / 2.0
        }
        AuxLoss::EnforceAngle => {
            angle_tiers
                .iter()
                .map(|(x, p)| losses::enforce_angle_loss(&ea, x, p.alpha))
                .sum::<f64>()
                / 2.0
        }
        AuxLoss::FrustumTriplet => {
            let mut l = losses::frustum_triplet_loss(&ea, &ee, &eh, cfg.margin);
            if cfg.dual_triplet {
                l += losses::frustum_triplet_loss(&ea, &em, &eh, cfg.margin);
            }
            l
        }
        AuxLoss::AngleTriplet => losses::angle_triplet_loss(&ea, &ee, &em, cfg.margin),
    };
    Ok((l_pose, l_aux))
}

/// Fine-tuning objective evaluated without a tape.
pub fn finetune_objective(params: &ModelParams, s: &QuadSample, cfg: &LossConfig) -> Result<f64> {
    let (l_pose, l_aux) = finetune_terms(params, s, cfg)?;
    Ok(if cfg.variant.homoscedastic {
        losses::combine_homoscedastic(l_pose, l_aux, params.log_vars[0], params.log_vars[1])
    } else {
        losses::combine_equal(l_pose, l_aux)
    })
}

/// Value and gradient of [`finetune_objective`].
pub fn finetune_gradient(params: &ModelParams, s: &QuadSample, cfg: &LossConfig) -> (f64, ModelParams) {
    let mut tape = Tape::new();
    let bound = BoundModel::bind(&mut tape, params, 1);
    let embed = |tape: &mut Tape<'_>, x: &[f64]| {
        let v = tape.leaf(x.to_vec());
        bound.encode(tape, v)[0]
    };
    let ea = embed(&mut tape, s.anchor);
    let ee = embed(&mut tape, s.easy);
    let em = embed(&mut tape, s.medium);
    let eh = embed(&mut tape, s.hard);
    let raw = bound.pose_head(&mut tape, 0, ea, ee);
    let l_pose = losses::tape_pose_l1(&mut tape, raw, &s.easy_target, cfg.beta);

    let st = &s.stats;
    let mean = |tape: &mut Tape<'_>, terms: Vec<crate::autodiff::Var>| {
        let n = terms.len() as f64;
        let mut acc = terms[0];
        for t in &terms[1..] {
            acc = tape.add(acc, *t);
        }
        tape.scale(acc, 1.0 / n)
    };
    let l_aux = match cfg.variant.aux {
        AuxLoss::None => None,
        AuxLoss::PredictFrustum => {
            let terms = [(ee, st.easy), (em, st.medium), (eh, st.hard)]
                .into_iter()
                .map(|(x, p)| {
                    let pred = bound.frustum(&mut tape, ea, x);
                    losses::tape_predict_frustum(&mut tape, pred, p.d1, p.d2)
                })
                .collect();
            Some(mean(&mut tape, terms))
        }
        AuxLoss::EnforceFrustum => {
            let terms = [(ee, st.easy), (em, st.medium), (eh, st.hard)]
                .into_iter()
                .map(|(x, p)| losses::tape_enforce_frustum(&mut tape, ea, x, p.d1, p.d2))
                .collect();
            Some(mean(&mut tape, terms))
        }
        AuxLoss::PredictAngle => {
            let terms = [(ee, st.easy), (em, st.medium)]
                .into_iter()
                .map(|(x, p)| {
                    let pred = bound.angle(&mut tape, ea, x);
                    losses::tape_predict_angle(&mut tape, pred, p.alpha)
                })
                .collect();
            Some(mean(&mut tape, terms))
        }
        AuxLoss::EnforceAngle => {
            let terms = [(ee, st.easy), (em, st.medium)]
                .into_iter()
                .map(|(x, p)| losses::tape_enforce_angle(&mut tape, ea, x, p.alpha))
                .collect();
            Some(mean(&mut tape, terms))
        }
        AuxLoss::FrustumTriplet => {
            let mut l = losses::tape_triplet(&mut tape, ea, ee, eh, cfg.margin);
            if cfg.dual_triplet {
                let second = losses::tape_triplet(&mut tape, ea, em, eh, cfg.margin);
                l = tape.add(l, second);
            }
            Some(l)
        }
        AuxLoss::AngleTriplet => Some(losses::tape_triplet(&mut tape, ea, ee, em, cfg.margin)),
    };
    let l_aux = l_aux.unwrap_or_else(|| tape.scalar_leaf(0.0));
    let total = if cfg.variant.homoscedastic {
        losses::tape_combine_homoscedastic(&mut tape, l_pose, l_aux, bound.pose_log_var, bound.aux_log_var)
    } else {
        losses::tape_combine_equal(&mut tape, l_pose, l_aux)
    };
    let grads = tape.backward(total);
    (tape.scalar(total), bound.gradient(&grads, params))
}

/// Parameters a fine-tuning variant may update.
pub fn finetune_mask(variant: Variant) -> impl Fn(ParamGroup) -> bool {
    move |g| match g {
        ParamGroup::Stage(k) | ParamGroup::PoseHead(k) => k == 0,
        ParamGroup::FrustumHead => variant.aux == AuxLoss::PredictFrustum,
        ParamGroup::AngleHead => variant.aux == AuxLoss::PredictAngle,
        ParamGroup::PoseLogVar | ParamGroup::AuxLogVar => variant.homoscedastic,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    /// Mean per-sample loss of each epoch, measured before each step.
    pub loss_curve: Vec<f64>,
    pub steps: usize,
}

/// Seeded subset of `0..n` of size at most `cap`, in ascending order.
fn subsample(n: usize, cap: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match cap {
        Some(c) if c < n => {
            let mut idx = sample(rng, n, c).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..n).collect(),
    }
}

/// Minibatch loop shared by both phases. Per-sample gradients are computed
/// in parallel and summed in sample order, so results do not depend on the
/// thread count.
fn run_epochs<S, G>(
    params: &mut ModelParams,
    samples: &[S],
    schedule: &TrainSchedule,
    mask: impl Fn(ParamGroup) -> bool + Copy,
    grad: G,
) -> Result<TrainOutcome>
where
    S: Sync,
    G: Fn(&ModelParams, &S) -> (f64, ModelParams) + Sync,
{
    schedule.validate()?;
    if samples.is_empty() {
        return Err(RelocError::Domain("no training samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let chosen = subsample(samples.len(), schedule.max_samples, &mut rng);
    let mut opt = Optimizer::new(schedule.optimizer, params, schedule.momentum);
    let mut loss_curve = Vec::with_capacity(schedule.epochs);
    let mut steps = 0;
    for epoch in 0..schedule.epochs {
        let mut order = chosen.clone();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(schedule.batch_size) {
            let current: &ModelParams = params;
            let per_sample: Vec<(f64, ModelParams)> = batch
                .par_iter()
                .map(|&i| grad(current, &samples[i]))
                .collect();
            let mut total = params.zeros_like();
            let scale = 1.0 / batch.len() as f64;
            for (loss, g) in &per_sample {
                epoch_loss += loss;
                total.add_scaled(g, scale);
            }
            if !total.is_finite() {
                return Err(RelocError::Domain(format!("non-finite gradient in epoch {}", epoch + 1)));
            }
            opt.step(params, &total, schedule.learning_rate, mask);
            steps += 1;
        }
        let mean = epoch_loss / order.len() as f64;
        log::info!("epoch {:>4}/{}: loss {mean:.6}", epoch + 1, schedule.epochs);
        loss_curve.push(mean);
    }
    Ok(TrainOutcome { loss_curve, steps })
}

/// Trains every block and pose head jointly on overlap pairs.
pub fn pretrain(
    params: &mut ModelParams,
    pairs: &[PairSample],
    schedule: &TrainSchedule,
    beta: f64,
) -> Result<TrainOutcome> {
    run_epochs(params, pairs, schedule, |_| true, |p, s| pretrain_gradient(p, s, beta))
}

/// Fine-tunes block 1, pose head 1 and whatever auxiliaries `cfg.variant`
/// uses; every other tensor is left bit-identical.
pub fn finetune(
    params: &mut ModelParams,
    quads: &[QuadSample],
    schedule: &TrainSchedule,
    cfg: &LossConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mask = finetune_mask(cfg.variant);
    run_epochs(params, quads, schedule, &mask, |p, s| finetune_gradient(p, s, cfg))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Localization {
    pub pose: Pose,
    pub neighbor_id: String,
    pub neighbor_pose: Pose,
    pub neighbor_distance: f64,
}

/// Retrieves the top-1 neighbour by block-1 embedding and composes the
/// head-1 relative pose onto it.
pub fn localize(params: &ModelParams, index: &RetrievalIndex, input: &[f64]) -> Result<Localization> {
    let e_q = model::encode_blocks(params, input, 1)?.embeddings.remove(0);
    let nn = index.nearest(&e_q)?;
    let e_db = nn.entry.embedding_f64();
    let rel = model::regress_relative_pose(params, 1, &e_db, &e_q)?;
    Ok(Localization {
        pose: compose_absolute(nn.entry.pose(), &rel.relative),
        neighbor_id: nn.entry.frame_id.clone(),
        neighbor_pose: *nn.entry.pose(),
        neighbor_distance: nn.distance,
    })
}

/// Builds an index of block-1 embeddings for `(id, input, pose)` frames.
pub fn build_index<'a>(
    params: &ModelParams,
    frames: impl IntoIterator<Item = (&'a str, &'a [f64], Pose)>,
) -> Result<RetrievalIndex> {
    let mut index = RetrievalIndex::new(params.config.block_dims[0])?;
    for (id, input, pose) in frames {
        let e = model::encode_blocks(params, input, 1)?.embeddings.remove(0);
        index.insert(crate::index::IndexEntry::new(id, &e, &pose)?)?;
    }
    Ok(index)
}

/// Median with the even-length rule: mean of the two middle values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MedianError {
    pub translation_m: f64,
    pub rotation_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneResult {
    pub scene: String,
    pub queries: usize,
    /// Top-1 neighbour's pose taken as the answer.
    pub retrieval: MedianError,
    /// Neighbour pose composed with the regressed relative pose.
    pub pipeline: MedianError,
}

/// Published reference numbers shown next to measured results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub method: String,
    pub setting: String,
    pub error: MedianError,
}

pub fn reference_rows() -> Vec<ReferenceRow> {
    vec![
        ReferenceRow {
            method: "NN-Net".into(),
            setting: "retrieval, 7-Scenes average".into(),
            error: MedianError {
                translation_m: 0.33,
                rotation_deg: 14.83,
            },
        },
        ReferenceRow {
            method: "NN-Net".into(),
            setting: "full pipeline, 7-Scenes average".into(),
            error: MedianError {
                translation_m: 0.21,
                rotation_deg: 9.30,
            },
        },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenes: Vec<SceneResult>,
    /// Unweighted mean of the per-scene medians.
    pub average_retrieval: MedianError,
    pub average_pipeline: MedianError,
    pub reference: Vec<ReferenceRow>,
}

/// A test frame: scene, encoder input and ground-truth pose.
#[derive(Clone, Copy, Debug)]
pub struct TestQuery<'a> {
    pub scene: &'a str,
    pub input: &'a [f64],
    pub gt: Pose,
}

pub fn evaluate(params: &ModelParams, index: &RetrievalIndex, queries: &[TestQuery]) -> Result<EvalReport> {
    let results: Vec<(f64, f64, f64, f64)> = queries
        .par_iter()
        .map(|q| {
            let loc = localize(params, index, q.input)?;
            Ok((
                loc.neighbor_pose.translation_error(&q.gt),
                loc.neighbor_pose.rotation_error_degrees(&q.gt),
                loc.pose.translation_error(&q.gt),
                loc.pose.rotation_error_degrees(&q.gt),
            ))
        })
        .collect::<Result<_>>()?;
    let mut by_scene: BTreeMap<&str, Vec<(f64, f64, f64, f64)>> = BTreeMap::new();
    for (q, r) in queries.iter().zip(results) {
        by_scene.entry(q.scene).or_default().push(r);
    }
    let scenes: Vec<SceneResult> = by_scene
        .into_iter()
        .map(|(scene, rows)| {
            let col = |f: fn(&(f64, f64, f64, f64)) -> f64| {
                median(&rows.iter().map(f).collect::<Vec<_>>()).expect("non-empty scene")
            };
            SceneResult {
                scene: scene.to_string(),
                queries: rows.len(),
                retrieval: MedianError {
                    translation_m: col(|r| r.0),
                    rotation_deg: col(|r| r.1),
                },
                pipeline: MedianError {
                    translation_m: col(|r| r.2),
                    rotation_deg: col(|r| r.3),
                },
            }
        })
        .collect();
    let average = |f: fn(&SceneResult) -> MedianError| {
        let n = scenes.len().max(1) as f64;
        MedianError {
            translation_m: scenes.iter().map(|s| f(s).translation_m).sum::<f64>() / n,
            rotation_deg: scenes.iter().map(|s| f(s).rotation_deg).sum::<f64>() / n,
        }
    };
    Ok(EvalReport {
        average_retrieval: average(|s| s.retrieval),
        average_pipeline: average(|s| s.pipeline),
        scenes,
        reference: reference_rows(),
    })
}

fn cell(e: &MedianError) -> String {
    format!("{:.3} m, {:.2}°", e.translation_m, e.rotation_deg)
}

impl EvalReport {
    /// Aligned text table: one row per scene, then the average and the
    /// reference rows.
    pub fn render_text(&self) -> String {
        let mut rows: Vec<[String; 4]> = vec![[
            "Scene".into(),
            "Queries".into(),
            "Retrieval only".into(),
            "Full pipeline".into(),
        ]];
        for s in &self.scenes {
            rows.push([
                s.scene.clone(),
                s.queries.to_string(),
                cell(&s.retrieval),
                cell(&s.pipeline),
            ]);
        }
        rows.push([
            "Average".into(),
            self.scenes.iter().map(|s| s.queries).sum::<usize>().to_string(),
            cell(&self.average_retrieval),
            cell(&self.average_pipeline),
        ]);
        let widths: Vec<usize> = (0..4)
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, r) in rows.iter().enumerate() {
            let line: Vec<String> = r
                .iter()
                .zip(&widths)
                .map(|(v, w)| format!("{v}{}", " ".repeat(w - v.chars().count())))
                .collect();
            writeln!(out, "{}", line.join("  ").trim_end()).unwrap();
            if i == 0 {
                writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 6)).unwrap();
            }
        }
        writeln!(out).unwrap();
        writeln!(out, "Reference (published, real data):").unwrap();
        for r in &self.reference {
            writeln!(out, "  {} ({}): {}", r.method, r.setting, cell(&r.error)).unwrap();
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
