//! File-based pipeline stages: synth → mine → train → index → eval.
//!
//! Each stage reads and writes plain files so stages can run as separate
//! processes. Outputs depend only on the inputs and the seed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{generate_synthetic_scene, Scene, Split, SyntheticSceneConfig};
use crate::error::{RelocError, Result};
use crate::index::RetrievalIndex;
use crate::losses::LossConfig;
use crate::mining::{
    mine_overlap_pairs, mine_quadruplets, read_jsonl, write_jsonl, MiningConfig, MiningHeader,
    OverlapPair, Quadruplet,
};
use crate::model::{load_checkpoint, save_checkpoint, EncoderConfig, ModelParams};
use crate::pose::{relative_pose, Pose};
use crate::train::{
    self, EvalReport, Localization, PairSample, Phase, QuadSample, TestQuery, TrainOutcome,
    TrainSchedule,
};

pub const PAIRS_FILE: &str = "pairs.jsonl";
pub const QUADRUPLETS_FILE: &str = "quadruplets.jsonl";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const REPORT_JSON_FILE: &str = "report.json";

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| RelocError::io(path, e))
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| RelocError::io(path, e))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes a synthetic scene to `out`.
pub fn synth(config: &SyntheticSceneConfig, out: &Path) -> Result<usize> {
    let scene = generate_synthetic_scene(config)?;
    ensure_dir(out)?;
    scene.write(out)?;
    Ok(scene.frames.len())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MineOptions {
    pub mining: MiningConfig,
    pub min_overlap: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MineSummary {
    pub frames: usize,
    pub pairs: usize,
    pub quadruplets: usize,
}

/// Mines the training split into `pairs.jsonl` and `quadruplets.jsonl`.
pub fn mine(scene_root: &Path, out: &Path, opts: &MineOptions) -> Result<MineSummary> {
    let scene = Scene::load(scene_root)?;
    let frames = scene.frames_of(Split::Train);
    let load = |f: &crate::mining::Frame| scene.load_depth(f);
    let pairs = mine_overlap_pairs(&frames, opts.min_overlap, opts.mining.stride, load)?;
    let quads = mine_quadruplets(&frames, &opts.mining, load)?;
    ensure_dir(out)?;
    let header = |kind: &str| MiningHeader {
        kind: kind.into(),
        thresholds: opts.mining.thresholds,
        stride: opts.mining.stride,
        seed: opts.mining.seed,
        min_overlap: opts.min_overlap,
        per_anchor_cap: opts.mining.per_anchor_cap,
    };
    write_jsonl(&out.join(PAIRS_FILE), &header("pairs"), &pairs)?;
    write_jsonl(&out.join(QUADRUPLETS_FILE), &header("quadruplets"), &quads)?;
    Ok(MineSummary {
        frames: frames.len(),
        pairs: pairs.len(),
        quadruplets: quads.len(),
    })
}

/// Poses and encoder inputs of every frame in a scene.
pub struct LoadedScene {
    pub scene: Scene,
    pub inputs: BTreeMap<String, Vec<f64>>,
    pub poses: BTreeMap<String, Pose>,
}

impl LoadedScene {
    pub fn load(root: &Path) -> Result<Self> {
        let scene = Scene::load(root)?;
        let inputs = scene.load_inputs()?;
        let poses = scene
            .frames
            .iter()
            .map(|f| (f.frame.id.clone(), f.frame.pose))
            .collect();
        Ok(Self {
            scene,
            inputs,
            poses,
        })
    }

    fn input(&self, id: &str) -> Result<&[f64]> {
        self.inputs
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| RelocError::Domain(format!("unknown frame id {id}")))
    }

    fn pose(&self, id: &str) -> Result<Pose> {
        self.poses
            .get(id)
            .copied()
            .ok_or_else(|| RelocError::Domain(format!("unknown frame id {id}")))
    }

    pub fn pair_samples<'a>(&'a self, pairs: &[OverlapPair]) -> Result<Vec<PairSample<'a>>> {
        pairs
            .iter()
            .map(|p| {
                Ok(PairSample {
                    db: self.input(&p.db)?,
                    query: self.input(&p.query)?,
                    target: relative_pose(&self.pose(&p.db)?, &self.pose(&p.query)?),
                })
            })
            .collect()
    }

    pub fn quad_samples<'a>(&'a self, quads: &[Quadruplet]) -> Result<Vec<QuadSample<'a>>> {
        quads
            .iter()
            .map(|q| {
                Ok(QuadSample {
                    anchor: self.input(&q.anchor)?,
                    easy: self.input(&q.easy)?,
                    medium: self.input(&q.medium)?,
                    hard: self.input(&q.hard)?,
                    easy_target: relative_pose(&self.pose(&q.anchor)?, &self.pose(&q.easy)?),
                    stats: q.stats,
                })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRequest {
    pub scene: PathBuf,
    /// `pairs.jsonl` for pretraining, `quadruplets.jsonl` for fine-tuning.
    pub records: PathBuf,
    pub schedule: TrainSchedule,
    pub loss: LossConfig,
    /// Used when no initial checkpoint is given.
    pub encoder: EncoderConfig,
    pub init_checkpoint: Option<PathBuf>,
    pub out_checkpoint: PathBuf,
}

/// Everything needed to reproduce a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub phase: Phase,
    pub seed: u64,
    pub config_digest: String,
    pub encoder: EncoderConfig,
    pub variant: String,
    pub beta: f64,
    pub margin: f64,
    pub dual_triplet: bool,
    pub schedule: TrainSchedule,
    pub samples: usize,
    pub mining: Option<MiningHeader>,
    pub full_model_params: usize,
    pub distilled_model_params: usize,
    pub loss_curve: Vec<f64>,
}

fn ensure_parent(file: &Path) -> Result<()> {
    match file.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => ensure_dir(dir),
        _ => Ok(()),
    }
}

pub fn metadata_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("meta.json")
}

pub fn train(req: &TrainRequest) -> Result<(ModelParams, RunMetadata)> {
    let data = LoadedScene::load(&req.scene)?;
    let mut params = match &req.init_checkpoint {
        Some(p) => load_checkpoint(p)?,
        None if req.schedule.phase == Phase::Finetune => {
            return Err(RelocError::Domain(
                "fine-tuning needs a pretrained checkpoint".into(),
            ))
        }
        None => ModelParams::init(&req.encoder)?,
    };
    let (header, outcome, samples): (Option<MiningHeader>, TrainOutcome, usize) =
        match req.schedule.phase {
            Phase::Pretrain => {
                let (header, pairs) = read_jsonl::<OverlapPair>(&req.records)?;
                let samples = data.pair_samples(&pairs)?;
                let out = train::pretrain(&mut params, &samples, &req.schedule, req.loss.beta)?;
                (header, out, samples.len())
            }
            Phase::Finetune => {
                let (header, quads) = read_jsonl::<Quadruplet>(&req.records)?;
                let samples = data.quad_samples(&quads)?;
                let out = train::finetune(&mut params, &samples, &req.schedule, &req.loss)?;
                (header, out, samples.len())
            }
        };
    ensure_parent(&req.out_checkpoint)?;
    save_checkpoint(&params, &req.out_checkpoint)?;
    let meta = RunMetadata {
        phase: req.schedule.phase,
        seed: req.schedule.seed,
        config_digest: hex(&params.config.digest()),
        encoder: params.config.clone(),
        variant: req.loss.variant.to_string(),
        beta: req.loss.beta,
        margin: req.loss.margin,
        dual_triplet: req.loss.dual_triplet,
        schedule: req.schedule,
        samples,
        mining: header,
        full_model_params: params.full_model_params(),
        distilled_model_params: params.distilled_model_params(),
        loss_curve: outcome.loss_curve,
    };
    write_text(
        &metadata_path(&req.out_checkpoint),
        &serde_json::to_string_pretty(&meta)?,
    )?;
    // Continue from exactly what was saved.
    Ok((load_checkpoint(&req.out_checkpoint)?, meta))
}

/// Indexes the training split with block-1 embeddings.
pub fn index(scene_root: &Path, checkpoint: &Path, out: &Path) -> Result<RetrievalIndex> {
    let data = LoadedScene::load(scene_root)?;
    let params = load_checkpoint(checkpoint)?;
    let frames: Vec<(&str, &[f64], Pose)> = data
        .scene
        .split(Split::Train)
        .map(|f| {
            Ok((
                f.frame.id.as_str(),
                data.input(&f.frame.id)?,
                f.frame.pose,
            ))
        })
        .collect::<Result<_>>()?;
    let index = train::build_index(&params, frames)?;
    ensure_parent(out)?;
    index.save(out)?;
    Ok(index)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOutcome {
    pub report: EvalReport,
    /// Wall-clock time per query, informational only.
    pub seconds_per_query: f64,
}

/// Evaluates the test split and writes `report.txt` and `report.json`.
pub fn eval(scene_root: &Path, checkpoint: &Path, index_path: &Path, out: &Path) -> Result<EvalOutcome> {
    let data = LoadedScene::load(scene_root)?;
    let params = load_checkpoint(checkpoint)?;
    let index = RetrievalIndex::load(index_path)?;
    let scene_name = data.scene.manifest.scene.clone();
    let queries: Vec<TestQuery> = data
        .scene
        .split(Split::Test)
        .map(|f| {
            Ok(TestQuery {
                scene: &scene_name,
                input: data.input(&f.frame.id)?,
                gt: f.frame.pose,
            })
        })
        .collect::<Result<_>>()?;
    if queries.is_empty() {
        return Err(RelocError::Domain("scene has no test frames".into()));
    }
    let start = Instant::now();
    let report = train::evaluate(&params, &index, &queries)?;
    let seconds_per_query = start.elapsed().as_secs_f64() / queries.len() as f64;
    ensure_dir(out)?;
    write_text(&out.join(REPORT_TEXT_FILE), &report.render_text())?;
    write_text(&out.join(REPORT_JSON_FILE), &report.to_json())?;
    Ok(EvalOutcome {
        report,
        seconds_per_query,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalizeOutcome {
    pub localization: Localization,
    pub ground_truth: Pose,
    /// The `k` nearest database frames with their embedding distances.
    pub neighbors: Vec<(String, f64)>,
}

/// Localizes one frame of the scene.
pub fn localize(
    scene_root: &Path,
    checkpoint: &Path,
    index_path: &Path,
    frame_id: &str,
    k: usize,
) -> Result<LocalizeOutcome> {
    let data = LoadedScene::load(scene_root)?;
    let params = load_checkpoint(checkpoint)?;
    let index = RetrievalIndex::load(index_path)?;
    let input = data.input(frame_id)?;
    let localization = train::localize(&params, &index, input)?;
    let e = crate::model::encode_blocks(&params, input, 1)?.embeddings.remove(0);
    let neighbors = index
        .query_knn(&e, k)?
        .into_iter()
        .map(|n| (n.entry.frame_id.clone(), n.distance))
        .collect();
    Ok(LocalizeOutcome {
        localization,
        ground_truth: data.pose(frame_id)?,
        neighbors,
    })
}
