//! Training pair construction from posed depth sequences.
//!
//! Quadruplets follow the easy / medium / hard tiers used for auxiliary
//! fine-tuning; overlap pairs are the plain "sufficiently covisible" pairs
//! used for layerwise pretraining. Both use the smaller of the two directed
//! frustum overlaps.

use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{RelocError, Result};
use crate::frustum::{bilateral_from_points, CameraIntrinsics, DepthFrame, PointSample, DEFAULT_STRIDE};
use crate::pose::{angular_distance, Pose};

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub id: String,
    pub scene: String,
    pub pose: Pose,
    /// Where the frame's depth map lives; interpretation is up to the loader.
    pub depth_ref: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairLabel {
    Easy,
    Medium,
    Hard,
    Unusable,
}

/// Overlap / angular-distance thresholds for the three difficulty tiers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub easy_min_overlap: f64,
    pub easy_max_alpha: f64,
    pub medium_min_overlap: f64,
    pub medium_min_alpha: f64,
    pub hard_min_overlap: f64,
    pub hard_max_overlap: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            easy_min_overlap: 0.40,
            easy_max_alpha: 0.30,
            medium_min_overlap: 0.30,
            medium_min_alpha: 0.60,
            hard_min_overlap: 0.05,
            hard_max_overlap: 0.25,
        }
    }
}

impl Thresholds {
    /// Labels are tested in the order Easy, Medium, Hard.
    pub fn classify(&self, overlap_min: f64, alpha: f64) -> Result<PairLabel> {
        for (name, v) in [("overlap", overlap_min), ("alpha", alpha)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(RelocError::Domain(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(if overlap_min > self.easy_min_overlap && alpha < self.easy_max_alpha {
            PairLabel::Easy
        } else if overlap_min > self.medium_min_overlap && alpha > self.medium_min_alpha {
            PairLabel::Medium
        } else if overlap_min > self.hard_min_overlap && overlap_min < self.hard_max_overlap {
            PairLabel::Hard
        } else {
            PairLabel::Unusable
        })
    }
}

pub fn classify_pair(overlap_min: f64, alpha: f64) -> Result<PairLabel> {
    Thresholds::default().classify(overlap_min, alpha)
}

/// Cached geometry of one (anchor, partner) pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct PairStats {
    pub d1: f64,
    pub d2: f64,
    pub alpha: f64,
}

impl PairStats {
    pub fn min_overlap(&self) -> f64 {
        (1.0 - self.d1).min(1.0 - self.d2)
    }
}

impl From<[f64; 3]> for PairStats {
    fn from(v: [f64; 3]) -> Self {
        Self {
            d1: v[0],
            d2: v[1],
            alpha: v[2],
        }
    }
}

impl From<PairStats> for [f64; 3] {
    fn from(s: PairStats) -> Self {
        [s.d1, s.d2, s.alpha]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TierStats {
    pub easy: PairStats,
    pub medium: PairStats,
    pub hard: PairStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quadruplet {
    pub anchor: String,
    pub easy: String,
    pub medium: String,
    pub hard: String,
    pub stats: TierStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapPair {
    pub db: String,
    pub query: String,
    pub overlap: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    pub thresholds: Thresholds,
    pub stride: usize,
    /// Maximum quadruplets emitted per anchor.
    pub per_anchor_cap: usize,
    /// Seeds the per-anchor candidate permutation.
    pub seed: u64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            stride: DEFAULT_STRIDE,
            per_anchor_cap: 1,
            seed: 0,
        }
    }
}

pub const DEFAULT_MIN_OVERLAP: f64 = 0.3;

struct Prepared<'a> {
    frame: &'a Frame,
    intrinsics: CameraIntrinsics,
    points: PointSample,
}

fn prepare<'a, F>(frames: &'a [Frame], stride: usize, load_depth: F) -> Result<Vec<Prepared<'a>>>
where
    F: Fn(&Frame) -> Result<DepthFrame> + Sync,
{
    let mut sorted: Vec<&Frame> = frames.iter().collect();
    sorted.sort_by(|a, b| (&a.scene, &a.id).cmp(&(&b.scene, &b.id)));
    sorted
        .par_iter()
        .map(|frame| {
            let depth = load_depth(frame)?;
            let points = depth.sample_points(stride);
            if points.points.is_empty() {
                return Err(RelocError::NoValidPixels);
            }
            Ok(Prepared {
                frame,
                intrinsics: *depth.intrinsics(),
                points,
            })
        })
        .collect()
}

fn pair_stats(a: &Prepared, b: &Prepared) -> Result<PairStats> {
    let d = bilateral_from_points(
        &a.points,
        &a.intrinsics,
        &a.frame.pose,
        &b.points,
        &b.intrinsics,
        &b.frame.pose,
    )?;
    Ok(PairStats {
        d1: d.d1,
        d2: d.d2,
        alpha: angular_distance(&a.frame.pose.q, &b.frame.pose.q),
    })
}

fn candidate_order(seed: u64, anchor: usize, candidates: &mut [usize]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (anchor as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    candidates.shuffle(&mut rng);
}

/// Builds (anchor, easy, medium, hard) quadruplets. Each anchor takes the
/// first matching candidate of every tier in a seeded per-anchor order; an
/// anchor lacking any tier emits nothing. Output is sorted by scene, then
/// anchor id.
pub fn mine_quadruplets<F>(
    frames: &[Frame],
    config: &MiningConfig,
    load_depth: F,
) -> Result<Vec<Quadruplet>>
where
    F: Fn(&Frame) -> Result<DepthFrame> + Sync,
{
    if frames.len() < 4 || config.per_anchor_cap == 0 {
        return Ok(Vec::new());
    }
    let prepared = prepare(frames, config.stride, load_depth)?;
    let per_anchor: Vec<Vec<Quadruplet>> = (0..prepared.len())
        .into_par_iter()
        .map(|ai| {
            let anchor = &prepared[ai];
            let mut candidates: Vec<usize> = (0..prepared.len())
                .filter(|&j| j != ai && prepared[j].frame.scene == anchor.frame.scene)
                .collect();
            candidate_order(config.seed, ai, &mut candidates);

            let cap = config.per_anchor_cap;
            let mut easy = Vec::with_capacity(cap);
            let mut medium = Vec::with_capacity(cap);
            let mut hard = Vec::with_capacity(cap);
            for j in candidates {
                if easy.len() == cap && medium.len() == cap && hard.len() == cap {
                    break;
                }
                let stats = pair_stats(anchor, &prepared[j])?;
                let bucket = match config.thresholds.classify(stats.min_overlap(), stats.alpha)? {
                    PairLabel::Easy => &mut easy,
                    PairLabel::Medium => &mut medium,
                    PairLabel::Hard => &mut hard,
                    PairLabel::Unusable => continue,
                };
                if bucket.len() < cap {
                    bucket.push((j, stats));
                }
            }
            let n = easy.len().min(medium.len()).min(hard.len());
            Ok((0..n)
                .map(|k| Quadruplet {
                    anchor: anchor.frame.id.clone(),
                    easy: prepared[easy[k].0].frame.id.clone(),
                    medium: prepared[medium[k].0].frame.id.clone(),
                    hard: prepared[hard[k].0].frame.id.clone(),
                    stats: TierStats {
                        easy: easy[k].1,
                        medium: medium[k].1,
                        hard: hard[k].1,
                    },
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_anchor.into_iter().flatten().collect())
}

/// Every ordered same-scene pair whose smaller directed overlap reaches
/// `min_overlap`, sorted by (scene, db id, query id).
pub fn mine_overlap_pairs<F>(
    frames: &[Frame],
    min_overlap: f64,
    stride: usize,
    load_depth: F,
) -> Result<Vec<OverlapPair>>
where
    F: Fn(&Frame) -> Result<DepthFrame> + Sync,
{
    if !(min_overlap > 0.0 && min_overlap <= 1.0) {
        return Err(RelocError::Domain(format!(
            "min_overlap = {min_overlap} is outside (0, 1]"
        )));
    }
    let prepared = prepare(frames, stride, load_depth)?;
    let rows: Vec<Vec<OverlapPair>> = (0..prepared.len())
        .into_par_iter()
        .map(|i| {
            let a = &prepared[i];
            let mut row = Vec::new();
            for (j, b) in prepared.iter().enumerate() {
                if i == j || a.frame.scene != b.frame.scene {
                    continue;
                }
                // min(θ1, θ2) is symmetric, so each direction of a pair sees
                // the same value.
                let (lo, hi) = if i < j { (a, b) } else { (b, a) };
                let overlap = pair_stats(lo, hi)?.min_overlap();
                if overlap >= min_overlap {
                    row.push(OverlapPair {
                        db: a.frame.id.clone(),
                        query: b.frame.id.clone(),
                        overlap,
                    });
                }
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// First line of a mined JSON-lines file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiningHeader {
    pub kind: String,
    pub thresholds: Thresholds,
    pub stride: usize,
    pub seed: u64,
    pub min_overlap: f64,
    pub per_anchor_cap: usize,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: MiningHeader,
}

pub fn write_jsonl<T: Serialize>(path: &Path, header: &MiningHeader, records: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| RelocError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write_line = |value: String| -> Result<()> {
        writeln!(out, "{value}").map_err(|e| RelocError::io(path, e))
    };
    write_line(serde_json::to_string(&HeaderLine {
        header: header.clone(),
    })?)?;
    for r in records {
        write_line(serde_json::to_string(r)?)?;
    }
    out.flush().map_err(|e| RelocError::io(path, e))
}

/// Reads a mined file, returning its header (if any) and records.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<(Option<MiningHeader>, Vec<T>)> {
    let file = std::fs::File::open(path).map_err(|e| RelocError::io(path, e))?;
    let mut header = None;
    let mut records = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| RelocError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if lineno == 0 {
            if let Ok(h) = serde_json::from_str::<HeaderLine>(&line) {
                header = Some(h.header);
                continue;
            }
        }
        records.push(
            serde_json::from_str(&line)
                .map_err(|e| RelocError::parse(path, format!("line {}: {e}", lineno + 1)))?,
        );
    }
    Ok((header, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::UnitQuaternion;
    use std::collections::HashMap;

    #[test]
    fn classify_examples() {
        assert_eq!(classify_pair(0.50, 0.20).unwrap(), PairLabel::Easy);
        assert_eq!(classify_pair(0.35, 0.70).unwrap(), PairLabel::Medium);
        assert_eq!(classify_pair(0.15, 0.90).unwrap(), PairLabel::Hard);
        assert_eq!(classify_pair(0.01, 0.10).unwrap(), PairLabel::Unusable);
    }

    #[test]
    fn classify_boundaries_are_strict() {
        assert_eq!(classify_pair(0.40, 0.10).unwrap(), PairLabel::Unusable);
        assert_eq!(classify_pair(0.50, 0.30).unwrap(), PairLabel::Unusable);
        assert_eq!(classify_pair(0.30, 0.90).unwrap(), PairLabel::Unusable);
        assert_eq!(classify_pair(0.25, 0.50).unwrap(), PairLabel::Unusable);
        assert_eq!(classify_pair(0.05, 0.50).unwrap(), PairLabel::Unusable);
        // Easy wins over Medium, Medium over Hard.
        assert_eq!(classify_pair(0.9, 0.1).unwrap(), PairLabel::Easy);
        assert_eq!(classify_pair(0.9, 0.9).unwrap(), PairLabel::Medium);
    }

    #[test]
    fn classify_rejects_out_of_domain() {
        assert!(matches!(classify_pair(1.2, 0.1), Err(RelocError::Domain(_))));
        assert!(matches!(classify_pair(0.5, -0.1), Err(RelocError::Domain(_))));
        assert!(classify_pair(f64::NAN, 0.1).is_err());
    }

    fn plane_frame(k: CameraIntrinsics, pose: &Pose) -> DepthFrame {
        // Depth of the world plane z = 2 seen from `pose`.
        let r = pose.q.to_rotation_matrix();
        let depth = (0..k.height)
            .flat_map(|v| (0..k.width).map(move |u| (u, v)))
            .map(|(u, v)| {
                let ray = k.back_project(u as f64, v as f64, 1.0);
                let dz = r[2][0] * ray[0] + r[2][1] * ray[1] + r[2][2] * ray[2];
                let s = (2.0 - pose.t[2]) / dz;
                if s > 0.0 {
                    s
                } else {
                    0.0
                }
            })
            .collect();
        DepthFrame::from_depth(k, depth).unwrap()
    }

    fn frames_with(poses: &[Pose]) -> (Vec<Frame>, HashMap<String, DepthFrame>) {
        let k = CameraIntrinsics::new(16.0, 16.0, 8.0, 6.0, 16, 12).unwrap();
        let frames: Vec<Frame> = poses
            .iter()
            .enumerate()
            .map(|(i, p)| Frame {
                id: format!("f{i:03}"),
                scene: "s".into(),
                pose: *p,
                depth_ref: PathBuf::new(),
            })
            .collect();
        let depths = frames
            .iter()
            .map(|f| (f.id.clone(), plane_frame(k, &f.pose)))
            .collect();
        (frames, depths)
    }

    #[test]
    fn fewer_than_four_frames_yield_nothing() {
        let (frames, depths) = frames_with(&[Pose::IDENTITY; 3]);
        let q = mine_quadruplets(&frames, &MiningConfig::default(), |f| Ok(depths[&f.id].clone()));
        assert!(q.unwrap().is_empty());
    }

    #[test]
    fn identical_poses_have_no_medium_or_hard() {
        let (frames, depths) = frames_with(&[Pose::IDENTITY; 6]);
        let q = mine_quadruplets(&frames, &MiningConfig::default(), |f| Ok(depths[&f.id].clone()));
        assert!(q.unwrap().is_empty());
    }

    #[test]
    fn quadruplets_from_a_roll_and_shift_sequence() {
        let roll = |deg: f64| UnitQuaternion::from_axis_angle([0.0, 0.0, 1.0], deg.to_radians());
        let poses = vec![
            Pose::new([0.0, 0.0, 0.0], roll(0.0)).unwrap(),
            Pose::new([0.05, 0.0, 0.0], roll(10.0)).unwrap(),
            Pose::new([0.0, 0.05, 0.0], roll(150.0)).unwrap(),
            Pose::new([1.6, 0.0, 0.0], roll(0.0)).unwrap(),
            Pose::new([0.0, 1.3, 0.0], roll(5.0)).unwrap(),
        ];
        let (frames, depths) = frames_with(&poses);
        let config = MiningConfig {
            stride: 1,
            ..MiningConfig::default()
        };
        let quads = mine_quadruplets(&frames, &config, |f| Ok(depths[&f.id].clone())).unwrap();
        let first = quads.iter().find(|q| q.anchor == "f000").expect("anchor f000 mined");
        assert_eq!(first.easy, "f001");
        assert_eq!(first.medium, "f002");
        assert!(first.hard == "f003" || first.hard == "f004");
        for q in &quads {
            let t = Thresholds::default();
            assert_eq!(t.classify(q.stats.easy.min_overlap(), q.stats.easy.alpha).unwrap(), PairLabel::Easy);
            assert_eq!(t.classify(q.stats.medium.min_overlap(), q.stats.medium.alpha).unwrap(), PairLabel::Medium);
            assert_eq!(t.classify(q.stats.hard.min_overlap(), q.stats.hard.alpha).unwrap(), PairLabel::Hard);
        }
        let mut sorted = quads.clone();
        sorted.sort_by(|a, b| a.anchor.cmp(&b.anchor));
        assert_eq!(sorted, quads);
    }

    #[test]
    fn overlap_pairs_on_duplicates_are_all_ordered_pairs() {
        let (frames, depths) = frames_with(&[Pose::IDENTITY; 4]);
        let pairs = mine_overlap_pairs(&frames, 0.5, 1, |f| Ok(depths[&f.id].clone())).unwrap();
        assert_eq!(pairs.len(), 12);
        assert!(pairs.iter().all(|p| p.overlap == 1.0 && p.db != p.query));
    }

    #[test]
    fn overlap_pairs_at_full_overlap_exclude_distinct_poses() {
        let poses: Vec<Pose> = (0..4)
            .map(|i| Pose::new([0.3 * i as f64, 0.0, 0.0], UnitQuaternion::IDENTITY).unwrap())
            .collect();
        let (frames, depths) = frames_with(&poses);
        let pairs = mine_overlap_pairs(&frames, 1.0, 1, |f| Ok(depths[&f.id].clone())).unwrap();
        assert!(pairs.is_empty());
        assert!(mine_overlap_pairs(&frames, 0.0, 1, |f| Ok(depths[&f.id].clone())).is_err());
    }

    #[test]
    fn jsonl_layout_and_round_trip() {
        let q = Quadruplet {
            anchor: "a".into(),
            easy: "e".into(),
            medium: "m".into(),
            hard: "h".into(),
            stats: TierStats {
                easy: [0.1, 0.2, 0.05].into(),
                medium: [0.3, 0.4, 0.7].into(),
                hard: [0.8, 0.9, 0.2].into(),
            },
        };
        let line = serde_json::to_string(&q).unwrap();
        assert_eq!(
            line,
            r#"{"anchor":"a","easy":"e","medium":"m","hard":"h","stats":{"easy":[0.1,0.2,0.05],"medium":[0.3,0.4,0.7],"hard":[0.8,0.9,0.2]}}"#
        );
        let p = OverlapPair {
            db: "a".into(),
            query: "b".into(),
            overlap: 0.5,
        };
        assert_eq!(serde_json::to_string(&p).unwrap(), r#"{"db":"a","query":"b","overlap":0.5}"#);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.jsonl");
        let header = MiningHeader {
            kind: "quadruplets".into(),
            thresholds: Thresholds::default(),
            stride: 4,
            seed: 3,
            min_overlap: DEFAULT_MIN_OVERLAP,
            per_anchor_cap: 1,
        };
        write_jsonl(&path, &header, std::slice::from_ref(&q)).unwrap();
        let (h, back): (_, Vec<Quadruplet>) = read_jsonl(&path).unwrap();
        assert_eq!(h.unwrap(), header);
        assert_eq!(back, vec![q]);
    }
}
