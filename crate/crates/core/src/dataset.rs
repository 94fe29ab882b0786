//! 7-Scenes style scene layout and a synthetic posed RGB-D generator.
//!
//! ```text
//! <root>/manifest.txt
//! <root>/seq-01/frame-000000.pose.txt      4×4 camera-to-world, row-major
//! <root>/seq-01/frame-000000.depth.png     16-bit depth units, 65535 / 0 invalid
//! <root>/seq-01/frame-000000.feature.txt   encoder input, one value per line
//! <root>/seq-01/frame-000000.color.png     optional, used when no feature file
//! ```
//!
//! The manifest is line-oriented `key value...`:
//!
//! ```text
//! scene synthetic
//! intrinsics fx fy cx cy width height
//! depth_scale 0.001
//! color_grid 8 8
//! train seq-01
//! test seq-02
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{RelocError, Result};
use crate::frustum::{CameraIntrinsics, DepthFrame};
use crate::mining::Frame;
use crate::pose::{mat_mul, mat_vec, Mat3, Pose, UnitQuaternion, Vec3};

pub const DEFAULT_DEPTH_SCALE: f64 = 0.001;
pub const INVALID_DEPTH: u16 = u16::MAX;
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-3;

/// Parses a 4×4 row-major camera-to-world matrix.
pub fn parse_pose_matrix(text: &str, path: &Path) -> Result<Pose> {
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|e| RelocError::parse(path, format!("bad number {tok:?}: {e}")))
        })
        .collect::<Result<_>>()?;
    if values.len() != 16 {
        return Err(RelocError::parse(
            path,
            format!("expected 16 values, found {}", values.len()),
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(RelocError::parse(path, "non-finite matrix entry"));
    }
    let r: Mat3 = std::array::from_fn(|i| std::array::from_fn(|j| values[4 * i + j]));
    let t = [values[3], values[7], values[11]];
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
            let expected = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot - expected).abs());
        }
    }
    if worst > ORTHONORMAL_TOLERANCE {
        return Err(RelocError::NonOrthonormalRotation(worst));
    }
    Pose::new(t, UnitQuaternion::from_rotation_matrix(&r))
}

pub fn load_pose_file(path: &Path) -> Result<Pose> {
    let text = std::fs::read_to_string(path).map_err(|e| RelocError::io(path, e))?;
    parse_pose_matrix(&text, path)
}

pub fn format_pose_matrix(pose: &Pose) -> String {
    let r = pose.q.to_rotation_matrix();
    let rows = [
        [r[0][0], r[0][1], r[0][2], pose.t[0]],
        [r[1][0], r[1][1], r[1][2], pose.t[1]],
        [r[2][0], r[2][1], r[2][2], pose.t[2]],
        [0.0, 0.0, 0.0, 1.0],
    ];
    let mut out = String::new();
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "{}", cells.join("\t")).expect("write to string");
    }
    out
}

pub fn write_pose_file(path: &Path, pose: &Pose) -> Result<()> {
    std::fs::write(path, format_pose_matrix(pose)).map_err(|e| RelocError::io(path, e))
}

/// Converts raw 16-bit depth units to metres; 0 and 65535 are invalid.
pub fn depth_frame_from_units(
    intrinsics: CameraIntrinsics,
    units: &[u16],
    scale: f64,
) -> Result<DepthFrame> {
    let valid: Vec<bool> = units.iter().map(|u| *u != 0 && *u != INVALID_DEPTH).collect();
    let depth: Vec<f64> = units
        .iter()
        .zip(&valid)
        .map(|(u, ok)| if *ok { f64::from(*u) * scale } else { 0.0 })
        .collect();
    DepthFrame::new(intrinsics, depth, valid)
}

pub fn read_depth_units(path: &Path) -> Result<(u32, u32, Vec<u16>)> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => RelocError::io(path, io),
        other => RelocError::UnsupportedFormat(format!("{}: {other}", path.display())),
    })?;
    match img {
        image::DynamicImage::ImageLuma16(buf) => {
            let (w, h) = buf.dimensions();
            Ok((w, h, buf.into_raw()))
        }
        other => Err(RelocError::UnsupportedFormat(format!(
            "{}: expected 16-bit single-channel depth, found {:?}",
            path.display(),
            other.color()
        ))),
    }
}

/// Loads a 16-bit depth PNG; the image size must match `intrinsics`.
pub fn load_depth_png(path: &Path, intrinsics: CameraIntrinsics, scale: f64) -> Result<DepthFrame> {
    let (w, h, units) = read_depth_units(path)?;
    if w as usize != intrinsics.width || h as usize != intrinsics.height {
        return Err(RelocError::UnsupportedFormat(format!(
            "{}: depth is {w}×{h}, intrinsics say {}×{}",
            path.display(),
            intrinsics.width,
            intrinsics.height
        )));
    }
    depth_frame_from_units(intrinsics, &units, scale)
}

pub fn write_depth_png(path: &Path, width: usize, height: usize, units: &[u16]) -> Result<()> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(width as u32, height as u32, units.to_vec()).ok_or_else(|| {
            RelocError::ShapeMismatch {
                expected: width * height,
                actual: units.len(),
            }
        })?;
    buf.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => RelocError::io(path, io),
        other => RelocError::UnsupportedFormat(format!("{}: {other}", path.display())),
    })
}

pub fn write_features(path: &Path, features: &[f64]) -> Result<()> {
    let mut out = String::with_capacity(features.len() * 20);
    for v in features {
        writeln!(out, "{v}").expect("write to string");
    }
    std::fs::write(path, out).map_err(|e| RelocError::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| RelocError::io(path, e))?;
    text.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|e| RelocError::parse(path, format!("bad feature {tok:?}: {e}")))
        })
        .collect()
}

/// Grayscale image downsampled to `grid_w × grid_h`, values in `[0, 1]`.
pub fn grayscale_features(path: &Path, grid_w: u32, grid_h: u32) -> Result<Vec<f64>> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => RelocError::io(path, io),
        other => RelocError::UnsupportedFormat(format!("{}: {other}", path.display())),
    })?;
    let small = image::imageops::resize(
        &img.to_luma8(),
        grid_w,
        grid_h,
        image::imageops::FilterType::Triangle,
    );
    Ok(small.pixels().map(|p| f64::from(p.0[0]) / 255.0).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneManifest {
    pub scene: String,
    pub intrinsics: CameraIntrinsics,
    pub depth_scale: f64,
    /// Grid for grayscale features when a frame has no feature file.
    pub color_grid: Option<(u32, u32)>,
    pub sequences: Vec<(String, Split)>,
}

impl SceneManifest {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut scene = None;
        let mut intrinsics = None;
        let mut depth_scale = DEFAULT_DEPTH_SCALE;
        let mut color_grid = None;
        let mut sequences = Vec::new();
        let num = |tok: &str| -> Result<f64> {
            tok.parse::<f64>()
                .map_err(|e| RelocError::parse(path, format!("bad number {tok:?}: {e}")))
        };
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            let arity = |n: usize| -> Result<()> {
                if toks.len() == n + 1 {
                    Ok(())
                } else {
                    Err(RelocError::parse(
                        path,
                        format!("line {}: `{}` takes {n} values", lineno + 1, toks[0]),
                    ))
                }
            };
            match toks[0] {
                "scene" => {
                    arity(1)?;
                    scene = Some(toks[1].to_string());
                }
                "intrinsics" => {
                    arity(6)?;
                    let v: Vec<f64> = toks[1..].iter().map(|t| num(t)).collect::<Result<_>>()?;
                    intrinsics = Some(CameraIntrinsics::new(
                        v[0],
                        v[1],
                        v[2],
                        v[3],
                        v[4] as usize,
                        v[5] as usize,
                    )?);
                }
                "depth_scale" => {
                    arity(1)?;
                    depth_scale = num(toks[1])?;
                    if !(depth_scale > 0.0 && depth_scale.is_finite()) {
                        return Err(RelocError::parse(path, "depth_scale must be positive"));
                    }
                }
                "color_grid" => {
                    arity(2)?;
                    color_grid = Some((num(toks[1])? as u32, num(toks[2])? as u32));
                }
                "train" | "test" => {
                    arity(1)?;
                    let split = if toks[0] == "train" { Split::Train } else { Split::Test };
                    sequences.push((toks[1].to_string(), split));
                }
                other => {
                    return Err(RelocError::parse(
                        path,
                        format!("line {}: unknown key `{other}`", lineno + 1),
                    ))
                }
            }
        }
        Ok(Self {
            scene: scene.ok_or_else(|| RelocError::parse(path, "missing `scene`"))?,
            intrinsics: intrinsics.ok_or_else(|| RelocError::parse(path, "missing `intrinsics`"))?,
            depth_scale,
            color_grid,
            sequences,
        })
    }

    pub fn render(&self) -> String {
        let k = &self.intrinsics;
        let mut out = String::new();
        writeln!(out, "scene {}", self.scene).unwrap();
        writeln!(
            out,
            "intrinsics {} {} {} {} {} {}",
            k.fx, k.fy, k.cx, k.cy, k.width, k.height
        )
        .unwrap();
        writeln!(out, "depth_scale {}", self.depth_scale).unwrap();
        if let Some((w, h)) = self.color_grid {
            writeln!(out, "color_grid {w} {h}").unwrap();
        }
        for (seq, split) in &self.sequences {
            let key = match split {
                Split::Train => "train",
                Split::Test => "test",
            };
            writeln!(out, "{key} {seq}").unwrap();
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneFrame {
    pub frame: Frame,
    pub split: Split,
    pub feature_path: PathBuf,
    pub color_path: PathBuf,
}

/// A loaded scene: manifest plus every frame's pose and file handles.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub root: PathBuf,
    pub manifest: SceneManifest,
    pub frames: Vec<SceneFrame>,
}

impl Scene {
    pub fn load(root: &Path) -> Result<Self> {
        let manifest_path = root.join("manifest.txt");
        let text =
            std::fs::read_to_string(&manifest_path).map_err(|e| RelocError::io(&manifest_path, e))?;
        let manifest = SceneManifest::parse(&text, &manifest_path)?;
        let mut frames = Vec::new();
        let mut seen = HashSet::new();
        for (seq, split) in &manifest.sequences {
            let dir = root.join(seq);
            let listing = std::fs::read_dir(&dir).map_err(|e| RelocError::io(&dir, e))?;
            let mut stems = Vec::new();
            for entry in listing {
                let entry = entry.map_err(|e| RelocError::io(&dir, e))?;
                let name = entry.file_name().to_string_lossy().into_owned();
                if let Some(stem) = name.strip_suffix(".pose.txt") {
                    stems.push(stem.to_string());
                }
            }
            stems.sort();
            for stem in stems {
                let id = format!("{seq}/{stem}");
                if !seen.insert(id.clone()) {
                    return Err(RelocError::DuplicateId(id));
                }
                let pose = load_pose_file(&dir.join(format!("{stem}.pose.txt")))?;
                let depth_ref = dir.join(format!("{stem}.depth.png"));
                if !depth_ref.is_file() {
                    return Err(RelocError::io(
                        &depth_ref,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "missing depth file"),
                    ));
                }
                frames.push(SceneFrame {
                    frame: Frame {
                        id,
                        scene: manifest.scene.clone(),
                        pose,
                        depth_ref,
                    },
                    split: *split,
                    feature_path: dir.join(format!("{stem}.feature.txt")),
                    color_path: dir.join(format!("{stem}.color.png")),
                });
            }
        }
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
            frames,
        })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SceneFrame> {
        self.frames.iter().filter(move |f| f.split == split)
    }

    pub fn frames_of(&self, split: Split) -> Vec<Frame> {
        self.split(split).map(|f| f.frame.clone()).collect()
    }

    pub fn find(&self, id: &str) -> Option<&SceneFrame> {
        self.frames.iter().find(|f| f.frame.id == id)
    }

    pub fn load_depth(&self, frame: &Frame) -> Result<DepthFrame> {
        load_depth_png(&frame.depth_ref, self.manifest.intrinsics, self.manifest.depth_scale)
    }

    /// Encoder input: the feature file if present, else grayscale features.
    pub fn load_input(&self, frame: &SceneFrame) -> Result<Vec<f64>> {
        if frame.feature_path.is_file() {
            return read_features(&frame.feature_path);
        }
        match self.manifest.color_grid {
            Some((w, h)) if frame.color_path.is_file() => grayscale_features(&frame.color_path, w, h),
            _ => Err(RelocError::io(
                &frame.feature_path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "no feature or color input"),
            )),
        }
    }

    /// Encoder inputs for every frame, keyed by id.
    pub fn load_inputs(&self) -> Result<BTreeMap<String, Vec<f64>>> {
        self.frames
            .iter()
            .map(|f| Ok((f.frame.id.clone(), self.load_input(f)?)))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Trajectory {
    /// Independent uniform samples over the workspace.
    Scatter,
    /// A closed loop whose roll turns with the loop angle.
    Orbit,
}

/// Cameras hover at `z ≈ 0` and look along `+z` at the plane
/// `z = plane_distance`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneConfig {
    pub seed: u64,
    pub scene: String,
    pub n_database: usize,
    pub n_query: usize,
    /// Half-width of the square of camera positions, metres.
    pub extent: f64,
    pub plane_distance: f64,
    /// Half-range of camera height jitter along the viewing axis, metres.
    pub height_jitter: f64,
    pub max_roll_deg: f64,
    pub max_tilt_deg: f64,
    pub intrinsics: CameraIntrinsics,
    /// Relative standard deviation of multiplicative depth noise.
    pub depth_noise: f64,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub trajectory: Trajectory,
}

impl Default for SyntheticSceneConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scene: "synthetic".into(),
            n_database: 500,
            n_query: 100,
            extent: 1.5,
            plane_distance: 2.0,
            height_jitter: 0.2,
            max_roll_deg: 120.0,
            max_tilt_deg: 10.0,
            intrinsics: CameraIntrinsics::new(30.0, 30.0, 15.5, 11.5, 32, 24)
                .expect("valid default intrinsics"),
            depth_noise: 0.0,
            feature_dim: 64,
            feature_noise: 0.01,
            trajectory: Trajectory::Scatter,
        }
    }
}

impl SyntheticSceneConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("extent", self.extent),
            ("plane_distance", self.plane_distance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(RelocError::Domain(format!("{name} must be positive")));
            }
        }
        if !(self.height_jitter >= 0.0 && self.height_jitter < self.plane_distance) {
            return Err(RelocError::Domain("height_jitter must lie in [0, plane_distance)".into()));
        }
        if self.feature_dim < POSE_CHANNELS {
            return Err(RelocError::Domain(format!(
                "feature_dim must be at least {POSE_CHANNELS}"
            )));
        }
        if self.n_database == 0 {
            return Err(RelocError::Domain("n_database must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticFrame {
    pub id: String,
    pub split: Split,
    pub pose: Pose,
    pub depth_units: Vec<u16>,
    pub features: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub config: SyntheticSceneConfig,
    pub frames: Vec<SyntheticFrame>,
}

impl SyntheticScene {
    pub fn depth_frame(&self, frame: &SyntheticFrame) -> Result<DepthFrame> {
        depth_frame_from_units(self.config.intrinsics, &frame.depth_units, DEFAULT_DEPTH_SCALE)
    }

    pub fn manifest(&self) -> SceneManifest {
        SceneManifest {
            scene: self.config.scene.clone(),
            intrinsics: self.config.intrinsics,
            depth_scale: DEFAULT_DEPTH_SCALE,
            color_grid: None,
            sequences: vec![
                (DATABASE_SEQUENCE.into(), Split::Train),
                (QUERY_SEQUENCE.into(), Split::Test),
            ],
        }
    }

    /// Writes the scene in the on-disk layout read by [`Scene::load`].
    pub fn write(&self, root: &Path) -> Result<()> {
        for seq in [DATABASE_SEQUENCE, QUERY_SEQUENCE] {
            let dir = root.join(seq);
            std::fs::create_dir_all(&dir).map_err(|e| RelocError::io(&dir, e))?;
        }
        let manifest_path = root.join("manifest.txt");
        std::fs::write(&manifest_path, self.manifest().render())
            .map_err(|e| RelocError::io(&manifest_path, e))?;
        let k = &self.config.intrinsics;
        for f in &self.frames {
            let base = root.join(&f.id);
            let with = |suffix: &str| PathBuf::from(format!("{}{suffix}", base.display()));
            write_pose_file(&with(".pose.txt"), &f.pose)?;
            write_depth_png(&with(".depth.png"), k.width, k.height, &f.depth_units)?;
            write_features(&with(".feature.txt"), &f.features)?;
        }
        Ok(())
    }
}

pub const DATABASE_SEQUENCE: &str = "seq-01";
pub const QUERY_SEQUENCE: &str = "seq-02";

/// Leading feature channels that carry pose linearly: `t / extent` and the
/// nine rotation-matrix entries.
pub const POSE_CHANNELS: usize = 12;

/// z-depth of the plane `z = plane_distance` seen from `pose`, in depth
/// units; pixels whose ray misses the plane are 0 (invalid).
pub fn render_plane_depth(
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
    plane_distance: f64,
    scale: f64,
) -> Vec<u16> {
    let r = pose.q.to_rotation_matrix();
    let mut out = Vec::with_capacity(intrinsics.width * intrinsics.height);
    for v in 0..intrinsics.height {
        for u in 0..intrinsics.width {
            let ray = intrinsics.back_project(u as f64, v as f64, 1.0);
            let dz = mat_vec(&r, ray)[2];
            let depth = (plane_distance - pose.t[2]) / dz;
            out.push(depth_to_units(depth, scale));
        }
    }
    out
}

fn depth_to_units(depth: f64, scale: f64) -> u16 {
    if !(depth.is_finite() && depth > 0.0) {
        return 0;
    }
    let units = (depth / scale).round();
    if units >= f64::from(INVALID_DEPTH) {
        0
    } else {
        units as u16
    }
}

/// Smooth features of a pose: `POSE_CHANNELS` linear channels followed by
/// random Fourier features `sin(ω·p + φ)` of the same channels.
struct FeatureMap {
    extent: f64,
    omegas: Vec<[f64; POSE_CHANNELS]>,
    phases: Vec<f64>,
}

impl FeatureMap {
    fn new(dim: usize, extent: f64, rng: &mut ChaCha8Rng) -> Self {
        let n = dim - POSE_CHANNELS;
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let omegas = (0..n)
            .map(|_| std::array::from_fn(|_| normal.sample(rng)))
            .collect();
        let phases = (0..n)
            .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
            .collect();
        Self {
            extent,
            omegas,
            phases,
        }
    }

    fn channels(&self, pose: &Pose) -> [f64; POSE_CHANNELS] {
        let r = pose.q.to_rotation_matrix();
        let mut c = [0.0; POSE_CHANNELS];
        for i in 0..3 {
            c[i] = pose.t[i] / self.extent;
        }
        for i in 0..3 {
            for j in 0..3 {
                c[3 + 3 * i + j] = r[i][j];
            }
        }
        c
    }

    fn apply(&self, pose: &Pose) -> Vec<f64> {
        let c = self.channels(pose);
        let mut out = c.to_vec();
        for (w, phi) in self.omegas.iter().zip(&self.phases) {
            let dot: f64 = w.iter().zip(&c).map(|(a, b)| a * b).sum();
            out.push((dot + phi).sin());
        }
        out
    }
}

fn rotation_z(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

fn rotation_x(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

fn rotation_y(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

fn camera_pose(t: Vec3, roll: f64, tilt_x: f64, tilt_y: f64) -> Pose {
    let r = mat_mul(&mat_mul(&rotation_x(tilt_x), &rotation_y(tilt_y)), &rotation_z(roll));
    Pose::new(t, UnitQuaternion::from_rotation_matrix(&r)).expect("finite synthetic pose")
}

/// Deterministic scene: `n_database` frames in seq-01 (train split) and
/// `n_query` frames in seq-02 (test split).
pub fn generate_synthetic_scene(config: &SyntheticSceneConfig) -> Result<SyntheticScene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let features = FeatureMap::new(config.feature_dim, config.extent, &mut rng);
    let total = config.n_database + config.n_query;
    let max_roll = config.max_roll_deg.to_radians();
    let max_tilt = config.max_tilt_deg.to_radians();

    let poses: Vec<Pose> = (0..total)
        .map(|i| {
            let jitter = if config.height_jitter > 0.0 {
                rng.random_range(-config.height_jitter..=config.height_jitter)
            } else {
                0.0
            };
            let mut tilt = || {
                if max_tilt > 0.0 {
                    rng.random_range(-max_tilt..=max_tilt)
                } else {
                    0.0
                }
            };
            let (tx, ty) = (tilt(), tilt());
            match config.trajectory {
                Trajectory::Scatter => {
                    let x = rng.random_range(-config.extent..=config.extent);
                    let y = rng.random_range(-config.extent..=config.extent);
                    let roll = if max_roll > 0.0 {
                        rng.random_range(-max_roll..=max_roll)
                    } else {
                        0.0
                    };
                    camera_pose([x, y, jitter], roll, tx, ty)
                }
                Trajectory::Orbit => {
                    let phase = std::f64::consts::TAU * i as f64 / total as f64;
                    let radius = 0.5 * config.extent;
                    let roll = max_roll * phase.sin();
                    camera_pose(
                        [radius * phase.cos(), radius * phase.sin(), jitter],
                        roll,
                        tx,
                        ty,
                    )
                }
            }
        })
        .collect();

    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut frames = Vec::with_capacity(total);
    for (i, pose) in poses.into_iter().enumerate() {
        let (seq, split, local) = if i < config.n_database {
            (DATABASE_SEQUENCE, Split::Train, i)
        } else {
            (QUERY_SEQUENCE, Split::Test, i - config.n_database)
        };
        let mut depth_units = render_plane_depth(
            &pose,
            &config.intrinsics,
            config.plane_distance,
            DEFAULT_DEPTH_SCALE,
        );
        if config.depth_noise > 0.0 {
            for u in depth_units.iter_mut().filter(|u| **u != 0) {
                let d = f64::from(*u) * (1.0 + config.depth_noise * noise.sample(&mut rng));
                *u = depth_to_units(d, 1.0);
            }
        }
        let mut feats = features.apply(&pose);
        if config.feature_noise > 0.0 {
            for f in feats.iter_mut() {
                *f += config.feature_noise * noise.sample(&mut rng);
            }
        }
        frames.push(SyntheticFrame {
            id: format!("{seq}/frame-{local:06}"),
            split,
            pose,
            depth_units,
            features: feats,
        });
    }
    Ok(SyntheticScene {
        config: config.clone(),
        frames,
    })
}
