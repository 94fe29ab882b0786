//! Depth reprojection between posed pinhole cameras and the bilateral
//! frustum distances derived from it.
//!
//! Pixels are sampled at integer grid coordinates and a reprojected pixel is
//! inside the target image when `0 <= u' < width`, `0 <= v' < height` and its
//! target-camera depth is positive. Occlusion is ignored.

use crate::error::{RelocError, Result};
use crate::pose::{mat_mul, mat_vec, sub, transpose, Mat3, Pose, Vec3};

/// Absorbs round-off on the lower image edge so that an identity
/// reprojection of column/row 0 stays inside.
pub const BOUNDARY_SLACK: f64 = 1e-9;

pub const DEFAULT_STRIDE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let ok = fx > 0.0
            && fy > 0.0
            && fx.is_finite()
            && fy.is_finite()
            && width > 0
            && height > 0
            && (0.0..width as f64).contains(&cx)
            && (0.0..height as f64).contains(&cy);
        if !ok {
            return Err(RelocError::Domain(format!(
                "invalid intrinsics fx={fx} fy={fy} cx={cx} cy={cy} size={width}x{height}"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Camera-frame point for pixel `(u, v)` at z-depth `depth`.
    pub fn back_project(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        [
            (u - self.cx) / self.fx * depth,
            (v - self.cy) / self.fy * depth,
            depth,
        ]
    }

    pub fn project(&self, p: Vec3) -> (f64, f64) {
        (
            self.fx * p[0] / p[2] + self.cx,
            self.fy * p[1] / p[2] + self.cy,
        )
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= -BOUNDARY_SLACK
            && u < self.width as f64
            && v >= -BOUNDARY_SLACK
            && v < self.height as f64
    }
}

/// Row-major depth grid in meters plus its validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthFrame {
    intrinsics: CameraIntrinsics,
    depth: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthFrame {
    pub fn new(intrinsics: CameraIntrinsics, depth: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        let n = intrinsics.width * intrinsics.height;
        if depth.len() != n {
            return Err(RelocError::ShapeMismatch {
                expected: n,
                actual: depth.len(),
            });
        }
        if valid.len() != n {
            return Err(RelocError::ShapeMismatch {
                expected: n,
                actual: valid.len(),
            });
        }
        if let Some(bad) = depth
            .iter()
            .zip(&valid)
            .find(|(d, v)| **v && !(d.is_finite() && **d > 0.0))
        {
            return Err(RelocError::Domain(format!(
                "valid depth must be finite and positive, got {}",
                bad.0
            )));
        }
        Ok(Self {
            intrinsics,
            depth,
            valid,
        })
    }

    /// Marks every finite, positive depth as valid.
    pub fn from_depth(intrinsics: CameraIntrinsics, depth: Vec<f64>) -> Result<Self> {
        let valid = depth.iter().map(|d| d.is_finite() && *d > 0.0).collect();
        Self::new(intrinsics, depth, valid)
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    pub fn depth(&self) -> &[f64] {
        &self.depth
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    /// Depth at `(u, v)` if that pixel is valid.
    pub fn at(&self, u: usize, v: usize) -> Option<f64> {
        let i = v * self.intrinsics.width + u;
        self.valid[i].then_some(self.depth[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Back-projects every valid pixel on the `stride` grid.
    pub fn sample_points(&self, stride: usize) -> PointSample {
        let stride = stride.max(1);
        let k = &self.intrinsics;
        let mut points = Vec::new();
        for v in (0..k.height).step_by(stride) {
            for u in (0..k.width).step_by(stride) {
                if let Some(d) = self.at(u, v) {
                    points.push(k.back_project(u as f64, v as f64, d));
                }
            }
        }
        PointSample { points }
    }
}

/// Camera-frame points of a frame's sampled valid pixels.
#[derive(Clone, Debug, Default)]
pub struct PointSample {
    pub points: Vec<Vec3>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Reprojection {
    InFront { u: f64, v: f64, z: f64 },
    Behind,
}

/// Reprojects pixel `(u, v)` of camera `a` with depth `depth` into camera `b`
/// (both with intrinsics `k`).
pub fn reproject_pixel(
    pixel: (f64, f64),
    depth: f64,
    pose_a: &Pose,
    pose_b: &Pose,
    k: &CameraIntrinsics,
) -> Result<Reprojection> {
    if depth.is_nan() || depth <= 0.0 {
        return Err(RelocError::NonPositiveDepth(depth));
    }
    let p_a = k.back_project(pixel.0, pixel.1, depth);
    let world = pose_a.transform_point(p_a);
    let r_bt = transpose(&pose_b.q.to_rotation_matrix());
    let p_b = mat_vec(&r_bt, sub(world, pose_b.t));
    if p_b[2] <= 0.0 {
        return Ok(Reprojection::Behind);
    }
    let (u, v) = k.project(p_b);
    Ok(Reprojection::InFront { u, v, z: p_b[2] })
}

/// Rigid map from camera `a` coordinates into camera `b` coordinates.
#[derive(Clone, Copy, Debug)]
struct RelativeTransform {
    rotation: Mat3,
    translation: Vec3,
}

impl RelativeTransform {
    fn between(pose_a: &Pose, pose_b: &Pose) -> Self {
        let r_bt = transpose(&pose_b.q.to_rotation_matrix());
        Self {
            rotation: mat_mul(&r_bt, &pose_a.q.to_rotation_matrix()),
            translation: mat_vec(&r_bt, sub(pose_a.t, pose_b.t)),
        }
    }

    fn apply(&self, p: Vec3) -> Vec3 {
        let r = mat_vec(&self.rotation, p);
        [
            r[0] + self.translation[0],
            r[1] + self.translation[1],
            r[2] + self.translation[2],
        ]
    }
}

/// Integer overlap tally: `inside` of `valid` sampled pixels landed in the
/// target image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OverlapCount {
    pub inside: usize,
    pub valid: usize,
}

impl OverlapCount {
    pub fn fraction(&self) -> f64 {
        self.inside as f64 / self.valid as f64
    }
}

/// Counts how many of `sample`'s points, seen from `pose_a`, project inside
/// the image of a camera `target` at `pose_b`.
pub fn overlap_count_from_points(
    sample: &PointSample,
    pose_a: &Pose,
    target: &CameraIntrinsics,
    pose_b: &Pose,
) -> Result<OverlapCount> {
    if sample.points.is_empty() {
        return Err(RelocError::NoValidPixels);
    }
    let rel = RelativeTransform::between(pose_a, pose_b);
    let inside = sample
        .points
        .iter()
        .filter(|p| {
            let q = rel.apply(**p);
            if q[2] <= 0.0 {
                return false;
            }
            let (u, v) = target.project(q);
            target.contains(u, v)
        })
        .count();
    Ok(OverlapCount {
        inside,
        valid: sample.points.len(),
    })
}

pub fn overlap_count(
    a: &DepthFrame,
    pose_a: &Pose,
    target: &CameraIntrinsics,
    pose_b: &Pose,
    stride: usize,
) -> Result<OverlapCount> {
    overlap_count_from_points(&a.sample_points(stride), pose_a, target, pose_b)
}

/// Fraction θ of `a`'s valid pixels visible from `pose_b` through the same
/// camera model.
pub fn frustum_overlap(a: &DepthFrame, pose_a: &Pose, pose_b: &Pose, stride: usize) -> Result<f64> {
    Ok(overlap_count(a, pose_a, a.intrinsics(), pose_b, stride)?.fraction())
}

/// Directed frustum distances `d1 = 1 − θ(a→b)` and `d2 = 1 − θ(b→a)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrustumDistances {
    pub d1: f64,
    pub d2: f64,
}

impl FrustumDistances {
    /// The smaller of the two directed overlaps.
    pub fn min_overlap(&self) -> f64 {
        (1.0 - self.d1).min(1.0 - self.d2)
    }
}

pub fn bilateral_frustum_distances(
    a: &DepthFrame,
    pose_a: &Pose,
    b: &DepthFrame,
    pose_b: &Pose,
    stride: usize,
) -> Result<FrustumDistances> {
    bilateral_from_points(
        &a.sample_points(stride),
        a.intrinsics(),
        pose_a,
        &b.sample_points(stride),
        b.intrinsics(),
        pose_b,
    )
}

pub fn bilateral_from_points(
    a: &PointSample,
    k_a: &CameraIntrinsics,
    pose_a: &Pose,
    b: &PointSample,
    k_b: &CameraIntrinsics,
    pose_b: &Pose,
) -> Result<FrustumDistances> {
    let ab = overlap_count_from_points(a, pose_a, k_b, pose_b)?;
    let ba = overlap_count_from_points(b, pose_b, k_a, pose_a)?;
    Ok(FrustumDistances {
        d1: 1.0 - ab.fraction(),
        d2: 1.0 - ba.fraction(),
    })
}
