//! Translation + unit quaternion pose algebra.
//!
//! Quaternions are Hamilton, stored w-first and kept on the `w >= 0`
//! hemisphere so that serialized output is canonical. Every metric here is
//! invariant under `q -> -q`.
//!
//! Poses are camera-to-world: a camera-frame point `p` maps to the world as
//! `R(q) p + t`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{RelocError, Result};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes `(w, x, y, z)` onto the unit sphere and the `w >= 0`
    /// hemisphere. Fails on a (near-)zero or non-finite input.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(RelocError::DegenerateQuaternion(norm));
        }
        Ok(Self::canonical(w / norm, x / norm, y / norm, z / norm))
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = norm(axis);
        assert!(n > 0.0, "rotation axis must be non-zero");
        let (s, c) = (angle * 0.5).sin_cos();
        Self::new(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n)
            .expect("axis-angle quaternion is unit")
    }

    /// Uniformly distributed rotation (Shoemake's subgroup algorithm).
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let u1: f64 = rng.random();
        let u2: f64 = rng.random::<f64>() * std::f64::consts::TAU;
        let u3: f64 = rng.random::<f64>() * std::f64::consts::TAU;
        let a = (1.0 - u1).sqrt();
        let b = u1.sqrt();
        Self::new(a * u2.cos(), a * u2.sin(), b * u3.sin(), b * u3.cos())
            .expect("random quaternion is unit")
    }

    /// Converts a rotation matrix to a quaternion. The input is assumed
    /// orthonormal; the result is renormalized regardless.
    pub fn from_rotation_matrix(r: &Mat3) -> Self {
        // Shepperd: pivot on the largest diagonal combination.
        let trace = r[0][0] + r[1][1] + r[2][2];
        let (w, x, y, z) = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            (
                0.25 * s,
                (r[2][1] - r[1][2]) / s,
                (r[0][2] - r[2][0]) / s,
                (r[1][0] - r[0][1]) / s,
            )
        } else if r[0][0] > r[1][1] && r[0][0] > r[2][2] {
            let s = (1.0 + r[0][0] - r[1][1] - r[2][2]).sqrt() * 2.0;
            (
                (r[2][1] - r[1][2]) / s,
                0.25 * s,
                (r[0][1] + r[1][0]) / s,
                (r[0][2] + r[2][0]) / s,
            )
        } else if r[1][1] > r[2][2] {
            let s = (1.0 + r[1][1] - r[0][0] - r[2][2]).sqrt() * 2.0;
            (
                (r[0][2] - r[2][0]) / s,
                (r[0][1] + r[1][0]) / s,
                0.25 * s,
                (r[1][2] + r[2][1]) / s,
            )
        } else {
            let s = (1.0 + r[2][2] - r[0][0] - r[1][1]).sqrt() * 2.0;
            (
                (r[1][0] - r[0][1]) / s,
                (r[0][2] + r[2][0]) / s,
                (r[1][2] + r[2][1]) / s,
                0.25 * s,
            )
        };
        Self::new(w, x, y, z).expect("rotation matrix yields a non-zero quaternion")
    }

    fn canonical(w: f64, x: f64, y: f64, z: f64) -> Self {
        if w < 0.0 {
            Self {
                w: -w,
                x: -x,
                y: -y,
                z: -z,
            }
        } else {
            Self { w, x, y, z }
        }
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    /// `[w, x, y, z]`
    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn multiply(&self, other: &Self) -> Self {
        quat_multiply(self, other)
    }

    pub fn inverse(&self) -> Self {
        quat_inverse(self)
    }

    pub fn to_rotation_matrix(&self) -> Mat3 {
        quat_to_rotation_matrix(self)
    }

    pub fn rotate(&self, v: Vec3) -> Vec3 {
        mat_vec(&self.to_rotation_matrix(), v)
    }
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Hamilton product `a ⊗ b`, renormalized.
pub fn quat_multiply(a: &UnitQuaternion, b: &UnitQuaternion) -> UnitQuaternion {
    let w = a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z;
    let x = a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y;
    let y = a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x;
    let z = a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w;
    UnitQuaternion::new(w, x, y, z).expect("product of unit quaternions is unit")
}

/// Conjugate; equal to the inverse for unit quaternions.
pub fn quat_inverse(q: &UnitQuaternion) -> UnitQuaternion {
    UnitQuaternion::canonical(q.w, -q.x, -q.y, -q.z)
}

/// Normalized geodesic distance `2 acos(|a·b|) / π` in `[0, 1]`.
///
/// Evaluated as `2 atan2(|v|, |w|)` of `a⁻¹ ⊗ b`, which equals the arccos form
/// but keeps full precision for nearly identical rotations.
pub fn angular_distance(a: &UnitQuaternion, b: &UnitQuaternion) -> f64 {
    rotation_angle(a, b) / std::f64::consts::PI
}

fn rotation_angle(a: &UnitQuaternion, b: &UnitQuaternion) -> f64 {
    let w = a.dot(b);
    let v = [
        a.w * b.x - b.w * a.x - (a.y * b.z - a.z * b.y),
        a.w * b.y - b.w * a.y - (a.z * b.x - a.x * b.z),
        a.w * b.z - b.w * a.z - (a.x * b.y - a.y * b.x),
    ];
    2.0 * norm(v).atan2(w.abs())
}

/// Rotation angle between two orientations, in degrees `[0, 180]`.
pub fn rotation_error_degrees(a: &UnitQuaternion, b: &UnitQuaternion) -> f64 {
    rotation_angle(a, b).to_degrees()
}

pub fn quat_to_rotation_matrix(q: &UnitQuaternion) -> Mat3 {
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub t: Vec3,
    pub q: UnitQuaternion,
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        t: [0.0; 3],
        q: UnitQuaternion::IDENTITY,
    };

    pub fn new(t: Vec3, q: UnitQuaternion) -> Result<Self> {
        if t.iter().any(|v| !v.is_finite()) {
            return Err(RelocError::Domain(format!("non-finite translation {t:?}")));
        }
        Ok(Self { t, q })
    }

    /// Builds a pose from `[tx, ty, tz, qw, qx, qy, qz]`.
    pub fn from_array(v: [f64; 7]) -> Result<Self> {
        Self::new([v[0], v[1], v[2]], UnitQuaternion::new(v[3], v[4], v[5], v[6])?)
    }

    pub fn to_array(&self) -> [f64; 7] {
        let q = self.q.to_array();
        [self.t[0], self.t[1], self.t[2], q[0], q[1], q[2], q[3]]
    }

    /// Maps a camera-frame point into the world frame.
    pub fn transform_point(&self, p: Vec3) -> Vec3 {
        add(self.q.rotate(p), self.t)
    }

    /// `self ∘ other` as rigid transforms (apply `other` first).
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            t: self.transform_point(other.t),
            q: self.q.multiply(&other.q),
        }
    }

    pub fn translation_error(&self, other: &Pose) -> f64 {
        norm(sub(self.t, other.t))
    }

    pub fn rotation_error_degrees(&self, other: &Pose) -> f64 {
        rotation_error_degrees(&self.q, &other.q)
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// `tx ty tz qw qx qy qz`
impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.to_array();
        write!(
            f,
            "{} {} {} {} {} {} {}",
            v[0], v[1], v[2], v[3], v[4], v[5], v[6]
        )
    }
}

impl FromStr for Pose {
    type Err = RelocError;

    fn from_str(s: &str) -> Result<Self> {
        let values = s
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|e| RelocError::Domain(format!("bad pose component `{tok}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let arr: [f64; 7] = values.as_slice().try_into().map_err(|_| {
            RelocError::Domain(format!("pose needs 7 values, got {}", values.len()))
        })?;
        Pose::from_array(arr)
    }
}

/// Relative motion from a database camera to a query camera.
///
/// `dt` is expressed in the world frame (`t_q - t_db`) while `dq` is the
/// rotation `q_db⁻¹ ⊗ q_q`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelativePose {
    pub dt: Vec3,
    pub dq: UnitQuaternion,
}

impl RelativePose {
    pub const IDENTITY: RelativePose = RelativePose {
        dt: [0.0; 3],
        dq: UnitQuaternion::IDENTITY,
    };

    /// `[dtx, dty, dtz, qw, qx, qy, qz]`, the layout regressed by pose heads.
    pub fn to_array(&self) -> [f64; 7] {
        let q = self.dq.to_array();
        [self.dt[0], self.dt[1], self.dt[2], q[0], q[1], q[2], q[3]]
    }
}

pub fn relative_pose(db: &Pose, query: &Pose) -> RelativePose {
    RelativePose {
        dt: sub(query.t, db.t),
        dq: quat_inverse(&db.q).multiply(&query.q),
    }
}

pub fn compose_absolute(db: &Pose, rel: &RelativePose) -> Pose {
    Pose {
        t: add(db.t, rel.dt),
        q: db.q.multiply(&rel.dq),
    }
}

pub(crate) fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

pub fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn transpose(m: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in m.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            out[j][i] = *v;
        }
    }
    out
}

#[cfg(test)]
fn det(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn quat_close(a: &UnitQuaternion, b: &UnitQuaternion, tol: f64) -> bool {
        a.to_array()
            .iter()
            .zip(b.to_array())
            .all(|(x, y)| (x - y).abs() <= tol)
    }

    fn arb_quat() -> impl Strategy<Value = UnitQuaternion> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
            .prop_filter("non-degenerate", |(w, x, y, z)| {
                w * w + x * x + y * y + z * z > 1e-3
            })
            .prop_map(|(w, x, y, z)| UnitQuaternion::new(w, x, y, z).unwrap())
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (prop::array::uniform3(-10.0f64..10.0), arb_quat()).prop_map(|(t, q)| Pose { t, q })
    }

    fn negated(q: &UnitQuaternion) -> UnitQuaternion {
        // Bypasses canonicalization on purpose.
        UnitQuaternion {
            w: -q.w,
            x: -q.x,
            y: -q.y,
            z: -q.z,
        }
    }

    #[test]
    fn multiply_identity_and_inverse() {
        let q = UnitQuaternion::new(0.3, -0.2, 0.9, 0.1).unwrap();
        assert!(quat_close(&UnitQuaternion::IDENTITY.multiply(&q), &q, 1e-15));
        assert!(quat_close(
            &q.multiply(&q.inverse()),
            &UnitQuaternion::IDENTITY,
            1e-15
        ));
    }

    #[test]
    fn two_quarter_turns_about_x_make_a_half_turn() {
        let qx = UnitQuaternion::from_axis_angle([1.0, 0.0, 0.0], FRAC_PI_2);
        let half = qx.multiply(&qx);
        assert!(quat_close(
            &half,
            &UnitQuaternion::new(0.0, 1.0, 0.0, 0.0).unwrap(),
            1e-15
        ));
    }

    #[test]
    fn inverse_is_conjugate() {
        assert_eq!(UnitQuaternion::IDENTITY.inverse(), UnitQuaternion::IDENTITY);
        let q = UnitQuaternion::new(0.0, 1.0, 0.0, 0.0).unwrap();
        let inv = q.inverse();
        assert_eq!(inv.to_array(), [0.0, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn inverse_property_over_random_quaternions() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let q = UnitQuaternion::random(&mut rng);
            assert!(quat_close(
                &q.multiply(&quat_inverse(&q)),
                &UnitQuaternion::IDENTITY,
                1e-12
            ));
        }
    }

    #[test]
    fn canonical_hemisphere() {
        let q = UnitQuaternion::new(-0.5, 0.5, 0.5, 0.5).unwrap();
        assert_eq!(q.to_array(), [0.5, -0.5, -0.5, -0.5]);
        assert!(UnitQuaternion::new(0.0, 0.0, 0.0, 0.0).is_err());
        assert!(UnitQuaternion::new(f64::NAN, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn relative_pose_examples() {
        let p = Pose::from_array([1.0, -2.0, 0.5, 0.9, 0.1, -0.3, 0.2]).unwrap();
        let rel = relative_pose(&p, &p);
        assert_eq!(rel.dt, [0.0; 3]);
        assert!(quat_close(&rel.dq, &UnitQuaternion::IDENTITY, 1e-15));

        let db = Pose::IDENTITY;
        let q = Pose::new([1.0, 2.0, 3.0], UnitQuaternion::IDENTITY).unwrap();
        let rel = relative_pose(&db, &q);
        assert_eq!(rel.dt, [1.0, 2.0, 3.0]);
        assert_eq!(rel.dq, UnitQuaternion::IDENTITY);
    }

    #[test]
    fn compose_absolute_examples() {
        let db = Pose::from_array([1.0, -2.0, 0.5, 0.9, 0.1, -0.3, 0.2]).unwrap();
        assert_eq!(compose_absolute(&db, &RelativePose::IDENTITY), db);

        let db = Pose::new([1.0, 0.0, 0.0], UnitQuaternion::IDENTITY).unwrap();
        let rel = RelativePose {
            dt: [0.0, 1.0, 0.0],
            dq: UnitQuaternion::IDENTITY,
        };
        assert_eq!(compose_absolute(&db, &rel).t, [1.0, 1.0, 0.0]);
    }

    #[test]
    fn angular_distance_closed_forms() {
        let id = UnitQuaternion::IDENTITY;
        assert_eq!(angular_distance(&id, &id), 0.0);
        let flip = UnitQuaternion::new(0.0, 1.0, 0.0, 0.0).unwrap();
        assert!((angular_distance(&id, &flip) - 1.0).abs() < 1e-12);
        let quarter = UnitQuaternion::from_axis_angle([1.0, 0.0, 0.0], FRAC_PI_2);
        assert!((angular_distance(&id, &quarter) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rotation_error_closed_forms() {
        let id = UnitQuaternion::IDENTITY;
        assert_eq!(rotation_error_degrees(&id, &id), 0.0);
        let flip = UnitQuaternion::new(0.0, 1.0, 0.0, 0.0).unwrap();
        assert!((rotation_error_degrees(&id, &flip) - 180.0).abs() < 1e-9);
        let qz = UnitQuaternion::from_axis_angle([0.0, 0.0, 1.0], FRAC_PI_2);
        assert!((rotation_error_degrees(&id, &qz) - 90.0).abs() < 1e-9);
    }

    #[test]
    fn dot_slightly_above_one_does_not_produce_nan() {
        let q = UnitQuaternion::from_axis_angle([0.3, 0.2, 0.1], 0.7);
        let mut nudged = q;
        nudged.w *= 1.0 + 1e-15;
        assert!(angular_distance(&q, &nudged).is_finite());
        assert!(rotation_error_degrees(&q, &nudged).is_finite());
    }

    #[test]
    fn rotation_matrix_examples() {
        let id = quat_to_rotation_matrix(&UnitQuaternion::IDENTITY);
        assert_eq!(id, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let r = quat_to_rotation_matrix(&UnitQuaternion::new(0.0, 1.0, 0.0, 0.0).unwrap());
        assert_eq!(r, [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]]);
    }

    #[test]
    fn rotation_matrix_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let q = UnitQuaternion::random(&mut rng);
            let back = UnitQuaternion::from_rotation_matrix(&q.to_rotation_matrix());
            assert!(quat_close(&q, &back, 1e-12), "{q:?} vs {back:?}");
        }
        let half_turn = UnitQuaternion::from_axis_angle([0.0, 1.0, 1.0], PI);
        let back = UnitQuaternion::from_rotation_matrix(&half_turn.to_rotation_matrix());
        assert!(rotation_error_degrees(&half_turn, &back) < 1e-6);
    }

    #[test]
    fn pose_text_round_trip() {
        let p = Pose::from_array([0.1, -2.5, 3.0e-7, 0.9, 0.1, -0.3, 0.2]).unwrap();
        let text = p.to_string();
        assert_eq!(text.split_whitespace().count(), 7);
        let back: Pose = text.parse().unwrap();
        assert_eq!(back.to_array(), p.to_array());
        assert!("1 2 3".parse::<Pose>().is_err());
    }

    proptest! {
        #[test]
        fn angular_distance_is_sign_invariant_and_symmetric(a in arb_quat(), b in arb_quat()) {
            let d = angular_distance(&a, &b);
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert!((d - angular_distance(&negated(&a), &b)).abs() <= 1e-12);
            prop_assert!((d - angular_distance(&a, &negated(&b))).abs() <= 1e-12);
            prop_assert!((d - angular_distance(&b, &a)).abs() <= 1e-12);
        }

        #[test]
        fn angular_distance_triangle_inequality(a in arb_quat(), b in arb_quat(), c in arb_quat()) {
            let ab = angular_distance(&a, &b);
            let bc = angular_distance(&b, &c);
            let ac = angular_distance(&a, &c);
            prop_assert!(ac <= ab + bc + 1e-9);
        }

        #[test]
        fn relative_then_compose_round_trips(p1 in arb_pose(), p2 in arb_pose()) {
            let back = compose_absolute(&p1, &relative_pose(&p1, &p2));
            prop_assert!(back.translation_error(&p2) <= 1e-9);
            prop_assert!(back.rotation_error_degrees(&p2) < 1e-6);
        }

        #[test]
        fn rotation_matrix_is_a_homomorphism(a in arb_quat(), b in arb_quat()) {
            let lhs = quat_to_rotation_matrix(&quat_multiply(&a, &b));
            let rhs = mat_mul(&quat_to_rotation_matrix(&a), &quat_to_rotation_matrix(&b));
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert!((lhs[i][j] - rhs[i][j]).abs() <= 1e-9);
                }
            }
        }

        #[test]
        fn rotation_matrix_is_orthonormal(q in arb_quat()) {
            let r = quat_to_rotation_matrix(&q);
            let rrt = mat_mul(&r, &transpose(&r));
            for i in 0..3 {
                for j in 0..3 {
                    let expected = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((rrt[i][j] - expected).abs() <= 1e-9);
                }
            }
            prop_assert!((det(&r) - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn construction_yields_unit_norm(q in arb_quat()) {
            prop_assert!((q.norm() - 1.0).abs() <= 1e-9);
            prop_assert!(q.w() >= 0.0);
        }
    }
}
