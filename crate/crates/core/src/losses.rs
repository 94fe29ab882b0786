//! Pose, frustum and angle losses with their combinations.
//!
//! Each loss exists twice: as a plain function on `f64` values and as a tape
//! builder producing a differentiable scalar node. The plain versions serve
//! evaluation and act as the independent route in gradient checks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{RelocError, Result};
use crate::model::POSE_OUTPUTS;
use crate::pose::RelativePose;

pub const DEFAULT_BETA: f64 = 1.0;
pub const DEFAULT_MARGIN: f64 = 0.2;

/// Auxiliary term added to the pose loss during fine-tuning.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AuxLoss {
    None,
    PredictFrustum,
    EnforceFrustum,
    FrustumTriplet,
    PredictAngle,
    EnforceAngle,
    AngleTriplet,
}

impl AuxLoss {
    fn tag(self) -> Option<&'static str> {
        match self {
            AuxLoss::None => None,
            AuxLoss::PredictFrustum => Some("PF"),
            AuxLoss::EnforceFrustum => Some("EF"),
            AuxLoss::FrustumTriplet => Some("FTL"),
            AuxLoss::PredictAngle => Some("PA"),
            AuxLoss::EnforceAngle => Some("EA"),
            AuxLoss::AngleTriplet => Some("ATL"),
        }
    }
}

/// A loss variant such as `PL+PA+H`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Variant {
    pub aux: AuxLoss,
    /// Combine with learned log-variances instead of a plain sum.
    pub homoscedastic: bool,
}

impl Variant {
    pub const PL: Variant = Variant {
        aux: AuxLoss::None,
        homoscedastic: false,
    };

    /// The eleven accepted labels, in table order.
    pub const ALL: [&'static str; 11] = [
        "PL", "PL+EA", "PL+EA+H", "PL+EF", "PL+EF+H", "PL+PA", "PL+PA+H", "PL+PF", "PL+PF+H",
        "PL+ATL", "PL+FTL",
    ];

    pub fn all() -> Vec<Variant> {
        Self::ALL.iter().map(|s| s.parse().expect("listed variant")).collect()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PL")?;
        if let Some(tag) = self.aux.tag() {
            write!(f, "+{tag}")?;
        }
        if self.homoscedastic {
            f.write_str("+H")?;
        }
        Ok(())
    }
}

impl FromStr for Variant {
    type Err = RelocError;

    fn from_str(s: &str) -> Result<Self> {
        let (aux, homoscedastic) = match s {
            "PL" => (AuxLoss::None, false),
            "PL+EA" => (AuxLoss::EnforceAngle, false),
            "PL+EA+H" => (AuxLoss::EnforceAngle, true),
            "PL+EF" => (AuxLoss::EnforceFrustum, false),
            "PL+EF+H" => (AuxLoss::EnforceFrustum, true),
            "PL+PA" => (AuxLoss::PredictAngle, false),
            "PL+PA+H" => (AuxLoss::PredictAngle, true),
            "PL+PF" => (AuxLoss::PredictFrustum, false),
            "PL+PF+H" => (AuxLoss::PredictFrustum, true),
            "PL+ATL" => (AuxLoss::AngleTriplet, false),
            "PL+FTL" => (AuxLoss::FrustumTriplet, false),
            other => return Err(RelocError::UnknownVariant(other.to_string())),
        };
        Ok(Variant { aux, homoscedastic })
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the quaternion term in the pose loss.
    pub beta: f64,
    /// Triplet margin.
    pub margin: f64,
    pub variant: Variant,
    /// Frustum triplet as easy-vs-hard plus medium-vs-hard hinges.
    pub dual_triplet: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            margin: DEFAULT_MARGIN,
            variant: Variant::PL,
            dual_triplet: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(RelocError::Domain(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.margin.is_finite() && self.margin > 0.0) {
            return Err(RelocError::Domain(format!(
                "margin must be positive, got {}",
                self.margin
            )));
        }
        Ok(())
    }
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Per-element weights `[1,1,1,β,β,β,β]` of the raw head output.
pub fn pose_weights(beta: f64) -> [f64; POSE_OUTPUTS] {
    [1.0, 1.0, 1.0, beta, beta, beta, beta]
}

/// `Σ_heads ‖t̂ − t‖₁ + β‖q̂ − q‖₁` on raw (unnormalized) head outputs.
pub fn pose_loss_layerwise(preds: &[[f64; POSE_OUTPUTS]], gt: &RelativePose, beta: f64) -> f64 {
    let target = gt.to_array();
    let w = pose_weights(beta);
    preds
        .iter()
        .map(|p| {
            p.iter()
                .zip(&target)
                .zip(&w)
                .map(|((a, b), wi)| wi * (a - b).abs())
                .sum::<f64>()
        })
        .sum()
}

pub fn predict_frustum_loss(d1_hat: f64, d2_hat: f64, d1: f64, d2: f64) -> f64 {
    (d1_hat - d1).abs() + (d2_hat - d2).abs()
}

pub fn enforce_frustum_loss(e_a: &[f64], e_b: &[f64], d1: f64, d2: f64) -> f64 {
    let n = l2(e_a, e_b);
    (d1 - n).abs() + (d2 - n).abs()
}

pub fn triplet_hinge(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> f64 {
    (margin + l2(anchor, positive) - l2(anchor, negative)).max(0.0)
}

/// Easy partner pulled in, hard partner pushed out.
pub fn frustum_triplet_loss(anchor: &[f64], easy: &[f64], hard: &[f64], margin: f64) -> f64 {
    triplet_hinge(anchor, easy, hard, margin)
}

pub fn predict_angle_loss(alpha_hat: f64, alpha: f64) -> f64 {
    (alpha_hat - alpha).abs()
}

pub fn enforce_angle_loss(e_a: &[f64], e_b: &[f64], alpha: f64) -> f64 {
    (alpha - l2(e_a, e_b)).abs()
}

/// Easy partner pulled in, medium partner (large rotation) pushed out.
pub fn angle_triplet_loss(anchor: &[f64], easy: &[f64], medium: &[f64], margin: f64) -> f64 {
    triplet_hinge(anchor, easy, medium, margin)
}

pub fn combine_equal(l_pose: f64, l_aux: f64) -> f64 {
    l_pose + l_aux
}

/// `L_pose·e^{−β̂} + β̂ + L_aux·e^{−γ̂} + γ̂`
pub fn combine_homoscedastic(l_pose: f64, l_aux: f64, pose_log_var: f64, aux_log_var: f64) -> f64 {
    l_pose * (-pose_log_var).exp() + pose_log_var + l_aux * (-aux_log_var).exp() + aux_log_var
}

/// Closed-form `∂/∂β̂` of [`combine_homoscedastic`].
pub fn homoscedastic_pose_weight_derivative(l_pose: f64, pose_log_var: f64) -> f64 {
    1.0 - l_pose * (-pose_log_var).exp()
}

/// Pose L1 term of one raw head output against `gt`.
pub fn tape_pose_l1(tape: &mut Tape<'_>, raw: Var, gt: &RelativePose, beta: f64) -> Var {
    let target = tape.leaf(gt.to_array().to_vec());
    let w = tape.leaf(pose_weights(beta).to_vec());
    let d = tape.sub(raw, target);
    let d = tape.abs(d);
    let d = tape.mul(d, w);
    tape.sum(d)
}

/// `|v − target|` for a scalar node.
fn tape_abs_diff(tape: &mut Tape<'_>, v: Var, target: f64) -> Var {
    let d = tape.offset(v, -target);
    tape.abs(d)
}

/// `pred` is the two-element frustum head output.
pub fn tape_predict_frustum(tape: &mut Tape<'_>, pred: Var, d1: f64, d2: f64) -> Var {
    let target = tape.leaf(vec![d1, d2]);
    tape.l1_distance(pred, target)
}

pub fn tape_enforce_frustum(tape: &mut Tape<'_>, e_a: Var, e_b: Var, d1: f64, d2: f64) -> Var {
    let n = tape.l2_distance(e_a, e_b);
    let a = tape_abs_diff(tape, n, d1);
    let b = tape_abs_diff(tape, n, d2);
    tape.add(a, b)
}

pub fn tape_triplet(tape: &mut Tape<'_>, anchor: Var, positive: Var, negative: Var, margin: f64) -> Var {
    let pos = tape.l2_distance(anchor, positive);
    let neg = tape.l2_distance(anchor, negative);
    let d = tape.sub(pos, neg);
    let d = tape.offset(d, margin);
    tape.relu(d)
}

/// `pred` is the one-element angle head output.
pub fn tape_predict_angle(tape: &mut Tape<'_>, pred: Var, alpha: f64) -> Var {
    tape_abs_diff(tape, pred, alpha)
}

pub fn tape_enforce_angle(tape: &mut Tape<'_>, e_a: Var, e_b: Var, alpha: f64) -> Var {
    let n = tape.l2_distance(e_a, e_b);
    tape_abs_diff(tape, n, alpha)
}

pub fn tape_combine_equal(tape: &mut Tape<'_>, l_pose: Var, l_aux: Var) -> Var {
    tape.add(l_pose, l_aux)
}

pub fn tape_combine_homoscedastic(
    tape: &mut Tape<'_>,
    l_pose: Var,
    l_aux: Var,
    pose_log_var: Var,
    aux_log_var: Var,
) -> Var {
    let term = |tape: &mut Tape<'_>, l: Var, s: Var| {
        let neg = tape.scale(s, -1.0);
        let w = tape.exp(neg);
        let weighted = tape.mul(l, w);
        tape.add(weighted, s)
    };
    let a = term(tape, l_pose, pose_log_var);
    let b = term(tape, l_aux, aux_log_var);
    tape.add(a, b)
}
