//! Motion-based synthesis of dynamic Gaussians and camera poses between keyframes.

use crate::compose::{DynamicSet, Layer, Origin, Provenance};
use crate::model::{CameraPose, DynamicMask, GaussianMap, MotionField};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MotionError {
    #[error("interpolation needs t_a < t_b, got ({t_a}, {t_b})")]
    EmptyInterval { t_a: f64, t_b: f64 },
    #[error("time {t_i} outside [{t_a}, {t_b}]; extrapolation is not supported")]
    Extrapolation { t_a: f64, t_b: f64, t_i: f64 },
    #[error("motion field covers ({field_a}, {field_b}) but query is for ({t_a}, {t_b})")]
    TimestampMismatch {
        field_a: f64,
        field_b: f64,
        t_a: f64,
        t_b: f64,
    },
    #[error("query pixel ({row}, {col}) outside {width}x{height} map")]
    QueryOutOfBounds { row: u32, col: u32, width: u32, height: u32 },
    #[error("field has {queries} queries but {displacements} displacements")]
    LengthMismatch { queries: usize, displacements: usize },
    #[error("mask is {mask_w}x{mask_h}, map is {map_w}x{map_h}")]
    MaskMismatch { mask_w: u32, mask_h: u32, map_w: u32, map_h: u32 },
}

/// Interpolation time inside an adjacent keyframe pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpolationQuery {
    pub t_a: f64,
    pub t_b: f64,
    pub t_i: f64,
    /// Linear weight `(t_i - t_a) / (t_b - t_a)`.
    pub weight: f64,
}

impl InterpolationQuery {
    pub fn new(t_a: f64, t_b: f64, t_i: f64) -> Result<Self, MotionError> {
        if !(t_a < t_b) {
            return Err(MotionError::EmptyInterval { t_a, t_b });
        }
        if !(t_i >= t_a && t_i <= t_b) {
            return Err(MotionError::Extrapolation { t_a, t_b, t_i });
        }
        let weight = if t_i == t_b { 1.0 } else { (t_i - t_a) / (t_b - t_a) };
        Ok(Self { t_a, t_b, t_i, weight })
    }
}

/// Translates every queried dynamic Gaussian of `map_a` by `weight * displacement`.
///
/// Only the mean and birth time change; every other field is carried over from `t_a`.
pub fn interpolate_dynamic(
    map_a: &GaussianMap,
    mask_a: &DynamicMask,
    field: &MotionField,
    q: &InterpolationQuery,
) -> Result<DynamicSet, MotionError> {
    if field.t_a != q.t_a || field.t_b != q.t_b || map_a.timestamp != q.t_a {
        return Err(MotionError::TimestampMismatch {
            field_a: field.t_a,
            field_b: field.t_b,
            t_a: q.t_a,
            t_b: q.t_b,
        });
    }
    if mask_a.width != map_a.width || mask_a.height != map_a.height {
        return Err(MotionError::MaskMismatch {
            mask_w: mask_a.width,
            mask_h: mask_a.height,
            map_w: map_a.width,
            map_h: map_a.height,
        });
    }
    if field.queries.len() != field.displacements.len() {
        return Err(MotionError::LengthMismatch {
            queries: field.queries.len(),
            displacements: field.displacements.len(),
        });
    }
    let mut out = DynamicSet::empty(q.t_i);
    for (&[row, col], d) in field.queries.iter().zip(&field.displacements) {
        if row >= map_a.height || col >= map_a.width {
            return Err(MotionError::QueryOutOfBounds {
                row,
                col,
                width: map_a.width,
                height: map_a.height,
            });
        }
        let idx = map_a.index(row, col);
        let mut g = map_a.gaussians[idx];
        g.mean = translate(g.mean, d, q.weight);
        g.birth_time = q.t_i;
        out.push(
            g,
            Provenance {
                layer: Layer::Dynamic,
                origin: Origin::Pixel {
                    frame_time: map_a.timestamp,
                    index: idx as u32,
                },
                instance_id: map_a.instance_id(idx),
            },
        );
    }
    Ok(out)
}

pub(crate) fn translate(mean: [f32; 3], d: &[f32; 3], weight: f64) -> [f32; 3] {
    std::array::from_fn(|k| (mean[k] as f64 + weight * d[k] as f64) as f32)
}

/// Result of pose interpolation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseInterpolation {
    pub pose: CameraPose,
    /// Set when the rotations were too close for SLERP and a normalized linear blend was used.
    pub linear_fallback: bool,
}

/// Below this quaternion-space angle (radians) SLERP weights are numerically unstable.
const SLERP_MIN_ANGLE: f64 = 1e-9;

fn dot4(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm4(a: &[f64; 4]) -> f64 {
    dot4(a, a).sqrt()
}

/// Shorter-arc spherical interpolation of unit (w, x, y, z) quaternions.
///
/// Returns the interpolated unit quaternion and whether the linear fallback was taken.
pub fn slerp(qa: [f64; 4], qb: [f64; 4], weight: f64) -> ([f64; 4], bool) {
    let qb = if dot4(&qa, &qb) < 0.0 { qb.map(|c| -c) } else { qb };
    let diff: [f64; 4] = std::array::from_fn(|k| qb[k] - qa[k]);
    let sum: [f64; 4] = std::array::from_fn(|k| qb[k] + qa[k]);
    // Angle between the quaternions on the 3-sphere, half the relative rotation angle.
    let theta = 2.0 * norm4(&diff).atan2(norm4(&sum));
    let (wa, wb, fallback) = if theta < SLERP_MIN_ANGLE {
        (1.0 - weight, weight, true)
    } else {
        let s = theta.sin();
        (((1.0 - weight) * theta).sin() / s, (weight * theta).sin() / s, false)
    };
    let q: [f64; 4] = std::array::from_fn(|k| wa * qa[k] + wb * qb[k]);
    let n = norm4(&q);
    (q.map(|c| c / n), fallback)
}

/// Camera pose at `q.t_i`: linear translation and intrinsics, SLERP rotation.
pub fn interpolate_pose(
    pose_a: &CameraPose,
    pose_b: &CameraPose,
    q: &InterpolationQuery,
) -> PoseInterpolation {
    let w = q.weight;
    let lerp = |a: f64, b: f64| if w == 0.0 { a } else if w == 1.0 { b } else { (1.0 - w) * a + w * b };
    let (rotation, linear_fallback) = if w == 0.0 {
        (pose_a.rotation, false)
    } else if w == 1.0 {
        (pose_b.rotation, false)
    } else {
        slerp(pose_a.rotation, pose_b.rotation, w)
    };
    PoseInterpolation {
        pose: CameraPose {
            fx: lerp(pose_a.fx, pose_b.fx),
            fy: lerp(pose_a.fy, pose_b.fy),
            cx: lerp(pose_a.cx, pose_b.cx),
            cy: lerp(pose_a.cy, pose_b.cy),
            rotation,
            translation: std::array::from_fn(|k| lerp(pose_a.translation[k], pose_b.translation[k])),
            timestamp: q.t_i,
        },
        linear_fallback,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectClass {
    Vehicle,
    Pedestrian,
}

impl ObjectClass {
    /// Speed (m/s) above which an object counts as dynamic.
    pub fn speed_threshold(self) -> f64 {
        match self {
            ObjectClass::Vehicle => 0.5,
            ObjectClass::Pedestrian => 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DynamicLabel {
    Dynamic,
    Static,
    /// Fewer than two distinct samples; no speed can be estimated.
    Undetermined,
}

/// Timestamped 3D object centers.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub samples: Vec<(f64, [f64; 3])>,
}

impl Track {
    /// Largest finite-difference speed between consecutive samples, in time order.
    pub fn max_speed(&self) -> Option<f64> {
        let mut s = self.samples.clone();
        s.sort_by(|a, b| a.0.total_cmp(&b.0));
        s.windows(2)
            .filter(|w| w[1].0 > w[0].0)
            .map(|w| {
                let d: f64 = (0..3).map(|k| (w[1].1[k] - w[0].1[k]).powi(2)).sum::<f64>().sqrt();
                d / (w[1].0 - w[0].0)
            })
            .reduce(f64::max)
    }
}

/// Dynamic iff the maximum speed strictly exceeds the class threshold.
pub fn label_dynamic_from_tracks(track: &Track, class: ObjectClass) -> DynamicLabel {
    match track.max_speed() {
        None => DynamicLabel::Undetermined,
        Some(v) if v > class.speed_threshold() => DynamicLabel::Dynamic,
        Some(_) => DynamicLabel::Static,
    }
}
