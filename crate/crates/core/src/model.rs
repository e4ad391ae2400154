//! Core scene types shared by every stage of the engine.
//!
//! World frame convention: the camera of the first frame sits at the world
//! origin with identity rotation. Cameras follow the pinhole convention with
//! +x right, +y down and +z forward. The sky hemisphere uses +z as its pole.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::sky::SkyDome;

/// Number of scalar channels in one serialized Gaussian.
pub const GAUSSIAN_CHANNELS: usize = 15;

/// Default probability at or above which a mask pixel counts as dynamic.
pub const DEFAULT_MASK_THRESHOLD: f32 = 0.5;

/// Instance id of unlabeled pixels.
pub const BACKGROUND_ID: u32 = 0;

/// Allowed deviation of a stored quaternion from unit norm.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("rotation quaternion has zero or non-finite norm")]
    DegenerateRotation,
    #[error("{field} must be {rule}, got {value}")]
    OutOfRange {
        field: &'static str,
        rule: &'static str,
        value: f64,
    },
    #[error("expected {expected} elements, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
}

/// Normalizes a (w, x, y, z) quaternion.
pub fn normalize_quat(q: [f64; 4]) -> Result<[f64; 4], ModelError> {
    let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
    if !n.is_finite() || n == 0.0 {
        return Err(ModelError::DegenerateRotation);
    }
    Ok([q[0] / n, q[1] / n, q[2] / n, q[3] / n])
}

/// Rotation matrix of a unit (w, x, y, z) quaternion.
pub fn quat_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

#[cfg(test)]
pub(crate) fn unit_quat(q: [f64; 4]) -> nalgebra::UnitQuaternion<f64> {
    nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]))
}

/// One splat primitive.
///
/// Stored in single precision to match the container payload; all math on
/// these values is done in `f64`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub color: [f32; 3],
    pub mean: [f32; 3],
    /// Unit quaternion, (w, x, y, z).
    pub rotation: [f32; 4],
    pub scale: [f32; 3],
    pub opacity: f32,
    /// Temporal spread in seconds squared.
    pub lifespan: f32,
    pub birth_time: f64,
}

impl Gaussian {
    /// Builds a Gaussian with a normalized rotation, checking the scalar ranges.
    pub fn new(
        color: [f32; 3],
        mean: [f32; 3],
        rotation: [f32; 4],
        scale: [f32; 3],
        opacity: f32,
        lifespan: f32,
        birth_time: f64,
    ) -> Result<Self, ModelError> {
        let q = normalize_quat(rotation.map(f64::from))?;
        if let Some(&s) = scale.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(ModelError::OutOfRange {
                field: "scale",
                rule: "> 0",
                value: s.into(),
            });
        }
        if !(0.0..=1.0).contains(&opacity) {
            return Err(ModelError::OutOfRange {
                field: "opacity",
                rule: "in [0, 1]",
                value: opacity.into(),
            });
        }
        if !(lifespan > 0.0 && lifespan.is_finite()) {
            return Err(ModelError::OutOfRange {
                field: "lifespan",
                rule: "> 0",
                value: lifespan.into(),
            });
        }
        Ok(Self {
            color,
            mean,
            rotation: q.map(|c| c as f32),
            scale,
            opacity,
            lifespan,
            birth_time,
        })
    }

    pub fn mean_f64(&self) -> Vector3<f64> {
        Vector3::new(self.mean[0].into(), self.mean[1].into(), self.mean[2].into())
    }

    pub fn rotation_f64(&self) -> [f64; 4] {
        self.rotation.map(f64::from)
    }

    /// The 15 stored channels in container order: color, mean, rotation, scale, opacity, lifespan.
    pub fn channels(&self) -> [f32; GAUSSIAN_CHANNELS] {
        let mut out = [0.0; GAUSSIAN_CHANNELS];
        out[0..3].copy_from_slice(&self.color);
        out[3..6].copy_from_slice(&self.mean);
        out[6..10].copy_from_slice(&self.rotation);
        out[10..13].copy_from_slice(&self.scale);
        out[13] = self.opacity;
        out[14] = self.lifespan;
        out
    }

    pub fn from_channels(ch: &[f32; GAUSSIAN_CHANNELS], birth_time: f64) -> Self {
        Self {
            color: [ch[0], ch[1], ch[2]],
            mean: [ch[3], ch[4], ch[5]],
            rotation: [ch[6], ch[7], ch[8], ch[9]],
            scale: [ch[10], ch[11], ch[12]],
            opacity: ch[13],
            lifespan: ch[14],
            birth_time,
        }
    }
}

/// Pixel-aligned grid of Gaussians for one frame, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMap {
    pub width: u32,
    pub height: u32,
    pub timestamp: f64,
    pub gaussians: Vec<Gaussian>,
    /// Optional per-pixel instance labels, `BACKGROUND_ID` for unlabeled pixels.
    pub instance_ids: Option<Vec<u32>>,
}

impl GaussianMap {
    pub fn new(
        width: u32,
        height: u32,
        timestamp: f64,
        gaussians: Vec<Gaussian>,
        instance_ids: Option<Vec<u32>>,
    ) -> Result<Self, ModelError> {
        let expected = width as usize * height as usize;
        if gaussians.len() != expected {
            return Err(ModelError::LengthMismatch {
                expected,
                actual: gaussians.len(),
            });
        }
        if let Some(ids) = &instance_ids {
            if ids.len() != expected {
                return Err(ModelError::LengthMismatch {
                    expected,
                    actual: ids.len(),
                });
            }
        }
        Ok(Self {
            width,
            height,
            timestamp,
            gaussians,
            instance_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn index(&self, row: u32, col: u32) -> usize {
        row as usize * self.width as usize + col as usize
    }

    pub fn pixel(&self, index: usize) -> (u32, u32) {
        let w = self.width as usize;
        ((index / w) as u32, (index % w) as u32)
    }

    pub fn instance_id(&self, index: usize) -> u32 {
        self.instance_ids
            .as_ref()
            .map_or(BACKGROUND_ID, |ids| ids[index])
    }
}

/// Per-pixel dynamic probability map.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicMask {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f32>,
    pub threshold: f32,
}

impl DynamicMask {
    pub fn new(width: u32, height: u32, values: Vec<f32>) -> Result<Self, ModelError> {
        let expected = width as usize * height as usize;
        if values.len() != expected {
            return Err(ModelError::LengthMismatch {
                expected,
                actual: values.len(),
            });
        }
        Ok(Self {
            width,
            height,
            values,
            threshold: DEFAULT_MASK_THRESHOLD,
        })
    }

    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width as usize * height as usize],
            threshold: DEFAULT_MASK_THRESHOLD,
        }
    }

    pub fn is_dynamic(&self, index: usize) -> bool {
        self.values[index] >= self.threshold
    }
}

/// Per-pixel dynamic flags, inclusive on ties with the threshold.
pub fn binarize_mask(mask: &DynamicMask) -> Vec<bool> {
    mask.values.iter().map(|&v| v >= mask.threshold).collect()
}

/// Pinhole intrinsics plus camera-to-world rigid transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Camera-to-world rotation, (w, x, y, z).
    pub rotation: [f64; 4],
    /// Camera origin in world coordinates.
    pub translation: [f64; 3],
    pub timestamp: f64,
}

impl CameraPose {
    pub fn new(
        intrinsics: [f64; 4],
        rotation: [f64; 4],
        translation: [f64; 3],
        timestamp: f64,
    ) -> Result<Self, ModelError> {
        let [fx, fy, cx, cy] = intrinsics;
        for (field, v) in [("fx", fx), ("fy", fy)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ModelError::OutOfRange {
                    field,
                    rule: "> 0",
                    value: v,
                });
            }
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            rotation: normalize_quat(rotation)?,
            translation,
            timestamp,
        })
    }

    /// Camera at the world origin looking down +z.
    pub fn identity(fx: f64, fy: f64, cx: f64, cy: f64, timestamp: f64) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            rotation: [1.0, 0.0, 0.0, 0.0],
            translation: [0.0; 3],
            timestamp,
        }
    }

    pub fn camera_to_world(&self) -> Matrix3<f64> {
        quat_to_matrix(self.rotation)
    }

    /// Rotation taking world directions into the camera frame.
    pub fn world_to_camera(&self) -> Matrix3<f64> {
        self.camera_to_world().transpose()
    }

    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        let t = Vector3::from(self.translation);
        self.world_to_camera() * (world - t)
    }

    /// Pinhole projection of a world point. Returns the continuous pixel
    /// coordinate (u, v) and the camera-space depth; pixel (row i, col j)
    /// covers `[j, j+1) x [i, i+1)`.
    pub fn project_point(&self, world: &Vector3<f64>) -> ([f64; 2], f64) {
        let p = self.to_camera(world);
        project_camera_point(self, &p)
    }
}

pub(crate) fn project_camera_point(pose: &CameraPose, p: &Vector3<f64>) -> ([f64; 2], f64) {
    let inv_z = 1.0 / p.z;
    (
        [pose.fx * p.x * inv_z + pose.cx, pose.fy * p.y * inv_z + pose.cy],
        p.z,
    )
}

/// One timestamped frame of a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub map: GaussianMap,
    pub mask: DynamicMask,
    pub pose: CameraPose,
}

impl Frame {
    pub fn timestamp(&self) -> f64 {
        self.map.timestamp
    }
}

/// Key of a motion field: the bit patterns of (t_a, t_b).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimePair(u64, u64);

impl TimePair {
    pub fn new(t_a: f64, t_b: f64) -> Self {
        Self(t_a.to_bits(), t_b.to_bits())
    }

    pub fn t_a(&self) -> f64 {
        f64::from_bits(self.0)
    }

    pub fn t_b(&self) -> f64 {
        f64::from_bits(self.1)
    }
}

/// Per-query 3D displacements from frame `t_a` to frame `t_b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionField {
    pub t_a: f64,
    pub t_b: f64,
    /// (row, col) pixels of the `t_a` Gaussian map.
    pub queries: Vec<[u32; 2]>,
    pub displacements: Vec<[f32; 3]>,
}

impl MotionField {
    pub fn key(&self) -> TimePair {
        TimePair::new(self.t_a, self.t_b)
    }
}

/// Removal of an instance, optionally limited to query times in `[t0, t1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub instance_id: u32,
    pub time_range: Option<[f64; 2]>,
}

impl Removal {
    pub fn applies_at(&self, t: f64) -> bool {
        self.time_range.is_none_or(|[t0, t1]| t >= t0 && t <= t1)
    }
}

/// Keyframe of an inserted instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadFrame {
    pub timestamp: f64,
    pub gaussians: Vec<Gaussian>,
}

/// Displacements for every Gaussian of the payload keyframe at `t_a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadMotion {
    pub t_a: f64,
    pub t_b: f64,
    pub displacements: Vec<[f32; 3]>,
}

/// Dynamic Gaussians of one object, detached from any pixel grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstancePayload {
    pub frames: Vec<PayloadFrame>,
    pub motion: Vec<PayloadMotion>,
}

/// An object merged into the scene by an insert edit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsertedInstance {
    pub instance_id: u32,
    pub payload: InstancePayload,
    pub time_range: Option<[f64; 2]>,
}

impl InsertedInstance {
    pub fn visible_at(&self, t: f64) -> bool {
        self.time_range.is_none_or(|[t0, t1]| t >= t0 && t <= t1)
    }
}

/// Edits layered on top of the predicted frames.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EditOverlay {
    pub removed: Vec<Removal>,
    pub inserted: Vec<InsertedInstance>,
}

impl EditOverlay {
    pub fn is_empty(&self) -> bool {
        self.removed.is_empty() && self.inserted.is_empty()
    }

    pub fn is_removed_at(&self, instance_id: u32, t: f64) -> bool {
        self.removed
            .iter()
            .any(|r| r.instance_id == instance_id && r.applies_at(t))
    }

    pub fn is_fully_removed(&self, instance_id: u32) -> bool {
        self.removed
            .iter()
            .any(|r| r.instance_id == instance_id && r.time_range.is_none())
    }
}

/// Ordered frames plus sky and pairwise motion.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSequence {
    pub frames: Vec<Frame>,
    pub sky: SkyDome,
    pub motion_fields: BTreeMap<TimePair, MotionField>,
    pub overlay: EditOverlay,
}

impl SceneSequence {
    pub fn new(frames: Vec<Frame>, sky: SkyDome, motion: Vec<MotionField>) -> Self {
        Self {
            frames,
            sky,
            motion_fields: motion.into_iter().map(|m| (m.key(), m)).collect(),
            overlay: EditOverlay::default(),
        }
    }

    pub fn empty() -> Self {
        Self::new(Vec::new(), SkyDome::empty(), Vec::new())
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.frames.iter().map(Frame::timestamp).collect()
    }

    /// Closed time interval spanned by the frames.
    pub fn time_span(&self) -> Option<(f64, f64)> {
        Some((
            self.frames.first()?.timestamp(),
            self.frames.last()?.timestamp(),
        ))
    }

    pub fn frame_at(&self, t: f64) -> Option<usize> {
        self.frames.iter().position(|f| f.timestamp() == t)
    }

    pub fn motion_field(&self, t_a: f64, t_b: f64) -> Option<&MotionField> {
        self.motion_fields.get(&TimePair::new(t_a, t_b))
    }
}
