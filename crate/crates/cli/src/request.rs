//! Render requests shared by the command line and the HTTP service.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use splat4d::compose::{compose_at, CompositionError, ComposeReport, Layer};
use splat4d::model::{CameraPose, SceneSequence};
use splat4d::render::{render, ImageSize, RenderReport, RenderSettings, RenderTarget};

use crate::settings::SettingsOverrides;

/// Largest accepted output dimension, in pixels.
pub const MAX_DIMENSION: u32 = 8192;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraChoice {
    /// Pose interpolated between the bracketing keyframes.
    #[default]
    Interpolated,
    Pose(CameraPose),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderRequest {
    /// Scene version to render; the latest when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    pub query_time: f64,
    #[serde(default)]
    pub camera: CameraChoice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
    #[serde(default)]
    pub settings: SettingsOverrides,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, message: impl ToString) -> Self {
        Self {
            field: field.into(),
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RequestError {
    #[error("invalid query time: {0}")]
    Time(String),
    #[error("invalid request: {}", .0.iter().map(|e| format!("{}: {}", e.field, e.message)).collect::<Vec<_>>().join("; "))]
    Fields(Vec<FieldError>),
}

impl RequestError {
    pub fn field_errors(&self) -> Vec<FieldError> {
        match self {
            RequestError::Time(m) => vec![FieldError::new("query_time", m)],
            RequestError::Fields(f) => f.clone(),
        }
    }
}

/// Per-instance and per-layer counts of the composed scene.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProvenanceReport {
    pub query_time: f64,
    pub width: u32,
    pub height: u32,
    pub pose: CameraPose,
    pub compose: ComposeReport,
    pub render: RenderReport,
    /// Dynamic Gaussian count per instance id.
    pub dynamic_instances: BTreeMap<u32, usize>,
    /// Static Gaussian count per frame timestamp, keyed by its decimal form.
    pub static_by_frame: BTreeMap<String, usize>,
}

pub struct RenderProduct {
    pub target: RenderTarget,
    pub report: ProvenanceReport,
}

fn resolve_pose(camera: &CameraChoice, interpolated: CameraPose) -> Result<CameraPose, FieldError> {
    match camera {
        CameraChoice::Interpolated => Ok(interpolated),
        CameraChoice::Pose(p) => {
            CameraPose::new([p.fx, p.fy, p.cx, p.cy], p.rotation, p.translation, p.timestamp)
                .map_err(|e| FieldError::new("camera.pose", e))
        }
    }
}

/// Composes `seq` at `query_time` and renders it.
pub fn render_scene(
    seq: &SceneSequence,
    query_time: f64,
    camera: &CameraChoice,
    size: (Option<u32>, Option<u32>),
    settings: &RenderSettings,
) -> Result<RenderProduct, RequestError> {
    let mut errors = Vec::new();
    if let Err(e) = settings.validate() {
        errors.push(FieldError::new("settings", e));
    }
    let first = seq.frames.first().map(|f| (f.map.width, f.map.height));
    let width = size.0.or(first.map(|d| d.0)).unwrap_or(0);
    let height = size.1.or(first.map(|d| d.1)).unwrap_or(0);
    for (field, v) in [("width", width), ("height", height)] {
        if v == 0 || v > MAX_DIMENSION {
            errors.push(FieldError::new(field, format!("must be in 1..={MAX_DIMENSION}")));
        }
    }
    let comp = match compose_at(seq, query_time) {
        Ok(c) => c,
        Err(e @ (CompositionError::OutOfSpan { .. } | CompositionError::EmptyScene)) => {
            return Err(RequestError::Time(e.to_string()))
        }
        Err(e) => {
            errors.push(FieldError::new("scene", e));
            return Err(RequestError::Fields(errors));
        }
    };
    let pose = resolve_pose(camera, comp.pose).map_err(|e| {
        errors.push(e);
        RequestError::Fields(errors.clone())
    })?;
    if !errors.is_empty() {
        return Err(RequestError::Fields(errors));
    }
    let out = render(&comp.scene, &pose, ImageSize::new(width, height), settings)
        .map_err(|e| RequestError::Fields(vec![FieldError::new("settings", e)]))?;
    let mut dynamic_instances = BTreeMap::new();
    let mut static_by_frame = BTreeMap::new();
    for p in &comp.scene.provenance {
        match p.layer {
            Layer::Dynamic => *dynamic_instances.entry(p.instance_id).or_insert(0) += 1,
            Layer::Static => {
                if let splat4d::compose::Origin::Pixel { frame_time, .. } = p.origin {
                    *static_by_frame.entry(frame_time.to_string()).or_insert(0) += 1;
                }
            }
            Layer::Sky => {}
        }
    }
    Ok(RenderProduct {
        target: out.target,
        report: ProvenanceReport {
            query_time,
            width,
            height,
            pose,
            compose: comp.report,
            render: out.report,
            dynamic_instances,
            static_by_frame,
        },
    })
}
