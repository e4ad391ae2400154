//! Command implementations behind the `splat4d` binary.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use splat4d::edit::{apply_script, extract_instance, list_instances, CollisionPolicy, EditError, EditScript};
use splat4d::image::{RgbImage, ScalarImage};
use splat4d::io::image::quantize;
use splat4d::io::{import_synthetic, load_scene, read_image, save_scene, write_image, Image, ImageFormat};
use splat4d::metrics::{d_rmse, flow_metrics, psnr, ssim, DepthEvalConfig, FlowEvalResult};
use splat4d::model::{CameraPose, SceneSequence};
use splat4d::render::RenderSettings;

use crate::request::{render_scene, CameraChoice, RequestError};

pub const EXIT_LOAD: i32 = 2;
pub const EXIT_TIME: i32 = 3;
pub const EXIT_EDIT: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Load(String),
    #[error("{0}")]
    Time(String),
    #[error("{0}")]
    Edit(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Load(_) => EXIT_LOAD,
            CliError::Time(_) => EXIT_TIME,
            CliError::Edit(_) => EXIT_EDIT,
            CliError::Other(_) => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn other(e: impl std::fmt::Display) -> CliError {
    CliError::Other(e.to_string())
}

pub fn load(path: &Path) -> Result<SceneSequence> {
    load_scene(path).map_err(|e| CliError::Load(format!("cannot load {}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(other)?;
    std::fs::write(path, text + "\n").map_err(|e| other(format!("cannot write {}: {e}", path.display())))
}

/// Renders one time and writes `rgb.png`, `depth.pfm`, `alpha.pfm` and `provenance.json` into `out`.
pub fn render_cmd(
    scene: &Path,
    time: f64,
    pose_file: Option<&Path>,
    size: (Option<u32>, Option<u32>),
    out: &Path,
    settings: &RenderSettings,
) -> Result<()> {
    let seq = load(scene)?;
    let camera = match pose_file {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Load(format!("cannot read {}: {e}", p.display())))?;
            let pose: CameraPose =
                serde_json::from_str(&text).map_err(|e| CliError::Load(format!("bad pose file {}: {e}", p.display())))?;
            CameraChoice::Pose(pose)
        }
        None => CameraChoice::Interpolated,
    };
    let product = render_scene(&seq, time, &camera, size, settings).map_err(|e| match e {
        RequestError::Time(m) => CliError::Time(m),
        other => CliError::Other(other.to_string()),
    })?;
    std::fs::create_dir_all(out).map_err(other)?;
    let t = product.target;
    write_image(&Image::Rgb(t.rgb), out.join("rgb.png"), ImageFormat::Png).map_err(other)?;
    write_image(&Image::Scalar(t.depth), out.join("depth.pfm"), ImageFormat::Pfm).map_err(other)?;
    write_image(&Image::Scalar(t.alpha), out.join("alpha.pfm"), ImageFormat::Pfm).map_err(other)?;
    write_json(&out.join("provenance.json"), &product.report)
}

#[derive(Debug, Clone, Serialize)]
pub struct FrameRow {
    pub index: usize,
    pub timestamp: f64,
    pub psnr: f64,
    pub ssim: Option<f64>,
    pub d_rmse: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub frames: Vec<FrameRow>,
    pub mean_psnr: f64,
    pub mean_ssim: Option<f64>,
    pub mean_d_rmse: Option<f64>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Ground-truth file name of frame `index`, with an optional suffix such as `_depth`.
pub fn gt_name(index: usize, suffix: &str, ext: &str) -> String {
    format!("frame_{index:04}{suffix}.{ext}")
}

/// Lists `frame_NNNN.png` indices in `dir`.
fn gt_indices(dir: &Path) -> Result<BTreeSet<usize>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Load(format!("cannot read {}: {e}", dir.display())))?;
    let mut out = BTreeSet::new();
    for entry in entries {
        let name = entry.map_err(other)?.file_name().to_string_lossy().into_owned();
        if let Some(num) = name.strip_prefix("frame_").and_then(|r| r.strip_suffix(".png")) {
            if let Ok(i) = num.parse::<usize>() {
                if num.len() == 4 {
                    out.insert(i);
                }
            }
        }
    }
    Ok(out)
}

/// 8-bit view of a render, as it would be stored on disk.
fn quantized(img: &RgbImage) -> RgbImage {
    RgbImage {
        width: img.width,
        height: img.height,
        data: img.data.iter().map(|p| p.map(|v| quantize(v) as f32 / 255.0)).collect(),
    }
}

/// Renders every keyframe and compares against `gt_dir`.
///
/// Expects `frame_NNNN.png` per frame index, optionally `frame_NNNN_depth.pfm`
/// and `frame_NNNN_mask.png` (nonzero marks pixels valid for depth, e.g. non-sky).
/// Renders are quantized to 8 bits before comparison.
pub fn eval_cmd(scene: &Path, gt_dir: &Path, settings: &RenderSettings) -> Result<EvalReport> {
    let seq = load(scene)?;
    let expected: BTreeSet<usize> = (0..seq.frames.len()).collect();
    let found = gt_indices(gt_dir)?;
    if found != expected {
        let missing: Vec<String> = expected.difference(&found).map(|&i| gt_name(i, "", "png")).collect();
        let extra: Vec<String> = found.difference(&expected).map(|&i| gt_name(i, "", "png")).collect();
        let mut msg = String::from("ground truth does not match the scene frames");
        if !missing.is_empty() {
            let _ = write!(msg, "; missing: {}", missing.join(", "));
        }
        if !extra.is_empty() {
            let _ = write!(msg, "; unexpected: {}", extra.join(", "));
        }
        return Err(CliError::Load(msg));
    }
    let mut rows = Vec::new();
    for (index, frame) in seq.frames.iter().enumerate() {
        let t = frame.timestamp();
        let product = render_scene(&seq, t, &CameraChoice::Interpolated, (None, None), settings)
            .map_err(|e| CliError::Other(e.to_string()))?;
        let rgb_path = gt_dir.join(gt_name(index, "", "png"));
        let gt = read_image(&rgb_path).map_err(|e| CliError::Load(format!("{}: {e}", rgb_path.display())))?.into_rgb();
        let pred = quantized(&product.target.rgb);
        let p = psnr(&pred, &gt, 1.0).map_err(|e| CliError::Load(format!("{}: {e}", rgb_path.display())))?;
        let s = ssim(&pred, &gt).ok();
        let depth_path = gt_dir.join(gt_name(index, "_depth", "pfm"));
        let d = if depth_path.exists() {
            let gt_depth = read_image(&depth_path).map_err(|e| CliError::Load(format!("{}: {e}", depth_path.display())))?.into_scalar();
            let mask_path = gt_dir.join(gt_name(index, "_mask", "png"));
            let mask: Option<ScalarImage> = if mask_path.exists() {
                Some(read_image(&mask_path).map_err(|e| CliError::Load(format!("{}: {e}", mask_path.display())))?.into_scalar())
            } else {
                None
            };
            let valid: Vec<bool> = gt_depth
                .data
                .iter()
                .enumerate()
                .map(|(k, &z)| z.is_finite() && z > 0.0 && mask.as_ref().is_none_or(|m| m.data.get(k).is_some_and(|&v| v > 0.0)))
                .collect();
            let cfg = DepthEvalConfig { valid_mask: valid, align: true };
            Some(d_rmse(&product.target.depth, &gt_depth, &cfg).map_err(|e| CliError::Load(format!("{}: {e}", depth_path.display())))?)
        } else {
            None
        };
        rows.push(FrameRow {
            index,
            timestamp: t,
            psnr: p,
            ssim: s,
            d_rmse: d,
        });
    }
    Ok(EvalReport {
        mean_psnr: mean(rows.iter().map(|r| Some(r.psnr))).unwrap_or(f64::NAN),
        mean_ssim: mean(rows.iter().map(|r| r.ssim)),
        mean_d_rmse: mean(rows.iter().map(|r| r.d_rmse)),
        frames: rows,
    })
}

fn read_flow(path: &Path) -> Result<Vec<[f64; 3]>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Load(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Load(format!("{}: expected a JSON array of [x, y, z]: {e}", path.display())))
}

pub fn eval_flow_cmd(pred: &Path, gt: &Path) -> Result<FlowEvalResult> {
    let (p, g) = (read_flow(pred)?, read_flow(gt)?);
    flow_metrics(&p, &g).map_err(|e| CliError::Load(e.to_string()))
}

pub fn edit_cmd(scene: &Path, script: &Path, out: &Path, policy: CollisionPolicy) -> Result<Vec<splat4d::edit::EditNote>> {
    let seq = load(scene)?;
    let text = std::fs::read_to_string(script).map_err(|e| CliError::Load(format!("cannot read {}: {e}", script.display())))?;
    let script: EditScript = serde_json::from_str(&text).map_err(|e| CliError::Edit(format!("bad edit script: {e}")))?;
    let (edited, notes) = apply_script(&seq, &script, policy).map_err(|e| CliError::Edit(edit_message(&e)))?;
    save_scene(&edited, out).map_err(other)?;
    Ok(notes)
}

pub fn edit_message(e: &EditError) -> String {
    match e {
        EditError::UnknownInstance { id, available } => {
            format!("unknown instance {id}; available dynamic instances: {available:?}")
        }
        other => other.to_string(),
    }
}

/// Writes one instance's Gaussians and motion as a JSON insert payload.
pub fn extract_cmd(scene: &Path, instance_id: u32, out: &Path) -> Result<()> {
    let seq = load(scene)?;
    let payload = extract_instance(&seq, instance_id).map_err(|e| CliError::Edit(edit_message(&e)))?;
    write_json(out, &payload)
}

pub fn instances_cmd(scene: &Path) -> Result<String> {
    let seq = load(scene)?;
    serde_json::to_string_pretty(&list_instances(&seq)).map_err(other)
}

pub fn synth_cmd(spec: &Path, out: &Path) -> Result<SceneSequence> {
    let text = std::fs::read_to_string(spec).map_err(|e| CliError::Load(format!("cannot read {}: {e}", spec.display())))?;
    let seq = import_synthetic(&text).map_err(|e| CliError::Load(format!("{}: {e}", spec.display())))?;
    save_scene(&seq, out).map_err(other)?;
    Ok(seq)
}

/// Writes `frame_NNNN.png` and `frame_NNNN_depth.pfm` renders of every keyframe into `out`.
pub fn export_gt(scene: &Path, out: &Path, settings: &RenderSettings) -> Result<Vec<PathBuf>> {
    let seq = load(scene)?;
    std::fs::create_dir_all(out).map_err(other)?;
    let mut written = Vec::new();
    for (i, f) in seq.frames.iter().enumerate() {
        let p = render_scene(&seq, f.timestamp(), &CameraChoice::Interpolated, (None, None), settings)
            .map_err(|e| CliError::Other(e.to_string()))?;
        let rgb = out.join(gt_name(i, "", "png"));
        write_image(&Image::Rgb(p.target.rgb), &rgb, ImageFormat::Png).map_err(other)?;
        let depth = out.join(gt_name(i, "_depth", "pfm"));
        write_image(&Image::Scalar(p.target.depth), &depth, ImageFormat::Pfm).map_err(other)?;
        written.extend([rgb, depth]);
    }
    Ok(written)
}
