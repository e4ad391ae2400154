//! Forward tile-based Gaussian splatting.
//!
//! Each Gaussian is projected to a 2D splat with the perspective Jacobian,
//! binned into screen tiles by the bounding box of its `gaussian_extent`
//! ellipse, and composited front to back per pixel. A splat contributes at a
//! pixel iff the pixel center lies inside that ellipse and its alpha reaches
//! `alpha_threshold`; tiling only accelerates the search and never changes
//! which contributions are summed.

#[cfg(any(test, feature = "reference"))]
pub mod reference;

use nalgebra::{Matrix2x3, Matrix3, Vector3};
use rayon::prelude::*;

use crate::compose::{modulated, ComposedScene};
use crate::image::{RgbImage, ScalarImage};
use crate::model::{project_camera_point, quat_to_matrix, CameraPose, Gaussian};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RenderError {
    #[error("tile size must be at least 1")]
    TileSize,
    #[error("alpha threshold must lie in (0, 1), got {0}")]
    AlphaThreshold(f64),
    #[error("clip planes must satisfy 0 <= near < far, got ({near}, {far})")]
    ClipPlanes { near: f64, far: f64 },
    #[error("invalid render setting {0}")]
    Setting(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSettings {
    pub tile_size: u32,
    /// Splat contributions with alpha below this are skipped.
    pub alpha_threshold: f64,
    /// Compositing stops once transmittance falls below this.
    pub saturation_threshold: f64,
    pub near_clip: f64,
    pub far_clip: f64,
    /// Footprint radius in standard deviations of the projected covariance.
    pub gaussian_extent: f64,
    /// Added to the diagonal of every projected covariance, px².
    pub covariance_floor: f64,
    /// The projection Jacobian is evaluated with the view direction clamped
    /// to this multiple of the half field of view, so splats far outside
    /// the image do not blow up.
    pub frustum_guard: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            tile_size: 16,
            alpha_threshold: 1.0 / 255.0,
            saturation_threshold: 1e-4,
            near_clip: 0.2,
            far_clip: 2000.0,
            gaussian_extent: 3.0,
            covariance_floor: 0.3,
            frustum_guard: 1.3,
        }
    }
}

impl RenderSettings {
    pub fn validate(&self) -> Result<(), RenderError> {
        if self.tile_size < 1 {
            return Err(RenderError::TileSize);
        }
        if !(self.alpha_threshold > 0.0 && self.alpha_threshold < 1.0) {
            return Err(RenderError::AlphaThreshold(self.alpha_threshold));
        }
        if !(self.near_clip >= 0.0 && self.near_clip < self.far_clip) {
            return Err(RenderError::ClipPlanes {
                near: self.near_clip,
                far: self.far_clip,
            });
        }
        if !(self.saturation_threshold >= 0.0 && self.saturation_threshold < 1.0) {
            return Err(RenderError::Setting("saturation_threshold"));
        }
        if !(self.gaussian_extent > 0.0) {
            return Err(RenderError::Setting("gaussian_extent"));
        }
        if !(self.covariance_floor >= 0.0) {
            return Err(RenderError::Setting("covariance_floor"));
        }
        if !(self.frustum_guard >= 1.0 && self.frustum_guard.is_finite()) {
            return Err(RenderError::Setting("frustum_guard"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }
}

/// A Gaussian projected into one camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat {
    /// Continuous pixel coordinate of the projected mean.
    pub center: [f64; 2],
    /// Projected covariance `[xx, xy, yy]` after the floor, px².
    pub cov: [f64; 3],
    /// Inverse covariance `[xx, xy, yy]`.
    pub conic: [f64; 3],
    /// View-space z of the mean, meters.
    pub depth: f64,
    /// Lifespan-modulated opacity.
    pub opacity: f64,
    pub color: [f64; 3],
    /// Position in the composed scene; breaks depth ties.
    pub order: u32,
}

impl Splat {
    /// Half extents of the bounding box of the `extent`-sigma ellipse.
    pub fn half_extents(&self, extent: f64) -> [f64; 2] {
        [extent * self.cov[0].sqrt(), extent * self.cov[2].sqrt()]
    }

    /// Squared Mahalanobis distance from the center to pixel position `p`.
    #[inline]
    pub fn mahalanobis_sq(&self, p: [f64; 2]) -> f64 {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        self.conic[0] * dx * dx + 2.0 * self.conic[1] * dx * dy + self.conic[2] * dy * dy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CullReason {
    /// Mean outside `(near_clip, far_clip)`.
    ClipPlanes,
    /// Modulated opacity below `alpha_threshold`.
    Transparent,
    /// Non-finite values or a non-invertible projected covariance.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Visible(Splat),
    Culled(CullReason),
}

/// World covariance `R diag(s²) Rᵀ` of a Gaussian.
pub fn world_covariance(g: &Gaussian) -> Matrix3<f64> {
    let r = quat_to_matrix(g.rotation_f64());
    let s = Vector3::new(g.scale[0] as f64, g.scale[1] as f64, g.scale[2] as f64);
    let d = Matrix3::from_diagonal(&s.component_mul(&s));
    r * d * r.transpose()
}

/// Projects `g` into `pose` at `query_time` for an image of `size`.
pub fn project_gaussian(
    g: &Gaussian,
    pose: &CameraPose,
    size: ImageSize,
    query_time: f64,
    settings: &RenderSettings,
    order: u32,
) -> Projection {
    let sigma_t = g.lifespan as f64;
    if !(sigma_t > 0.0) {
        return Projection::Culled(CullReason::Degenerate);
    }
    let world = g.mean_f64();
    let w2c = pose.world_to_camera();
    let p = w2c * (world - Vector3::from(pose.translation));
    if !p.iter().all(|v| v.is_finite()) {
        return Projection::Culled(CullReason::Degenerate);
    }
    if !(p.z > settings.near_clip && p.z < settings.far_clip) {
        return Projection::Culled(CullReason::ClipPlanes);
    }
    let opacity = modulated(g.opacity as f64, sigma_t, query_time - g.birth_time);
    if !(opacity >= settings.alpha_threshold) {
        return Projection::Culled(if opacity.is_nan() {
            CullReason::Degenerate
        } else {
            CullReason::Transparent
        });
    }
    let (center, _) = project_camera_point(pose, &p);
    let inv_z = 1.0 / p.z;
    let margin = settings.frustum_guard - 1.0;
    let (w, h) = (size.width as f64, size.height as f64);
    let tan_x = (p.x * inv_z).clamp(
        (-pose.cx - margin * w / 2.0) / pose.fx,
        (w - pose.cx + margin * w / 2.0) / pose.fx,
    );
    let tan_y = (p.y * inv_z).clamp(
        (-pose.cy - margin * h / 2.0) / pose.fy,
        (h - pose.cy + margin * h / 2.0) / pose.fy,
    );
    let j = Matrix2x3::new(
        pose.fx * inv_z,
        0.0,
        -pose.fx * tan_x * inv_z,
        0.0,
        pose.fy * inv_z,
        -pose.fy * tan_y * inv_z,
    );
    let t = j * w2c;
    let cov2 = t * world_covariance(g) * t.transpose();
    let a = cov2[(0, 0)] + settings.covariance_floor;
    let b = cov2[(0, 1)];
    let c = cov2[(1, 1)] + settings.covariance_floor;
    let det = a * c - b * b;
    if !(det > 0.0 && det.is_finite() && a.is_finite() && c.is_finite()) {
        return Projection::Culled(CullReason::Degenerate);
    }
    let color = g.color.map(f64::from);
    if !color.iter().all(|v| v.is_finite()) {
        return Projection::Culled(CullReason::Degenerate);
    }
    Projection::Visible(Splat {
        center,
        cov: [a, b, c],
        conic: [c / det, -b / det, a / det],
        depth: p.z,
        opacity,
        color,
        order,
    })
}

/// Rendered color, expected depth and accumulated opacity.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderTarget {
    pub width: u32,
    pub height: u32,
    pub rgb: RgbImage,
    /// Alpha-weighted expected depth, normalized by accumulated weight; 0 where nothing was hit.
    pub depth: ScalarImage,
    /// `1 - T` with `T` the final transmittance.
    pub alpha: ScalarImage,
}

impl RenderTarget {
    pub fn blank(size: ImageSize) -> Self {
        Self {
            width: size.width,
            height: size.height,
            rgb: RgbImage::new(size.width, size.height),
            depth: ScalarImage::new(size.width, size.height),
            alpha: ScalarImage::new(size.width, size.height),
        }
    }
}

/// Splat counts gathered during a render.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize)]
pub struct RenderReport {
    pub visible: usize,
    pub culled_clip: usize,
    pub culled_transparent: usize,
    pub degenerate: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub target: RenderTarget,
    pub report: RenderReport,
}

/// Projects every Gaussian of `scene`, returning the visible splats in scene order.
pub fn project_scene(
    scene: &ComposedScene,
    pose: &CameraPose,
    size: ImageSize,
    settings: &RenderSettings,
) -> (Vec<Splat>, RenderReport) {
    let projections: Vec<Projection> = scene
        .gaussians
        .par_iter()
        .enumerate()
        .map(|(i, g)| project_gaussian(g, pose, size, scene.query_time, settings, i as u32))
        .collect();
    let mut report = RenderReport::default();
    let mut splats = Vec::with_capacity(projections.len());
    for p in projections {
        match p {
            Projection::Visible(s) => {
                report.visible += 1;
                splats.push(s);
            }
            Projection::Culled(CullReason::ClipPlanes) => report.culled_clip += 1,
            Projection::Culled(CullReason::Transparent) => report.culled_transparent += 1,
            Projection::Culled(CullReason::Degenerate) => report.degenerate += 1,
        }
    }
    (splats, report)
}

pub(crate) fn depth_order(a: &Splat, b: &Splat) -> std::cmp::Ordering {
    a.depth.total_cmp(&b.depth).then(a.order.cmp(&b.order))
}

/// Inclusive pixel index range whose centers `k + 0.5` can fall within `half` of `center`.
fn pixel_range(center: f64, half: f64, len: u32) -> Option<(u32, u32)> {
    // Widen slightly so rounding never excludes a pixel the ellipse test accepts.
    let half = half * (1.0 + 1e-9) + 1e-9;
    let lo = (center - half - 0.5).ceil();
    let hi = (center + half - 0.5).floor();
    if !(lo <= hi) || hi < 0.0 || lo >= len as f64 {
        return None;
    }
    Some((lo.max(0.0) as u32, hi.min(len as f64 - 1.0) as u32))
}

struct PixelAccum {
    rgb: [f64; 3],
    depth: f64,
    weight: f64,
    transmittance: f64,
}

#[inline]
fn composite_pixel<'a>(
    p: [f64; 2],
    splats: impl Iterator<Item = &'a Splat>,
    settings: &RenderSettings,
) -> PixelAccum {
    let extent_sq = settings.gaussian_extent * settings.gaussian_extent;
    let mut acc = PixelAccum {
        rgb: [0.0; 3],
        depth: 0.0,
        weight: 0.0,
        transmittance: 1.0,
    };
    for s in splats {
        let q = s.mahalanobis_sq(p);
        if !(q <= extent_sq) {
            continue;
        }
        let alpha = s.opacity * (-0.5 * q).exp();
        if alpha < settings.alpha_threshold {
            continue;
        }
        let w = alpha * acc.transmittance;
        for k in 0..3 {
            acc.rgb[k] += s.color[k] * w;
        }
        acc.depth += s.depth * w;
        acc.weight += w;
        acc.transmittance *= 1.0 - alpha;
        if acc.transmittance < settings.saturation_threshold {
            break;
        }
    }
    acc
}

/// Renders `scene` from `pose`. Tiles are composited in parallel; output is
/// deterministic for fixed inputs.
pub fn render(
    scene: &ComposedScene,
    pose: &CameraPose,
    size: ImageSize,
    settings: &RenderSettings,
) -> Result<RenderOutput, RenderError> {
    settings.validate()?;
    let (splats, report) = project_scene(scene, pose, size, settings);
    let ts = settings.tile_size;
    let tiles_x = size.width.div_ceil(ts);
    let tiles_y = size.height.div_ceil(ts);
    let n_tiles = (tiles_x * tiles_y) as usize;

    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); n_tiles];
    for (si, s) in splats.iter().enumerate() {
        let [hx, hy] = s.half_extents(settings.gaussian_extent);
        let (Some((x0, x1)), Some((y0, y1))) = (
            pixel_range(s.center[0], hx, size.width),
            pixel_range(s.center[1], hy, size.height),
        ) else {
            continue;
        };
        for ty in y0 / ts..=y1 / ts {
            for tx in x0 / ts..=x1 / ts {
                bins[(ty * tiles_x + tx) as usize].push(si as u32);
            }
        }
    }

    let tiles: Vec<(u32, u32, Vec<PixelAccum>)> = bins
        .into_par_iter()
        .enumerate()
        .map(|(ti, mut list)| {
            list.sort_by(|&a, &b| depth_order(&splats[a as usize], &splats[b as usize]));
            let tx = ti as u32 % tiles_x;
            let ty = ti as u32 / tiles_x;
            let (x0, y0) = (tx * ts, ty * ts);
            let x1 = (x0 + ts).min(size.width);
            let y1 = (y0 + ts).min(size.height);
            let mut px = Vec::with_capacity(((x1 - x0) * (y1 - y0)) as usize);
            for i in y0..y1 {
                for j in x0..x1 {
                    let p = [j as f64 + 0.5, i as f64 + 0.5];
                    px.push(composite_pixel(p, list.iter().map(|&k| &splats[k as usize]), settings));
                }
            }
            (x0, y0, px)
        })
        .collect();

    let mut target = RenderTarget::blank(size);
    let w = size.width as usize;
    for (x0, y0, px) in tiles {
        let tw = (x0 + ts).min(size.width) - x0;
        for (k, acc) in px.into_iter().enumerate() {
            let i = y0 as usize + k / tw as usize;
            let j = x0 as usize + k % tw as usize;
            write_pixel(&mut target, i * w + j, &acc);
        }
    }
    Ok(RenderOutput { target, report })
}

fn write_pixel(target: &mut RenderTarget, idx: usize, acc: &PixelAccum) {
    target.rgb.data[idx] = acc.rgb.map(|c| c as f32);
    target.alpha.data[idx] = (1.0 - acc.transmittance).clamp(0.0, 1.0) as f32;
    target.depth.data[idx] = if acc.weight > 0.0 {
        (acc.depth / acc.weight) as f32
    } else {
        0.0
    };
}

/// Sky pixels: accumulated opacity strictly below `threshold`.
pub fn render_sky_mask(target: &RenderTarget, threshold: f32) -> Vec<bool> {
    target.alpha.data.iter().map(|&a| a < threshold).collect()
}

/// Image-space refinement attached after rendering (for example an external
/// inpainting model for holes left by edits). The engine ships none.
pub trait PostRenderHook: Send + Sync {
    fn refine(&self, scene: &ComposedScene, target: &mut RenderTarget);
}

/// [`render`] followed by `hook`.
pub fn render_with_hook(
    scene: &ComposedScene,
    pose: &CameraPose,
    size: ImageSize,
    settings: &RenderSettings,
    hook: &dyn PostRenderHook,
) -> Result<RenderOutput, RenderError> {
    let mut out = render(scene, pose, size, settings)?;
    hook.refine(scene, &mut out.target);
    Ok(out)
}
