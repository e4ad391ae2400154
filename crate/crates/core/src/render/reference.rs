//! Brute-force compositor used as an oracle for the tiled renderer.
//!
//! Every visible splat is evaluated at every pixel after one global depth
//! sort. No tiling, no bounding boxes, no parallelism.

use super::{project_scene, ImageSize, RenderSettings, RenderTarget};
use crate::compose::ComposedScene;
use crate::model::CameraPose;

pub fn render_reference(
    scene: &ComposedScene,
    pose: &CameraPose,
    size: ImageSize,
    settings: &RenderSettings,
) -> RenderTarget {
    let (mut splats, _) = project_scene(scene, pose, size, settings);
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.order.cmp(&b.order)));
    let mut target = RenderTarget::blank(size);
    let extent_sq = settings.gaussian_extent * settings.gaussian_extent;
    for i in 0..size.height {
        for j in 0..size.width {
            let (px, py) = (j as f64 + 0.5, i as f64 + 0.5);
            let mut rgb = [0.0f64; 3];
            let mut depth = 0.0;
            let mut weight = 0.0;
            let mut t = 1.0f64;
            for s in &splats {
                let [a, b, c] = s.cov;
                let det = a * c - b * b;
                let (dx, dy) = (px - s.center[0], py - s.center[1]);
                let q = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
                if !(q <= extent_sq) {
                    continue;
                }
                let alpha = s.opacity * (-0.5 * q).exp();
                if alpha < settings.alpha_threshold {
                    continue;
                }
                for k in 0..3 {
                    rgb[k] += s.color[k] * alpha * t;
                }
                depth += s.depth * alpha * t;
                weight += alpha * t;
                t *= 1.0 - alpha;
                if t < settings.saturation_threshold {
                    break;
                }
            }
            let idx = (i * size.width + j) as usize;
            target.rgb.data[idx] = rgb.map(|v| v as f32);
            target.alpha.data[idx] = (1.0 - t).clamp(0.0, 1.0) as f32;
            target.depth.data[idx] = if weight > 0.0 { (depth / weight) as f32 } else { 0.0 };
        }
    }
    target
}
