//! Sky Gaussians on a fixed-radius hemisphere around the world origin.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::RgbImage;
use crate::model::{CameraPose, Gaussian};

pub const DEFAULT_SKY_RADIUS: f64 = 1000.0;
pub const DEFAULT_SKY_COUNT: usize = 4096;
pub const DEFAULT_SKY_LIFESPAN: f32 = 1e6;
pub const DEFAULT_SKY_OPACITY: f32 = 1.0;
/// Color of sky Gaussians that no input camera observes.
pub const UNSEEN_SKY_COLOR: [f32; 3] = [0.5, 0.6, 0.8];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SkyError {
    #[error("sky radius must be positive and finite, got {0}")]
    InvalidRadius(f64),
    #[error("at least one image is required to colorize the sky")]
    NoImages,
    #[error("{images} images but {poses} poses")]
    CountMismatch { images: usize, poses: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkyDome {
    pub radius: f64,
    pub fixed_opacity: f32,
    pub gaussians: Vec<Gaussian>,
}

impl SkyDome {
    pub fn empty() -> Self {
        Self {
            radius: DEFAULT_SKY_RADIUS,
            fixed_opacity: DEFAULT_SKY_OPACITY,
            gaussians: Vec::new(),
        }
    }

    pub fn count(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }
}

/// Per-axis scale that tiles the hemisphere (area 2πr²) with `count` splats.
pub fn sky_scale(radius: f64, count: usize) -> f32 {
    (radius * PI / (count as f64).sqrt()) as f32
}

/// Samples `count` centers area-uniformly on the +z hemisphere of `radius`.
///
/// By Archimedes' hat-box theorem the height is uniform on `[0, radius]`, so
/// sampling z and azimuth independently is area-uniform. Colors start at
/// [`UNSEEN_SKY_COLOR`].
pub fn build_sky(radius: f64, count: usize, seed: u64) -> Result<SkyDome, SkyError> {
    build_sky_at(radius, count, seed, 0.0)
}

/// Like [`build_sky`] with an explicit birth time for the sky Gaussians.
pub fn build_sky_at(
    radius: f64,
    count: usize,
    seed: u64,
    birth_time: f64,
) -> Result<SkyDome, SkyError> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(SkyError::InvalidRadius(radius));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = if count == 0 { 1.0 } else { sky_scale(radius, count) };
    let gaussians = (0..count)
        .map(|_| {
            let z: f64 = rng.random::<f64>() * radius;
            let phi: f64 = rng.random::<f64>() * 2.0 * PI;
            let rho = (radius * radius - z * z).max(0.0).sqrt();
            Gaussian {
                color: UNSEEN_SKY_COLOR,
                mean: [(rho * phi.cos()) as f32, (rho * phi.sin()) as f32, z as f32],
                rotation: [1.0, 0.0, 0.0, 0.0],
                scale: [scale; 3],
                opacity: DEFAULT_SKY_OPACITY,
                lifespan: DEFAULT_SKY_LIFESPAN,
                birth_time,
            }
        })
        .collect();
    Ok(SkyDome {
        radius,
        fixed_opacity: DEFAULT_SKY_OPACITY,
        gaussians,
    })
}

/// Pixel of `image` observing `world`, if it lies in front of the camera and inside the frame.
pub fn visible_pixel(pose: &CameraPose, width: u32, height: u32, world: &Vector3<f64>) -> Option<(u32, u32)> {
    let ([u, v], depth) = pose.project_point(world);
    if !(depth > 0.0) || !(u >= 0.0 && v >= 0.0) {
        return None;
    }
    if u < width as f64 && v < height as f64 {
        Some((v.floor() as u32, u.floor() as u32))
    } else {
        None
    }
}

/// Assigns every sky Gaussian the color of the first image (in input order) that sees it.
pub fn colorize_sky(
    dome: &SkyDome,
    images: &[RgbImage],
    poses: &[CameraPose],
) -> Result<SkyDome, SkyError> {
    if images.is_empty() {
        return Err(SkyError::NoImages);
    }
    if images.len() != poses.len() {
        return Err(SkyError::CountMismatch {
            images: images.len(),
            poses: poses.len(),
        });
    }
    let mut out = dome.clone();
    for g in &mut out.gaussians {
        let center = g.mean_f64();
        g.color = images
            .iter()
            .zip(poses)
            .find_map(|(img, pose)| {
                visible_pixel(pose, img.width, img.height, &center).map(|(i, j)| img.get(i, j))
            })
            .unwrap_or(UNSEEN_SKY_COLOR);
    }
    Ok(out)
}
