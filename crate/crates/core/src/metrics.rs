//! Image, depth, mask and scene-flow evaluation metrics.

use crate::image::{RgbImage, ScalarImage};

/// PSNR reported for identical images.
pub const PSNR_IDENTICAL_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("dimension mismatch: {a:?} vs {b:?}")]
    DimensionMismatch { a: (u32, u32), b: (u32, u32) },
    #[error("peak must be positive, got {0}")]
    InvalidPeak(f64),
    #[error("image {0:?} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")]
    TooSmall((u32, u32)),
    #[error("evaluation mask selects no pixels")]
    EmptyMask,
    #[error("flow sets differ in size: {pred} vs {gt}")]
    CountMismatch { pred: usize, gt: usize },
    #[error("no flow vectors to evaluate")]
    EmptyInput,
}

fn same_dims(a: (u32, u32), b: (u32, u32)) -> Result<(), MetricError> {
    if a == b {
        Ok(())
    } else {
        Err(MetricError::DimensionMismatch { a, b })
    }
}

/// `10 log10(peak² / MSE)` over all channels, [`PSNR_IDENTICAL_DB`] when MSE is zero.
pub fn psnr(a: &RgbImage, b: &RgbImage, peak: f64) -> Result<f64, MetricError> {
    same_dims(a.dims(), b.dims())?;
    if !(peak > 0.0) {
        return Err(MetricError::InvalidPeak(peak));
    }
    let n = a.data.len() * 3;
    let se: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .flat_map(|(p, q)| (0..3).map(move |c| (p[c] as f64 - q[c] as f64).powi(2)))
        .sum();
    Ok(psnr_from_mse(se / n.max(1) as f64, peak))
}

/// PSNR of a single-channel image pair.
pub fn psnr_scalar(a: &ScalarImage, b: &ScalarImage, peak: f64) -> Result<f64, MetricError> {
    same_dims(a.dims(), b.dims())?;
    if !(peak > 0.0) {
        return Err(MetricError::InvalidPeak(peak));
    }
    let se: f64 = a.data.iter().zip(&b.data).map(|(p, q)| (*p as f64 - *q as f64).powi(2)).sum();
    Ok(psnr_from_mse(se / a.data.len().max(1) as f64, peak))
}

fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        PSNR_IDENTICAL_DB
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (k, v) in w.iter_mut().enumerate() {
        let x = k as f64 - half;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable "valid" Gaussian filter: output is (w-10)x(h-10).
fn filter_valid(data: &[f64], w: usize, h: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ow * h];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = (0..SSIM_WINDOW).map(|k| win[k] * data[i * w + j + k]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..SSIM_WINDOW).map(|k| win[k] * rows[(i + k) * ow + j]).sum();
        }
    }
    out
}

fn ssim_channel(a: &[f64], b: &[f64], w: usize, h: usize, data_range: f64) -> f64 {
    let win = gaussian_window();
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = filter_valid(a, w, h, &win);
    let mu_b = filter_valid(b, w, h, &win);
    let aa = filter_valid(&prod(a, a), w, h, &win);
    let bb = filter_valid(&prod(b, b), w, h, &win);
    let ab = filter_valid(&prod(a, b), w, h, &win);
    let n = mu_a.len();
    let mut total = 0.0;
    for k in 0..n {
        let (ma, mb) = (mu_a[k], mu_b[k]);
        let va = aa[k] - ma * ma;
        let vb = bb[k] - mb * mb;
        let cov = ab[k] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / n as f64
}

/// Mean local SSIM with an 11x11 Gaussian window (sigma 1.5), data range 1,
/// computed per channel and averaged.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64, MetricError> {
    same_dims(a.dims(), b.dims())?;
    let (w, h) = (a.width as usize, a.height as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricError::TooSmall(a.dims()));
    }
    let mut sum = 0.0;
    for c in 0..3 {
        let ca: Vec<f64> = a.data.iter().map(|p| p[c] as f64).collect();
        let cb: Vec<f64> = b.data.iter().map(|p| p[c] as f64).collect();
        sum += ssim_channel(&ca, &cb, w, h, 1.0);
    }
    Ok(sum / 3.0)
}

/// Which pixels enter depth metrics, and whether to fit an affine alignment first.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthEvalConfig {
    pub valid_mask: Vec<bool>,
    pub align: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct DepthAlignment {
    pub scale: f64,
    pub offset: f64,
    /// Prediction was constant over the mask; scale is 0 and offset the mean target.
    pub degenerate: bool,
}

impl DepthAlignment {
    pub fn apply(&self, pred: f64) -> f64 {
        self.scale * pred + self.offset
    }
}

fn check_mask(pred: &ScalarImage, gt: &ScalarImage, mask: &[bool]) -> Result<(), MetricError> {
    same_dims(pred.dims(), gt.dims())?;
    if mask.len() != pred.data.len() {
        return Err(MetricError::DimensionMismatch {
            a: pred.dims(),
            b: (mask.len() as u32, 1),
        });
    }
    Ok(())
}

/// Least-squares `(scale, offset)` minimizing `Σ (scale·pred + offset − gt)²` over the mask.
pub fn align_depth(pred: &ScalarImage, gt: &ScalarImage, mask: &[bool]) -> Result<DepthAlignment, MetricError> {
    check_mask(pred, gt, mask)?;
    let pairs: Vec<(f64, f64)> = pred
        .data
        .iter()
        .zip(&gt.data)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((&p, &g), _)| (p as f64, g as f64))
        .collect();
    if pairs.is_empty() {
        return Err(MetricError::EmptyMask);
    }
    let n = pairs.len() as f64;
    let mean_p = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_g = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    // Centered normal equations.
    let var_p: f64 = pairs.iter().map(|p| (p.0 - mean_p).powi(2)).sum();
    let cov: f64 = pairs.iter().map(|p| (p.0 - mean_p) * (p.1 - mean_g)).sum();
    if var_p <= f64::EPSILON * mean_p.abs().max(1.0).powi(2) * n {
        return Ok(DepthAlignment {
            scale: 0.0,
            offset: mean_g,
            degenerate: true,
        });
    }
    let scale = cov / var_p;
    Ok(DepthAlignment {
        scale,
        offset: mean_g - scale * mean_p,
        degenerate: false,
    })
}

/// RMSE of (optionally aligned) predicted depth against ground truth over the valid mask.
pub fn d_rmse(pred: &ScalarImage, gt: &ScalarImage, cfg: &DepthEvalConfig) -> Result<f64, MetricError> {
    check_mask(pred, gt, &cfg.valid_mask)?;
    let align = if cfg.align {
        align_depth(pred, gt, &cfg.valid_mask)?
    } else {
        DepthAlignment {
            scale: 1.0,
            offset: 0.0,
            degenerate: false,
        }
    };
    let mut se = 0.0;
    let mut n = 0usize;
    for ((&p, &g), &m) in pred.data.iter().zip(&gt.data).zip(&cfg.valid_mask) {
        if m {
            se += (align.apply(p as f64) - g as f64).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return Err(MetricError::EmptyMask);
    }
    Ok((se / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct FlowEvalResult {
    /// Mean end-point error, meters.
    pub epe3d: f64,
    /// Percent of points with EPE < 0.05 m or relative error < 5%.
    pub acc5: f64,
    /// Percent of points with EPE < 0.10 m or relative error < 10%.
    pub acc10: f64,
    /// Mean angle between (pred, 1) and (gt, 1), radians.
    pub theta: f64,
}

fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Angle between two 4-vectors: `2 atan2(|â − b̂|, |â + b̂|)`, exact zero for equal inputs.
fn angle4(a: [f64; 4], b: [f64; 4]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (mut d, mut s) = (0.0, 0.0);
    for k in 0..4 {
        let (x, y) = (a[k] / na, b[k] / nb);
        d += (x - y) * (x - y);
        s += (x + y) * (x + y);
    }
    2.0 * d.sqrt().atan2(s.sqrt())
}

/// Scene-flow metrics over paired per-point 3D vectors.
pub fn flow_metrics(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<FlowEvalResult, MetricError> {
    if pred.len() != gt.len() {
        return Err(MetricError::CountMismatch {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    if pred.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let n = pred.len() as f64;
    let (mut epe_sum, mut acc5, mut acc10, mut theta_sum) = (0.0, 0usize, 0usize, 0.0);
    for (p, g) in pred.iter().zip(gt) {
        let err = norm3(&[p[0] - g[0], p[1] - g[1], p[2] - g[2]]);
        let gn = norm3(g);
        let rel = if gn > 0.0 { err / gn } else if err == 0.0 { 0.0 } else { f64::INFINITY };
        epe_sum += err;
        if err < 0.05 || rel < 0.05 {
            acc5 += 1;
        }
        if err < 0.10 || rel < 0.10 {
            acc10 += 1;
        }
        theta_sum += angle4([p[0], p[1], p[2], 1.0], [g[0], g[1], g[2], 1.0]);
    }
    Ok(FlowEvalResult {
        epe3d: epe_sum / n,
        acc5: 100.0 * acc5 as f64 / n,
        acc10: 100.0 * acc10 as f64 / n,
        theta: theta_sum / n,
    })
}

/// Mean binary cross-entropy with predictions clamped to `[1e-7, 1 − 1e-7]`.
pub fn bce(pred: &ScalarImage, gt: &[bool]) -> Result<f64, MetricError> {
    if gt.len() != pred.data.len() {
        return Err(MetricError::DimensionMismatch {
            a: pred.dims(),
            b: (gt.len() as u32, 1),
        });
    }
    if gt.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let total: f64 = pred
        .data
        .iter()
        .zip(gt)
        .map(|(&p, &y)| {
            let p = (p as f64).clamp(BCE_EPS, 1.0 - BCE_EPS);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / gt.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rgb(rng: &mut ChaCha8Rng, w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    #[test]
    fn psnr_identical_is_sentinel() {
        let a = RgbImage::filled(4, 4, [0.3; 3]);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), 99.0);
    }

    #[test]
    fn psnr_half_vs_zero() {
        let a = RgbImage::filled(5, 3, [0.5; 3]);
        let b = RgbImage::new(5, 3);
        let v = psnr(&a, &b, 1.0).unwrap();
        assert!((v - 20.0 * 2f64.log10()).abs() < 1e-12);
        assert!((v - 6.0206).abs() < 1e-3);
    }

    #[test]
    fn psnr_single_pixel_difference() {
        let n = 64;
        let a = ScalarImage::new(8, 8);
        let mut b = a.clone();
        b.data[17] = 1.0;
        let v = psnr_scalar(&a, &b, 1.0).unwrap();
        assert!((v - 10.0 * (n as f64).log10()).abs() < 1e-12);
    }

    #[test]
    fn psnr_rejects_bad_input() {
        let a = RgbImage::new(2, 2);
        assert!(matches!(psnr(&a, &RgbImage::new(3, 2), 1.0), Err(MetricError::DimensionMismatch { .. })));
        assert_eq!(psnr(&a, &a, 0.0), Err(MetricError::InvalidPeak(0.0)));
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_rgb(&mut rng, 20, 16);
        let b = random_rgb(&mut rng, 20, 16);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
    }

    #[test]
    fn ssim_anticorrelated_checkerboard_is_negative() {
        let a = RgbImage::from_fn(16, 16, |i, j| [((i + j) % 2) as f32; 3]);
        let b = RgbImage::from_fn(16, 16, |i, j| [1.0 - ((i + j) % 2) as f32; 3]);
        assert!(ssim(&a, &b).unwrap() < 0.0);
    }

    #[test]
    fn ssim_constant_images_closed_form() {
        let (ma, mb) = (0.25f64, 0.75f64);
        let a = RgbImage::filled(12, 12, [ma as f32; 3]);
        let b = RgbImage::filled(12, 12, [mb as f32; 3]);
        let c1 = 0.01f64.powi(2);
        let c2 = 0.03f64.powi(2);
        let expected = ((2.0 * ma * mb + c1) * c2) / ((ma * ma + mb * mb + c1) * c2);
        assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn ssim_needs_window_sized_images() {
        let a = RgbImage::new(10, 20);
        assert_eq!(ssim(&a, &a), Err(MetricError::TooSmall((10, 20))));
    }

    #[test]
    fn alignment_cases() {
        let gt = ScalarImage::from_fn(4, 4, |i, j| (i * 4 + j) as f32 + 1.0);
        let mask = vec![true; 16];
        let id = align_depth(&gt, &gt, &mask).unwrap();
        assert!((id.scale - 1.0).abs() < 1e-12 && id.offset.abs() < 1e-12);

        let pred = ScalarImage {
            data: gt.data.iter().map(|g| 2.0 * g + 3.0).collect(),
            ..gt.clone()
        };
        let a = align_depth(&pred, &gt, &mask).unwrap();
        assert!((a.scale - 0.5).abs() < 1e-12 && (a.offset + 1.5).abs() < 1e-12);
        let cfg = DepthEvalConfig { valid_mask: mask.clone(), align: true };
        assert!(d_rmse(&pred, &gt, &cfg).unwrap() < 1e-12);

        let flat = ScalarImage::filled(4, 4, 7.0);
        let d = align_depth(&flat, &gt, &mask).unwrap();
        assert!(d.degenerate);
        assert_eq!(d.scale, 0.0);
        assert!((d.offset - 8.5).abs() < 1e-12);
    }

    #[test]
    fn d_rmse_unaligned_offset() {
        let gt = ScalarImage::from_fn(3, 3, |i, j| (i + j) as f32);
        let pred = ScalarImage {
            data: gt.data.iter().map(|g| g + 1.0).collect(),
            ..gt.clone()
        };
        let cfg = DepthEvalConfig { valid_mask: vec![true; 9], align: false };
        assert!((d_rmse(&pred, &gt, &cfg).unwrap() - 1.0).abs() < 1e-12);
        let empty = DepthEvalConfig { valid_mask: vec![false; 9], align: false };
        assert_eq!(d_rmse(&pred, &gt, &empty), Err(MetricError::EmptyMask));
    }

    #[test]
    fn d_rmse_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let gt = ScalarImage::from_fn(8, 8, |_, _| rng.random_range(1.0..50.0));
        let pred = ScalarImage::from_fn(8, 8, |_, _| rng.random_range(1.0..50.0));
        let mask: Vec<bool> = (0..64).map(|_| rng.random_bool(0.7)).collect();
        let cfg = DepthEvalConfig { valid_mask: mask.clone(), align: true };
        let got = d_rmse(&pred, &gt, &cfg).unwrap();

        // Uncentered 2x2 normal equations solved by Cramer's rule.
        let (mut sp, mut sg, mut spp, mut spg, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for k in 0..64 {
            if mask[k] {
                let (p, g) = (pred.data[k] as f64, gt.data[k] as f64);
                sp += p;
                sg += g;
                spp += p * p;
                spg += p * g;
                n += 1.0;
            }
        }
        let det = spp * n - sp * sp;
        let a = (spg * n - sp * sg) / det;
        let b = (spp * sg - sp * spg) / det;
        let mut se = 0.0;
        for k in 0..64 {
            if mask[k] {
                se += (a * pred.data[k] as f64 + b - gt.data[k] as f64).powi(2);
            }
        }
        let oracle = (se / n).sqrt();
        assert!((got - oracle).abs() < 1e-9, "{got} vs {oracle}");
    }

    #[test]
    fn alignment_is_a_residual_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gt = ScalarImage::from_fn(6, 6, |_, _| rng.random_range(0.0..10.0));
        let pred = ScalarImage::from_fn(6, 6, |_, _| rng.random_range(0.0..10.0));
        let mask = vec![true; 36];
        let a = align_depth(&pred, &gt, &mask).unwrap();
        let residual = |s: f64, o: f64| -> f64 {
            pred.data.iter().zip(&gt.data).map(|(&p, &g)| (s * p as f64 + o - g as f64).powi(2)).sum()
        };
        let best = residual(a.scale, a.offset);
        for (ds, dof) in [(1e-3, 0.0), (-1e-3, 0.0), (0.0, 1e-3), (0.0, -1e-3)] {
            assert!(residual(a.scale + ds, a.offset + dof) >= best);
        }
    }

    #[test]
    fn flow_identity() {
        let v = vec![[1.0, 2.0, 3.0], [0.0, 0.0, 0.0], [-0.5, 0.1, 9.0]];
        let r = flow_metrics(&v, &v).unwrap();
        assert_eq!(r, FlowEvalResult { epe3d: 0.0, acc5: 100.0, acc10: 100.0, theta: 0.0 });
    }

    #[test]
    fn flow_constant_perpendicular_offset() {
        let gt = vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let pred = vec![[1.0, 0.1, 0.0], [0.0, 1.0, 0.1], [0.1, 0.0, 1.0]];
        let r = flow_metrics(&pred, &gt).unwrap();
        assert!((r.epe3d - 0.1).abs() < 1e-12);
        // 0.1 m at 10% relative error: neither threshold is met strictly.
        assert_eq!(r.acc5, 0.0);
    }

    #[test]
    fn flow_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let gt: Vec<[f64; 3]> = (0..40).map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]).collect();
        let pred: Vec<[f64; 3]> = gt
            .iter()
            .map(|g| [g[0] + rng.random_range(-0.3..0.3), g[1] + rng.random_range(-0.3..0.3), g[2]])
            .collect();
        let r = flow_metrics(&pred, &gt).unwrap();
        let (mut epe, mut a5, mut a10, mut th) = (0.0, 0.0, 0.0, 0.0);
        for (p, g) in pred.iter().zip(&gt) {
            let e = ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2) + (p[2] - g[2]).powi(2)).sqrt();
            let gn = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
            epe += e;
            a5 += f64::from(e < 0.05 || e / gn < 0.05);
            a10 += f64::from(e < 0.1 || e / gn < 0.1);
            let dot = p[0] * g[0] + p[1] * g[1] + p[2] * g[2] + 1.0;
            let np = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2] + 1.0).sqrt();
            th += (dot / (np * (gn * gn + 1.0).sqrt())).clamp(-1.0, 1.0).acos();
        }
        assert!((r.epe3d - epe / 40.0).abs() < 1e-9);
        assert!((r.acc5 - 100.0 * a5 / 40.0).abs() < 1e-9);
        assert!((r.acc10 - 100.0 * a10 / 40.0).abs() < 1e-9);
        assert!((r.theta - th / 40.0).abs() < 1e-7);
    }

    #[test]
    fn flow_theta_depends_on_scale() {
        let gt = vec![[1.0, 0.0, 0.0]];
        let pred = vec![[0.0, 1.0, 0.0]];
        let a = flow_metrics(&pred, &gt).unwrap().theta;
        let b = flow_metrics(&[[0.0, 2.0, 0.0]], &[[2.0, 0.0, 0.0]]).unwrap().theta;
        assert!(a != b && (0.0..=std::f64::consts::PI).contains(&a));
    }

    #[test]
    fn flow_errors() {
        assert_eq!(flow_metrics(&[], &[]), Err(MetricError::EmptyInput));
        assert!(matches!(flow_metrics(&[[0.0; 3]], &[]), Err(MetricError::CountMismatch { .. })));
    }

    #[test]
    fn bce_cases() {
        let gt: Vec<bool> = (0..16).map(|i| i % 3 == 0).collect();
        let half = ScalarImage::filled(4, 4, 0.5);
        assert!((bce(&half, &gt).unwrap() - 2f64.ln()).abs() < 1e-9);
        let exact = ScalarImage { data: gt.iter().map(|&y| f32::from(u8::from(y))).collect(), ..half.clone() };
        assert!(bce(&exact, &gt).unwrap() < 1e-6);
        let wrong = ScalarImage { data: gt.iter().map(|&y| f32::from(u8::from(!y))).collect(), ..half };
        assert!((bce(&wrong, &gt).unwrap() - 16.118).abs() < 1e-3);
    }
}
