//! Image-pair reconstruction losses: mean absolute error, D-SSIM, and their
//! blend with loss-detach masking.

use crate::error::{Error, Result};
use crate::prep::Mask;
use crate::scene_io::RgbImage;

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn check_same(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Dimension(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    Ok(())
}

pub fn l1_loss(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_same(a, b)?;
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum();
    Ok(sum / a.data.len() as f64)
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Valid-mode separable Gaussian filtering of one plane (w×h) → (w-10)×(h-10).
fn filter_valid(plane: &[f64], w: usize, h: usize, kernel: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|k| kernel[k] * plane[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|k| kernel[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all valid 11×11 windows and channels (σ = 1.5, unit
/// dynamic range).
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_same(a, b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::Dimension(format!(
            "image {}x{} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window",
            a.width, a.height
        )));
    }
    let kernel = gaussian_window();
    let (w, h) = (a.width, a.height);
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..a.channels {
        let pa: Vec<f64> = (0..w * h).map(|i| a.data[i * a.channels + c]).collect();
        let pb: Vec<f64> = (0..w * h).map(|i| b.data[i * b.channels + c]).collect();
        let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
        let mu_a = filter_valid(&pa, w, h, &kernel);
        let mu_b = filter_valid(&pb, w, h, &kernel);
        let e_aa = filter_valid(&prod(&pa, &pa), w, h, &kernel);
        let e_bb = filter_valid(&prod(&pb, &pb), w, h, &kernel);
        let e_ab = filter_valid(&prod(&pa, &pb), w, h, &kernel);
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = e_aa[i] - ma * ma;
            let var_b = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2))
                / ((ma * ma + mb * mb + C1) * (var_a + var_b + C2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// `(1 - SSIM) / 2`, clamped to [0, 1].
pub fn dssim_loss(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    Ok(((1.0 - ssim(a, b)?) / 2.0).clamp(0.0, 1.0))
}

/// `(1-λ)·L1 + λ·D-SSIM` where pixels under `detach_mask` are replaced by the
/// ground truth before either term is evaluated, so they contribute neither
/// residual nor gradient.
pub fn mgs_loss(render: &RgbImage, gt: &RgbImage, lambda: f64, detach_mask: &Mask) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Input(format!("lambda {lambda} outside [0,1]")));
    }
    check_same(render, gt)?;
    if detach_mask.width != render.width || detach_mask.height != render.height {
        return Err(Error::Dimension("detach mask size differs from image".into()));
    }
    let mut detached = render.clone();
    for y in 0..render.height {
        for x in 0..render.width {
            if detach_mask.get(x, y) {
                for c in 0..render.channels {
                    detached.set(x, y, c, gt.get(x, y, c));
                }
            }
        }
    }
    let l1 = l1_loss(&detached, gt)?;
    if lambda == 0.0 {
        return Ok(l1);
    }
    let dssim = dssim_loss(&detached, gt)?;
    Ok((1.0 - lambda) * l1 + lambda * dssim)
}
