//! Full-reference pixel metrics on RGB images in the unit range.

use layerflow_imaging::RgbImage;

use crate::error::{MetricsError, Result};

/// PSNR is capped here: identical images would otherwise be infinite.
pub const PSNR_CAP: f64 = 99.0;

/// Structural-similarity window width.
pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn check_sizes(context: &'static str, a: &RgbImage, b: &RgbImage) -> Result<()> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(MetricsError::SizeMismatch {
            context,
            got_w: a.width(),
            got_h: a.height(),
            want_w: b.width(),
            want_h: b.height(),
        });
    }
    Ok(())
}

/// Mean squared error over all three channels.
pub fn mse(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_sizes("mse", a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x - y;
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// Peak signal-to-noise ratio in decibels for unit-range images, capped at
/// [`PSNR_CAP`].
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    let mse = mse(a, b)?;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Mean absolute difference over all three channels.
pub fn rgb_l1(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_sizes("rgb_l1", a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y).abs())
        .sum();
    Ok(sum / a.data().len() as f64)
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Valid-mode separable blur: rows first, then columns.
fn blur_valid(src: &[f64], w: usize, h: usize, window: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let vw = w - SSIM_WINDOW + 1;
    let vh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; h * vw];
    for y in 0..h {
        for x in 0..vw {
            let mut acc = 0.0;
            for (k, g) in window.iter().enumerate() {
                acc += g * src[y * w + x + k];
            }
            rows[y * vw + x] = acc;
        }
    }
    let mut out = vec![0.0; vh * vw];
    for y in 0..vh {
        for x in 0..vw {
            let mut acc = 0.0;
            for (k, g) in window.iter().enumerate() {
                acc += g * rows[(y + k) * vw + x];
            }
            out[y * vw + x] = acc;
        }
    }
    out
}

/// Mean structural similarity: Gaussian-weighted 11x11 statistics over all
/// fully contained windows, averaged across the three channels. Images
/// smaller than the window are rejected.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_sizes("ssim", a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricsError::TooSmall {
            context: "ssim",
            w,
            h,
            min: SSIM_WINDOW,
        });
    }
    let window = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let n = w * h;
    let mut total = 0.0;
    for c in 0..3 {
        let x = a.plane(c).to_vec();
        let y = b.plane(c).to_vec();
        let xx: Vec<f64> = (0..n).map(|i| x[i] * x[i]).collect();
        let yy: Vec<f64> = (0..n).map(|i| y[i] * y[i]).collect();
        let xy: Vec<f64> = (0..n).map(|i| x[i] * y[i]).collect();
        let mx = blur_valid(&x, w, h, &window);
        let my = blur_valid(&y, w, h, &window);
        let mxx = blur_valid(&xx, w, h, &window);
        let myy = blur_valid(&yy, w, h, &window);
        let mxy = blur_valid(&xy, w, h, &window);
        let mut acc = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cov = mxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + c1) * (2.0 * cov + c2))
                / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += acc / mx.len() as f64;
    }
    Ok(total / 3.0)
}
