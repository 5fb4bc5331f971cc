//! Frame quality metrics on the [0,255] pixel scale.
//!
//! Inputs are luminance frames in [0,1]; every metric rescales to [0,255]
//! internally so reported numbers are comparable to 8-bit conventions.
//! All accumulation is in f64.

use crate::error::{Error, Result};
use ndarray::ArrayView2;

/// PSNR is capped here when the frames are identical (MSE = 0).
pub const PSNR_CAP_DB: f64 = 100.0;

/// SSIM window side.
pub const SSIM_WINDOW: usize = 11;
/// SSIM Gaussian sigma.
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const PIXEL_MAX: f64 = 255.0;

fn check_same_shape(x: &ArrayView2<f32>, y: &ArrayView2<f32>, context: &'static str) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::shape(
            context,
            format!("{:?}", x.dim()),
            format!("{:?}", y.dim()),
        ));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB between a reference frame and a
/// reconstruction, both in [0,1]. Identical frames report [`PSNR_CAP_DB`].
pub fn psnr(reference: ArrayView2<f32>, reconstructed: ArrayView2<f32>) -> Result<f64> {
    check_same_shape(&reference, &reconstructed, "psnr")?;
    let n = reference.len() as f64;
    let mut sq_sum = 0.0f64;
    for (&a, &b) in reference.iter().zip(reconstructed.iter()) {
        let d = (a as f64 - b as f64) * PIXEL_MAX;
        sq_sum += d * d;
    }
    let mse = sq_sum / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (PIXEL_MAX * PIXEL_MAX / mse).log10())
}

/// Mean absolute per-pixel error on the [0,255] scale.
pub fn mae(reference: ArrayView2<f32>, reconstructed: ArrayView2<f32>) -> Result<f64> {
    check_same_shape(&reference, &reconstructed, "mae")?;
    let n = reference.len() as f64;
    let mut abs_sum = 0.0f64;
    for (&a, &b) in reference.iter().zip(reconstructed.iter()) {
        abs_sum += (a as f64 - b as f64).abs() * PIXEL_MAX;
    }
    Ok(abs_sum / n)
}

/// Relative PSNR degradation, in percent, when moving from a low CR to a
/// high CR: `100 * (psnr_low - psnr_high) / psnr_low`.
pub fn psnr_drop(psnr_low_cr: f64, psnr_high_cr: f64) -> Result<f64> {
    if psnr_low_cr <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "psnr_drop requires a positive low-CR PSNR, got {psnr_low_cr}"
        )));
    }
    Ok(100.0 * (psnr_low_cr - psnr_high_cr) / psnr_low_cr)
}

/// Normalized 1-D Gaussian taps for the SSIM window.
fn gaussian_taps(len: usize, sigma: f64) -> Vec<f64> {
    let half = (len as isize - 1) / 2;
    let mut taps: Vec<f64> = (0..len)
        .map(|i| {
            let d = i as isize - half;
            (-((d * d) as f64) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Horizontal "valid" correlation of each row with the tap vector.
fn filter_rows(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let out_w = w - taps.len() + 1;
    let mut out = vec![0.0f64; h * out_w];
    for r in 0..h {
        let row = &src[r * w..(r + 1) * w];
        for c in 0..out_w {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                acc += t * row[c + k];
            }
            out[r * out_w + c] = acc;
        }
    }
    out
}

/// Vertical "valid" correlation of each column with the tap vector.
fn filter_cols(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let out_h = h - taps.len() + 1;
    let mut out = vec![0.0f64; out_h * w];
    for r in 0..out_h {
        for c in 0..w {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                acc += t * src[(r + k) * w + c];
            }
            out[r * w + c] = acc;
        }
    }
    out
}

/// Gaussian-weighted windowed mean over all valid window positions,
/// computed separably.
fn windowed_mean(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let tmp = filter_rows(src, h, w, taps);
    filter_cols(&tmp, h, w - taps.len() + 1, taps)
}

/// Structural similarity between two frames in [0,1].
///
/// Standard windowed SSIM: 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 255, averaged over all fully-covered window
/// positions.
pub fn ssim(reference: ArrayView2<f32>, reconstructed: ArrayView2<f32>) -> Result<f64> {
    check_same_shape(&reference, &reconstructed, "ssim")?;
    let (h, w) = reference.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }

    let x: Vec<f64> = reference.iter().map(|&v| v as f64 * PIXEL_MAX).collect();
    let y: Vec<f64> = reconstructed.iter().map(|&v| v as f64 * PIXEL_MAX).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();

    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let mu_x = windowed_mean(&x, h, w, &taps);
    let mu_y = windowed_mean(&y, h, w, &taps);
    let e_xx = windowed_mean(&xx, h, w, &taps);
    let e_yy = windowed_mean(&yy, h, w, &taps);
    let e_xy = windowed_mean(&xy, h, w, &taps);

    let c1 = (SSIM_K1 * PIXEL_MAX).powi(2);
    let c2 = (SSIM_K2 * PIXEL_MAX).powi(2);

    let mut acc = 0.0f64;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let var_x = e_xx[i] - mx * mx;
        let var_y = e_yy[i] - my * my;
        let cov = e_xy[i] - mx * my;
        let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
        let den = (mx * mx + my * my + c1) * (var_x + var_y + c2);
        acc += num / den;
    }
    Ok(acc / mu_x.len() as f64)
}
