//! Luma PSNR and SSIM on 8-bit-range images.

use crate::error::{Error, Result};
use crate::imaging::gaussian_kernel;
use crate::tensor::{expect_image, Tensor};

/// PSNR values above this are written as this in reports.
pub const PSNR_CAP: f64 = 100.0;
const A1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const A2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// `[0, 1]` image to `[0, 255]`, clipped.
pub fn to_255(img: &Tensor<f32>) -> Tensor<f64> {
    let t: Tensor<f64> = img.cast();
    t.map(|v| (v * 255.0).clamp(0.0, 255.0))
}

/// Full-range luma `0.299 R + 0.587 G + 0.114 B`, `[3, H, W] -> [H, W]`.
pub fn rgb_to_y(img: &Tensor<f64>) -> Result<Tensor<f64>> {
    expect_image(img.shape())?;
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let d = img.data();
    let n = h * w;
    Ok(Tensor::from_fn(vec![h, w], |i| 0.299 * d[i] + 0.587 * d[n + i] + 0.114 * d[2 * n + i]))
}

/// Luma planes of both images with `border` pixels dropped on every side.
fn y_pair(sr: &Tensor<f64>, hr: &Tensor<f64>, border: usize) -> Result<(Vec<f64>, Vec<f64>, usize, usize)> {
    if sr.shape() != hr.shape() {
        return Err(Error::shape("metric", format!("{:?} vs {:?}", sr.shape(), hr.shape())));
    }
    let (ys, yh) = (rgb_to_y(sr)?, rgb_to_y(hr)?);
    let (h, w) = (ys.shape()[0], ys.shape()[1]);
    if h <= 2 * border || w <= 2 * border {
        return Err(Error::shape("metric", format!("border {border} leaves nothing of {h}x{w}")));
    }
    let (ch, cw) = (h - 2 * border, w - 2 * border);
    let cut = |t: &Tensor<f64>| -> Vec<f64> {
        (0..ch * cw)
            .map(|i| t.data()[(border + i / cw) * w + border + i % cw])
            .collect()
    };
    Ok((cut(&ys), cut(&yh), ch, cw))
}

/// `20 log10(255 / RMSE)` on luma; `+inf` when the images agree.
pub fn psnr(sr: &Tensor<f64>, hr: &Tensor<f64>, border: usize) -> Result<f64> {
    let (a, b, _, _) = y_pair(sr, hr, border)?;
    let mse = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (255.0 / mse.sqrt()).log10())
}

pub fn psnr_capped(v: f64) -> f64 {
    v.min(PSNR_CAP)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SsimMode {
    /// One set of statistics over the whole image.
    Global,
    /// Mean over 11x11 Gaussian (sigma 1.5) windows, valid positions only.
    Windowed,
}

fn ssim_formula(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64) -> f64 {
    ((2.0 * mx * my + A1) * (2.0 * cxy + A2)) / ((mx * mx + my * my + A1) * (vx + vy + A2))
}

fn global_ssim(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let mx = a.iter().sum::<f64>() / n;
    let my = b.iter().sum::<f64>() / n;
    let cov = |p: &[f64], mp: f64, q: &[f64], mq: f64| -> f64 {
        p.iter().zip(q).map(|(x, y)| (x - mp) * (y - mq)).sum::<f64>() / n
    };
    ssim_formula(mx, my, cov(a, mx, a, mx), cov(b, my, b, my), cov(a, mx, b, my))
}

/// Valid-mode separable filtering of an `h x w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for xo in 0..ow {
            rows[y * ow + xo] = k.iter().enumerate().map(|(i, &kv)| kv * x[y * w + xo + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for yo in 0..oh {
        for xo in 0..ow {
            out[yo * ow + xo] = k.iter().enumerate().map(|(i, &kv)| kv * rows[(yo + i) * ow + xo]).sum();
        }
    }
    out
}

/// Windowed mode needs at least 11x11 after the border crop and falls back
/// to the global statistics below that.
pub fn ssim(sr: &Tensor<f64>, hr: &Tensor<f64>, border: usize, mode: SsimMode) -> Result<f64> {
    let (a, b, h, w) = y_pair(sr, hr, border)?;
    let k = gaussian_kernel(1.5);
    if mode == SsimMode::Global || h < k.len() || w < k.len() {
        return Ok(global_ssim(&a, &b));
    }
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x * y).collect() };
    let mx = filter_valid(&a, h, w, &k);
    let my = filter_valid(&b, h, w, &k);
    let xx = filter_valid(&prod(&a, &a), h, w, &k);
    let yy = filter_valid(&prod(&b, &b), h, w, &k);
    let xy = filter_valid(&prod(&a, &b), h, w, &k);
    let total: f64 = (0..mx.len())
        .map(|i| {
            ssim_formula(
                mx[i],
                my[i],
                xx[i] - mx[i] * mx[i],
                yy[i] - my[i] * my[i],
                xy[i] - mx[i] * my[i],
            )
        })
        .sum();
    Ok(total / mx.len() as f64)
}
