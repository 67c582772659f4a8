//! Image files and resampling. Images are `[3, H, W]` with values in `[0, 1]`.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{expect_image, Tensor};
use crate::weights::write_atomic;

fn format_for(path: &Path) -> Result<ImageFormat> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => Ok(ImageFormat::Png),
        Some("ppm" | "pnm") => Ok(ImageFormat::Pnm),
        _ => Err(Error::Data(format!("{}: unsupported image extension (png, ppm)", path.display()))),
    }
}

pub fn is_image_path(path: &Path) -> bool {
    format_for(path).is_ok()
}

pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    let format = format_for(path)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, format)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Ok(Tensor::from_fn(vec![3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        raw[p * 3 + c] as f32 / 255.0
    }))
}

/// Quantises to 8 bits after clamping to `[0, 1]`.
pub fn to_rgb8(img: &Tensor<f32>) -> Result<RgbImage> {
    expect_image(img.shape())?;
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let d = img.data();
    let raw: Vec<u8> = (0..h * w * 3)
        .map(|i| {
            let (p, c) = (i / 3, i % 3);
            (d[c * h * w + p].clamp(0.0, 1.0) * 255.0).round() as u8
        })
        .collect();
    RgbImage::from_raw(w as u32, h as u32, raw).ok_or_else(|| Error::Data("image buffer size".into()))
}

pub fn save_rgb8(path: &Path, img: &RgbImage) -> Result<()> {
    let format = format_for(path)?;
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, format).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    write_atomic(path, buf.get_ref())
}

pub fn save_image(path: &Path, img: &Tensor<f32>) -> Result<()> {
    save_rgb8(path, &to_rgb8(img)?)
}

/// Cubic convolution kernel with `a = -0.5`.
pub fn cubic(x: f64) -> f64 {
    let a = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Source taps and weights for each output index along one axis. Downscaling
/// widens the kernel (antialiasing); indices outside are clamped to the edge.
fn contributions(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_out as f64 / n_in as f64;
    let (stretch, support) = if scale < 1.0 { (scale, 2.0 / scale) } else { (1.0, 2.0) };
    (0..n_out)
        .map(|o| {
            let u = (o as f64 + 0.5) / scale - 0.5;
            let lo = (u - support).floor() as isize;
            let hi = (u + support).ceil() as isize;
            let mut taps: Vec<(usize, f64)> = Vec::new();
            for j in lo..=hi {
                let wgt = cubic((u - j as f64) * stretch);
                if wgt == 0.0 {
                    continue;
                }
                let idx = j.clamp(0, n_in as isize - 1) as usize;
                match taps.iter_mut().find(|t| t.0 == idx) {
                    Some(t) => t.1 += wgt,
                    None => taps.push((idx, wgt)),
                }
            }
            let total: f64 = taps.iter().map(|t| t.1).sum();
            taps.iter_mut().for_each(|t| t.1 /= total);
            taps
        })
        .collect()
}

/// Applies per-output taps along the last axis (`rows` of length `n_in`).
fn apply_rows(data: &[f64], n_in: usize, taps: &[Vec<(usize, f64)>]) -> Vec<f64> {
    data.chunks(n_in)
        .flat_map(|row| taps.iter().map(move |t| t.iter().map(|&(j, w)| row[j] * w).sum::<f64>()))
        .collect()
}

fn transpose(data: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for p in 0..planes {
        for y in 0..h {
            for x in 0..w {
                out[(p * w + x) * h + y] = data[(p * h + y) * w + x];
            }
        }
    }
    out
}

/// Separable resample of `[C, H, W]` to `[C, out_h, out_w]`.
fn separable(img: &Tensor<f32>, out_h: usize, out_w: usize, tx: &[Vec<(usize, f64)>], ty: &[Vec<(usize, f64)>]) -> Tensor<f32> {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let d: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
    let horiz = apply_rows(&d, w, tx);
    let vert = apply_rows(&transpose(&horiz, c, h, out_w), h, ty);
    let back = transpose(&vert, c, out_w, out_h);
    Tensor::new(vec![c, out_h, out_w], back.into_iter().map(|v| v as f32).collect()).expect("resample shape")
}

pub fn resize_to(img: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    if img.rank() != 3 || img.shape()[1] == 0 || img.shape()[2] == 0 {
        return Err(Error::shape("bicubic_resize", format!("input {:?}", img.shape())));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("bicubic_resize", format!("degenerate target {out_h}x{out_w}")));
    }
    let (h, w) = (img.shape()[1], img.shape()[2]);
    Ok(separable(img, out_h, out_w, &contributions(w, out_w), &contributions(h, out_h)))
}

/// Bicubic resize by `scale`; target extents are rounded to the nearest
/// integer.
pub fn bicubic_resize(img: &Tensor<f32>, scale: f64) -> Result<Tensor<f32>> {
    if img.rank() != 3 || !(scale > 0.0) {
        return Err(Error::shape("bicubic_resize", format!("input {:?} at scale {scale}", img.shape())));
    }
    let out = |n: usize| (n as f64 * scale).round() as usize;
    resize_to(img, out(img.shape()[1]), out(img.shape()[2]))
}

/// Normalised 1-D Gaussian taps of radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur of `[C, H, W]` with edge clamping.
pub fn gaussian_blur(img: &Tensor<f32>, sigma: f64) -> Result<Tensor<f32>> {
    if img.rank() != 3 || !(sigma >= 0.0) {
        return Err(Error::shape("gaussian_blur", format!("input {:?}, sigma {sigma}", img.shape())));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let taps = |n: usize| -> Vec<Vec<(usize, f64)>> {
        (0..n as isize)
            .map(|o| {
                k.iter()
                    .enumerate()
                    .map(|(i, &w)| ((o + i as isize - r).clamp(0, n as isize - 1) as usize, w))
                    .collect()
            })
            .collect()
    };
    let (h, w) = (img.shape()[1], img.shape()[2]);
    Ok(separable(img, h, w, &taps(w), &taps(h)))
}
