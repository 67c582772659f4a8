use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{Error, Result};
use crate::imaging::{is_image_path, load_image, resize_to};
use crate::tensor::{expect_image, Tensor};

/// An HR image and its bicubic-degraded LR counterpart.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainPair {
    pub lr: Tensor<f32>,
    pub hr: Tensor<f32>,
    pub scale: usize,
}

/// Copies the `[C, h, w]` window at `(y, x)`.
pub fn crop(img: &Tensor<f32>, y: usize, x: usize, h: usize, w: usize) -> Tensor<f32> {
    let (c, ih, iw) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    debug_assert!(y + h <= ih && x + w <= iw);
    let d = img.data();
    Tensor::from_fn(vec![c, h, w], |i| {
        let (ch, r) = (i / (h * w), i % (h * w));
        d[(ch * ih + y + r / w) * iw + x + r % w]
    })
}

impl TrainPair {
    /// Trims the HR image to a multiple of `scale` and downsamples it.
    pub fn from_hr(hr: &Tensor<f32>, scale: usize) -> Result<Self> {
        expect_image(hr.shape())?;
        let (lh, lw) = (hr.shape()[1] / scale, hr.shape()[2] / scale);
        if lh == 0 || lw == 0 {
            return Err(Error::Data(format!("image {:?} smaller than scale {scale}", hr.shape())));
        }
        let hr = crop(hr, 0, 0, lh * scale, lw * scale);
        let lr = if scale == 1 { hr.clone() } else { resize_to(&hr, lh, lw)? };
        Ok(TrainPair { lr, hr, scale })
    }

    /// LR patch of side `patch` at a uniform position and the aligned HR
    /// patch.
    pub fn sample<R: Rng + ?Sized>(&self, patch: usize, rng: &mut R) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let (lh, lw) = (self.lr.shape()[1], self.lr.shape()[2]);
        if lh < patch || lw < patch {
            return Err(Error::Data(format!("LR image {lh}x{lw} smaller than patch {patch}")));
        }
        let y = rng.gen_range(0..=lh - patch);
        let x = rng.gen_range(0..=lw - patch);
        Ok(self.patch_at(y, x, patch))
    }

    pub fn patch_at(&self, y: usize, x: usize, patch: usize) -> (Tensor<f32>, Tensor<f32>) {
        let a = self.scale;
        (crop(&self.lr, y, x, patch, patch), crop(&self.hr, a * y, a * x, a * patch, a * patch))
    }
}

/// Image files directly inside `dir`, sorted by name.
pub fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for e in entries {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        if p.is_file() && is_image_path(&p) {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("no png/ppm images in {}", dir.display())));
    }
    Ok(files)
}

pub fn load_pairs(dir: &Path, scale: usize) -> Result<Vec<TrainPair>> {
    image_files(dir)?
        .iter()
        .map(|p| TrainPair::from_hr(&load_image(p)?, scale))
        .collect()
}
