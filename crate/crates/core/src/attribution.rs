//! Local attribution maps: gradients of a region readout integrated along a
//! straight path from a blurred copy of the input to the input itself.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::RgbImage;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::{gaussian_blur, save_rgb8};
use crate::network::EstnWeights;
use crate::params::Bound;
use crate::tensor::{expect_image, Element, Tape, Tensor, Var};
use crate::weights::write_atomic;

pub const DEFAULT_SIGMA: f64 = 2.0;

/// Rectangle in output (SR) pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Region {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl FromStr for Region {
    type Err = Error;
    /// `x,y,w,h`
    fn from_str(s: &str) -> Result<Self> {
        let v: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse().map_err(|_| Error::Config(format!("bad region `{s}`"))))
            .collect::<Result<_>>()?;
        match v[..] {
            [x, y, w, h] if w > 0 && h > 0 => Ok(Region { x, y, w, h }),
            _ => Err(Error::Config(format!("region must be x,y,w,h with positive size, got `{s}`"))),
        }
    }
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{},{},{}", self.x, self.y, self.w, self.h)
    }
}

impl Region {
    pub fn check(&self, h: usize, w: usize) -> Result<()> {
        if self.x + self.w > w || self.y + self.h > h {
            return Err(Error::Config(format!("region {self} outside {w}x{h} output")));
        }
        Ok(())
    }

    /// Sum of `[C, H, W]` over the rectangle.
    pub fn readout<'t, T: Element>(&self, sr: Var<'t, T>) -> Result<Var<'t, T>> {
        sr.narrow(1, self.y, self.h)?.narrow(2, self.x, self.w)?.sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributionMap {
    /// `[H, W]`, summed over colour channels.
    pub values: Tensor<f64>,
    pub region: Region,
    pub steps: usize,
    pub sigma: f64,
    /// Readout at the input and at the blurred baseline.
    pub readout_input: f64,
    pub readout_baseline: f64,
}

impl AttributionMap {
    pub fn total(&self) -> f64 {
        self.values.sum()
    }

    /// Relative gap between the attribution sum and the readout difference;
    /// zero when both vanish.
    pub fn completeness_residual(&self) -> f64 {
        let diff = self.readout_input - self.readout_baseline;
        let gap = (self.total() - diff).abs();
        if gap == 0.0 {
            0.0
        } else {
            gap / diff.abs().max(f64::MIN_POSITIVE)
        }
    }
}

fn readout_value<T: Element, F>(f: &F, x: &Tensor<T>, region: &Region) -> Result<f64>
where
    F: for<'t> Fn(Var<'t, T>) -> Result<Var<'t, T>>,
{
    let tape = Tape::new();
    Ok(region.readout(f(tape.constant(x.clone()))?)?.value().item().as_f64())
}

/// Path attribution for any differentiable image map `f`.
pub fn lam_with<T: Element, F>(f: &F, lr: &Tensor<f32>, region: Region, steps: usize, sigma: f64) -> Result<AttributionMap>
where
    F: for<'t> Fn(Var<'t, T>) -> Result<Var<'t, T>> + Sync,
{
    expect_image(lr.shape())?;
    if steps == 0 {
        return Err(Error::Config("steps must be at least 1".into()));
    }
    let baseline = gaussian_blur(lr, sigma)?;
    let (x1, x0): (Tensor<T>, Tensor<T>) = (lr.cast(), baseline.cast());
    {
        let tape = Tape::new();
        let out = f(tape.constant(x0.clone()))?.shape();
        region.check(out[1], out[2])?;
    }
    let delta: Vec<f64> = x1.data().iter().zip(x0.data()).map(|(a, b)| a.as_f64() - b.as_f64()).collect();

    let grads: Vec<Result<Tensor<T>>> = (0..steps)
        .into_par_iter()
        .map(|m| {
            let alpha = (m as f64 + 0.5) / steps as f64;
            let a = T::lit(alpha);
            let point = Tensor::new(
                x1.shape().to_vec(),
                x0.data().iter().zip(x1.data()).map(|(&b, &v)| b + a * (v - b)).collect(),
            )?;
            let tape = Tape::new();
            let input = tape.leaf(point, true);
            let d = region.readout(f(input)?)?;
            tape.backward(d)?;
            Ok(input.grad().unwrap_or_else(|| Tensor::zeros(x1.shape().to_vec())))
        })
        .collect();
    let mut acc = vec![0.0f64; delta.len()];
    for g in grads {
        for (a, v) in acc.iter_mut().zip(g?.data()) {
            *a += v.as_f64();
        }
    }
    let (h, w) = (lr.shape()[1], lr.shape()[2]);
    let n = h * w;
    let values = Tensor::from_fn(vec![h, w], |i| {
        (0..3).map(|c| acc[c * n + i] * delta[c * n + i]).sum::<f64>() / steps as f64
    });
    Ok(AttributionMap {
        values,
        region,
        steps,
        sigma,
        readout_input: readout_value(f, &x1, &region)?,
        readout_baseline: readout_value(f, &x0, &region)?,
    })
}

/// Attribution of `region` of the model output to the pixels of `lr`.
pub fn lam<T: Element>(
    model: &EstnWeights<T>,
    lr: &Tensor<f32>,
    region: Region,
    steps: usize,
    sigma: f64,
) -> Result<AttributionMap> {
    let f = image_map(|x: Var<'_, T>| {
        let p: Bound<'_, T> = model.params.bind(x.tape(), false);
        model.forward(&p, x)
    });
    lam_with(&f, lr, region, steps, sigma)
}

/// Pins a closure to the lifetime-generic signature `lam_with` expects.
pub fn image_map<T: Element, F>(f: F) -> F
where
    F: for<'t> Fn(Var<'t, T>) -> Result<Var<'t, T>>,
{
    f
}

/// Red-intensity image of `|values|` scaled to the largest magnitude.
pub fn heatmap_image(map: &AttributionMap) -> Result<RgbImage> {
    let v = &map.values;
    if !v.is_finite() {
        return Err(Error::Data("attribution map has non-finite values".into()));
    }
    let (h, w) = (v.shape()[0], v.shape()[1]);
    let peak = v.data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut img = RgbImage::new(w as u32, h as u32);
    for (i, &x) in v.data().iter().enumerate() {
        let r = if peak > 0.0 { (x.abs() / peak * 255.0).round() as u8 } else { 0 };
        img.put_pixel((i % w) as u32, (i / w) as u32, image::Rgb([r, 0, 0]));
    }
    Ok(img)
}

pub fn csv_path(image_path: &Path) -> PathBuf {
    image_path.with_extension("csv")
}

/// Writes the overlay to `path` and the raw grid next to it as `.csv`.
pub fn render_heatmap(map: &AttributionMap, path: &Path) -> Result<PathBuf> {
    save_rgb8(path, &heatmap_image(map)?)?;
    let w = map.values.shape()[1];
    let mut csv = String::new();
    for row in map.values.data().chunks(w) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(csv, "{}", cells.join(","));
    }
    let csv_file = csv_path(path);
    write_atomic(&csv_file, csv.as_bytes())?;
    Ok(csv_file)
}
