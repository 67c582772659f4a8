//! Multi-scale window self-attention, plain and cyclically shifted.

use crate::error::{Error, Result};
use crate::params::{Bound, ConvParams, ParamBuilder};
use crate::tensor::{CropRecord, Element, Var};

/// Probabilities produced by one window-attention call.
#[derive(Clone, Copy, Debug)]
pub struct CachedScores<'t, T: Element> {
    /// `[B, n, n]` post-softmax.
    pub probs: Var<'t, T>,
    /// Spatial extent after padding.
    pub padded: (usize, usize),
    pub crop: CropRecord,
}

/// Per-scale score slots filled by W-MSSA and read by SW-MSSA.
#[derive(Clone, Debug)]
pub struct AttentionCache<'t, T: Element> {
    slots: Vec<Option<CachedScores<'t, T>>>,
}

impl<'t, T: Element> AttentionCache<'t, T> {
    pub fn new(scales: usize) -> Self {
        AttentionCache { slots: vec![None; scales] }
    }

    pub fn get(&self, scale: usize) -> Option<&CachedScores<'t, T>> {
        self.slots.get(scale).and_then(Option::as_ref)
    }

    pub fn scales(&self) -> usize {
        self.slots.len()
    }
}

/// Where window attention gets its probabilities.
pub enum Mode<'c, 't, T: Element> {
    /// Compute from Q and K, optionally storing them.
    Compute {
        q: ConvParams,
        k: ConvParams,
        store: Option<&'c mut Option<CachedScores<'t, T>>>,
    },
    /// Apply previously computed probabilities.
    Reuse(&'c CachedScores<'t, T>),
}

fn to_windows<'t, T: Element>(x: Var<'t, T>, win: (usize, usize)) -> Result<Var<'t, T>> {
    x.permute(&[1, 2, 0])?.grid_partition(win)
}

/// Single-head attention inside non-overlapping windows of `[c, H, W]`.
/// Scores are scaled by `1/sqrt(wh*ww)`.
pub fn window_attention<'t, T: Element>(
    p: &Bound<'t, T>,
    x: Var<'t, T>,
    v: ConvParams,
    win: (usize, usize),
    mode: Mode<'_, 't, T>,
) -> Result<Var<'t, T>> {
    let (xp, crop) = x.pad_reflect(win)?;
    let shape = xp.shape();
    let padded = (shape[1], shape[2]);
    let probs = match mode {
        Mode::Compute { q, k, store } => {
            let qw = to_windows(q.apply(p, xp)?, win)?;
            let kw = to_windows(k.apply(p, xp)?, win)?;
            let scale = 1.0 / ((win.0 * win.1) as f64).sqrt();
            let probs = qw.matmul(kw.transpose_last2()?)?.scale(scale)?.softmax_rows()?;
            if let Some(slot) = store {
                *slot = Some(CachedScores { probs, padded, crop });
            }
            probs
        }
        Mode::Reuse(cached) => {
            if cached.padded != padded || cached.crop != crop {
                return Err(Error::Cache(format!(
                    "cached scores for {:?} (from {:?}), input pads to {:?} (from {:?})",
                    cached.padded, cached.crop, padded, crop
                )));
            }
            cached.probs
        }
    };
    let vw = to_windows(v.apply(p, xp)?, win)?;
    let out = probs.matmul(vw)?;
    out.grid_merge(win, padded)?.permute(&[2, 0, 1])?.crop(&crop)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScaleParams {
    /// Absent when the probabilities come from another module.
    pub q: Option<ConvParams>,
    pub k: Option<ConvParams>,
    pub v: ConvParams,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mssa {
    pub scales: Vec<ScaleParams>,
    pub windows: Vec<(usize, usize)>,
    pub merge: ConvParams,
}

impl Mssa {
    /// Channel groups are `c / windows.len()` wide. Without `with_qk` the
    /// module can only run with shared scores.
    pub fn build<T: Element>(
        b: &mut ParamBuilder<'_, T>,
        c: usize,
        windows: &[(usize, usize)],
        with_qk: bool,
    ) -> Self {
        let g = c / windows.len();
        let scales = (0..windows.len())
            .map(|s| {
                b.scope(format!("scale{s}"), |b| ScaleParams {
                    q: with_qk.then(|| b.conv("q", g, g, 1)),
                    k: with_qk.then(|| b.conv("k", g, g, 1)),
                    v: b.conv("v", g, g, 1),
                })
            })
            .collect();
        Mssa {
            scales,
            windows: windows.to_vec(),
            merge: b.conv("merge", c, c, 1),
        }
    }

    fn split<'t, T: Element>(&self, x: Var<'t, T>) -> Result<Vec<Var<'t, T>>> {
        let c = x.shape()[0];
        let n = self.windows.len();
        if c % n != 0 {
            return Err(Error::shape("mssa", format!("{} channels for {} scales", c, n)));
        }
        (0..n).map(|s| x.narrow(0, s * c / n, c / n)).collect()
    }

    fn compute_mode<'c, 't, T: Element>(
        &self,
        s: usize,
        store: Option<&'c mut Option<CachedScores<'t, T>>>,
    ) -> Result<Mode<'c, 't, T>> {
        match (self.scales[s].q, self.scales[s].k) {
            (Some(q), Some(k)) => Ok(Mode::Compute { q, k, store }),
            _ => Err(Error::Cache(format!("scale {s} has no query/key weights and no cached scores"))),
        }
    }

    /// Plain windows at every scale; fills `cache`.
    pub fn forward<'t, T: Element>(
        &self,
        p: &Bound<'t, T>,
        x: Var<'t, T>,
        cache: &mut AttentionCache<'t, T>,
    ) -> Result<Var<'t, T>> {
        if cache.slots.len() != self.windows.len() {
            cache.slots = vec![None; self.windows.len()];
        }
        let parts = self.split(x)?;
        let mut outs = Vec::with_capacity(parts.len());
        for (s, (part, slot)) in parts.into_iter().zip(cache.slots.iter_mut()).enumerate() {
            let mode = self.compute_mode(s, Some(slot))?;
            outs.push(window_attention(p, part, self.scales[s].v, self.windows[s], mode)?);
        }
        self.merge.apply(p, Var::concat(&outs, 0)?)
    }

    /// Half-window cyclic shift at each scale. With `share`, probabilities
    /// come from `cache`.
    pub fn forward_shifted<'t, T: Element>(
        &self,
        p: &Bound<'t, T>,
        x: Var<'t, T>,
        cache: &AttentionCache<'t, T>,
        share: bool,
    ) -> Result<Var<'t, T>> {
        let shifts: Vec<_> = self
            .windows
            .iter()
            .map(|&(wh, ww)| ((wh / 2) as isize, (ww / 2) as isize))
            .collect();
        self.forward_with_shifts(p, x, cache, share, &shifts)
    }

    /// Like [`Mssa::forward_shifted`] with explicit per-scale shifts.
    pub fn forward_with_shifts<'t, T: Element>(
        &self,
        p: &Bound<'t, T>,
        x: Var<'t, T>,
        cache: &AttentionCache<'t, T>,
        share: bool,
        shifts: &[(isize, isize)],
    ) -> Result<Var<'t, T>> {
        if shifts.len() != self.windows.len() {
            return Err(Error::shape("sw_mssa", format!("{} shifts for {} scales", shifts.len(), self.windows.len())));
        }
        let parts = self.split(x)?;
        let mut outs = Vec::with_capacity(parts.len());
        for (s, part) in parts.into_iter().enumerate() {
            let (dy, dx) = shifts[s];
            let mode = if share {
                let cached = cache
                    .get(s)
                    .ok_or_else(|| Error::Cache(format!("no cached scores for scale {s}")))?;
                Mode::Reuse(cached)
            } else {
                self.compute_mode(s, None)?
            };
            let shifted = part.cyclic_shift(dy, dx)?;
            let y = window_attention(p, shifted, self.scales[s].v, self.windows[s], mode)?;
            outs.push(y.cyclic_shift(-dy, -dx)?);
        }
        self.merge.apply(p, Var::concat(&outs, 0)?)
    }
}
