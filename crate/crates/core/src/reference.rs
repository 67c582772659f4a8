//! Straight-line f64 re-implementation of the network with explicit loops.
//! It shares nothing with the tape operators beyond reading parameter values
//! and exists to cross-check them.

use crate::blocks::{Bsgm, Estm, LocalStage, Lrcab, Mssa};
use crate::network::EstnWeights;
use crate::params::{ConvParams, DenseParams, ParamStore};
use crate::tensor::{Element, Tensor};

/// `[c, h, w]` feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct Map {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub d: Vec<f64>,
}

impl Map {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Map { c, h, w, d: vec![0.0; c * h * w] }
    }

    pub fn from_tensor<T: Element>(t: &Tensor<T>) -> Self {
        let s = t.shape();
        Map {
            c: s[0],
            h: s[1],
            w: s[2],
            d: t.data().iter().map(|v| v.as_f64()).collect(),
        }
    }

    pub fn to_tensor(&self) -> Tensor<f64> {
        Tensor::new(vec![self.c, self.h, self.w], self.d.clone()).expect("map shape")
    }

    fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.d[(c * self.h + y) * self.w + x]
    }

    fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let (h, w) = (self.h, self.w);
        self.d[(c * h + y) * w + x] = v;
    }

    fn plus(&self, o: &Map) -> Map {
        Map {
            d: self.d.iter().zip(&o.d).map(|(a, b)| a + b).collect(),
            ..self.clone()
        }
    }

    fn each(&self, f: impl Fn(f64) -> f64) -> Map {
        Map {
            d: self.d.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    fn channels(&self, start: usize, n: usize) -> Map {
        let plane = self.h * self.w;
        Map {
            c: n,
            h: self.h,
            w: self.w,
            d: self.d[start * plane..(start + n) * plane].to_vec(),
        }
    }

    fn stack(parts: &[Map]) -> Map {
        Map {
            c: parts.iter().map(|p| p.c).sum(),
            h: parts[0].h,
            w: parts[0].w,
            d: parts.iter().flat_map(|p| p.d.iter().copied()).collect(),
        }
    }
}

fn values<T: Element>(s: &ParamStore<T>, id: crate::params::ParamId) -> Vec<f64> {
    s.get(id).data().iter().map(|v| v.as_f64()).collect()
}

/// Zero-padded "same" convolution with an odd square kernel.
pub fn conv<T: Element>(s: &ParamStore<T>, p: ConvParams, x: &Map) -> Map {
    let shape = s.get(p.weight).shape().to_vec();
    let (co, ci, k) = (shape[0], shape[1], shape[2]);
    assert_eq!(ci, x.c);
    let (w, b) = (values(s, p.weight), values(s, p.bias));
    let r = (k / 2) as isize;
    let mut out = Map::zeros(co, x.h, x.w);
    for o in 0..co {
        for y in 0..x.h {
            for xx in 0..x.w {
                let mut acc = b[o];
                for i in 0..ci {
                    for ky in 0..k {
                        for kx in 0..k {
                            let sy = y as isize + ky as isize - r;
                            let sx = xx as isize + kx as isize - r;
                            if sy < 0 || sx < 0 || sy >= x.h as isize || sx >= x.w as isize {
                                continue;
                            }
                            acc += w[((o * ci + i) * k + ky) * k + kx] * x.at(i, sy as usize, sx as usize);
                        }
                    }
                }
                out.set(o, y, xx, acc);
            }
        }
    }
    out
}

/// Per-pixel channel dense.
fn dense_channels<T: Element>(s: &ParamStore<T>, p: DenseParams, x: &Map) -> Map {
    let (w, b) = (values(s, p.weight), values(s, p.bias));
    let co = b.len();
    let mut out = Map::zeros(co, x.h, x.w);
    for y in 0..x.h {
        for xx in 0..x.w {
            for o in 0..co {
                let v = b[o] + (0..x.c).map(|i| w[o * x.c + i] * x.at(i, y, xx)).sum::<f64>();
                out.set(o, y, xx, v);
            }
        }
    }
    out
}

/// Zero-filled one-pixel shifts of five channel groups.
fn shift(x: &Map) -> Map {
    let dirs = [(0isize, 0isize), (1, 0), (-1, 0), (0, 1), (0, -1)];
    let (base, extra) = (x.c / 5, x.c % 5);
    let mut out = Map::zeros(x.c, x.h, x.w);
    let mut c = 0;
    for (g, &(dy, dx)) in dirs.iter().enumerate() {
        let n = base + if g < extra { 1 } else { 0 };
        for _ in 0..n {
            for y in 0..x.h {
                for xx in 0..x.w {
                    let (sy, sx) = (y as isize + dy, xx as isize + dx);
                    if sy >= 0 && sx >= 0 && (sy as usize) < x.h && (sx as usize) < x.w {
                        out.set(c, y, xx, x.at(c, sy as usize, sx as usize));
                    }
                }
            }
            c += 1;
        }
    }
    out
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn gelu(v: f64) -> f64 {
    0.5 * v * (1.0 + libm::erf(v / std::f64::consts::SQRT_2))
}

pub fn local_core<T: Element>(s: &ParamStore<T>, m: &LocalStage, x: &Map) -> Map {
    let e = conv(s, m.expand, &shift(x)).each(relu);
    conv(s, m.compress, &shift(&e))
}

pub fn lrcab_core<T: Element>(s: &ParamStore<T>, m: &Lrcab, x: &Map) -> Map {
    let t = conv(s, m.compress, &conv(s, m.expand, x).each(relu));
    let plane = (t.h * t.w) as f64;
    let mut pooled = Map::zeros(t.c, 1, 1);
    for c in 0..t.c {
        pooled.d[c] = t.d[c * t.h * t.w..(c + 1) * t.h * t.w].iter().sum::<f64>() / plane;
    }
    let gate = conv(s, m.excite, &conv(s, m.squeeze, &pooled).each(relu)).each(sigmoid);
    let mut out = t.clone();
    for c in 0..t.c {
        for v in &mut out.d[c * t.h * t.w..(c + 1) * t.h * t.w] {
            *v *= gate.d[c];
        }
    }
    out
}

fn mirror(i: usize, n: usize) -> usize {
    let mut i = i as isize;
    let n = n as isize;
    while i >= n || i < 0 {
        i = if i >= n { 2 * (n - 1) - i } else { -i };
    }
    i as usize
}

/// Mirrors the bottom and right edges out to multiples of `(mh, mw)`.
pub fn pad_to_multiple(x: &Map, mh: usize, mw: usize) -> Map {
    let (h, w) = (x.h.div_ceil(mh) * mh, x.w.div_ceil(mw) * mw);
    let mut out = Map::zeros(x.c, h, w);
    for c in 0..x.c {
        for y in 0..h {
            for xx in 0..w {
                out.set(c, y, xx, x.at(c, mirror(y, x.h), mirror(xx, x.w)));
            }
        }
    }
    out
}

fn crop_to(x: &Map, h: usize, w: usize) -> Map {
    let mut out = Map::zeros(x.c, h, w);
    for c in 0..x.c {
        for y in 0..h {
            for xx in 0..w {
                out.set(c, y, xx, x.at(c, y, xx));
            }
        }
    }
    out
}

/// `out[y][x] = in[y - dy][x - dx]` with wrap-around.
pub fn roll(x: &Map, dy: isize, dx: isize) -> Map {
    let mut out = Map::zeros(x.c, x.h, x.w);
    for c in 0..x.c {
        for y in 0..x.h {
            for xx in 0..x.w {
                let sy = (y as isize - dy).rem_euclid(x.h as isize) as usize;
                let sx = (xx as isize - dx).rem_euclid(x.w as isize) as usize;
                out.set(c, y, xx, x.at(c, sy, sx));
            }
        }
    }
    out
}

pub fn bsgm<T: Element>(s: &ParamStore<T>, m: &Bsgm, x: &Map) -> Map {
    let xp = pad_to_multiple(x, m.tile, m.tile);
    let (g, bt) = (values(s, m.norm.gamma), values(s, m.norm.beta));
    let mut normed = xp.clone();
    for y in 0..xp.h {
        for xx in 0..xp.w {
            let col: Vec<f64> = (0..xp.c).map(|c| xp.at(c, y, xx)).collect();
            let mean = col.iter().sum::<f64>() / xp.c as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / xp.c as f64;
            for c in 0..xp.c {
                normed.set(c, y, xx, g[c] * (col[c] - mean) / (var + 1e-5).sqrt() + bt[c]);
            }
        }
    }
    let x1 = dense_channels(s, m.entry, &normed).each(gelu);
    let (bw, bb) = (values(s, m.block.weight), values(s, m.block.bias));
    let (wh, ww) = m.window;
    let per_row = m.tile / ww;
    let nb = (m.tile / wh) * per_row;
    let mut mixed = Map::zeros(x1.c, x1.h, x1.w);
    for ty in (0..x1.h).step_by(m.tile) {
        for tx in (0..x1.w).step_by(m.tile) {
            for c in 0..x1.c {
                for iy in 0..wh {
                    for ix in 0..ww {
                        let pos = |b: usize| (ty + (b / per_row) * wh + iy, tx + (b % per_row) * ww + ix);
                        for o in 0..nb {
                            let mut acc = bb[o];
                            for i in 0..nb {
                                let (y, xx) = pos(i);
                                acc += bw[o * nb + i] * x1.at(c, y, xx);
                            }
                            let (y, xx) = pos(o);
                            mixed.set(c, y, xx, acc);
                        }
                    }
                }
            }
        }
    }
    let out = dense_channels(s, m.exit, &mixed).plus(&x1);
    crop_to(&out, x.h, x.w)
}

/// Per-window probability matrices, row-major windows, each `n x n`.
pub type Probs = Vec<Vec<f64>>;

/// Single-head window attention of one channel group. Returns the output
/// and the probabilities that were used.
pub fn window_attention<T: Element>(
    s: &ParamStore<T>,
    q: Option<ConvParams>,
    k: Option<ConvParams>,
    v: ConvParams,
    x: &Map,
    (wh, ww): (usize, usize),
    shared: Option<&Probs>,
) -> (Map, Probs) {
    let xp = pad_to_multiple(x, wh, ww);
    let vm = conv(s, v, &xp);
    let n = wh * ww;
    let (nwy, nwx) = (xp.h / wh, xp.w / ww);
    let pixel = |win: usize, i: usize| ((win / nwx) * wh + i / ww, (win % nwx) * ww + i % ww);
    let probs: Probs = match shared {
        Some(p) => p.clone(),
        None => {
            let qm = conv(s, q.expect("query weights"), &xp);
            let km = conv(s, k.expect("key weights"), &xp);
            let scale = 1.0 / (n as f64).sqrt();
            (0..nwy * nwx)
                .map(|win| {
                    let mut p = vec![0.0; n * n];
                    for i in 0..n {
                        let (yi, xi) = pixel(win, i);
                        let row: Vec<f64> = (0..n)
                            .map(|j| {
                                let (yj, xj) = pixel(win, j);
                                scale * (0..xp.c).map(|c| qm.at(c, yi, xi) * km.at(c, yj, xj)).sum::<f64>()
                            })
                            .collect();
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let total: f64 = row.iter().map(|r| (r - max).exp()).sum();
                        for j in 0..n {
                            p[i * n + j] = (row[j] - max).exp() / total;
                        }
                    }
                    p
                })
                .collect()
        }
    };
    let mut out = Map::zeros(vm.c, xp.h, xp.w);
    for (win, p) in probs.iter().enumerate() {
        for i in 0..n {
            let (yi, xi) = pixel(win, i);
            for c in 0..vm.c {
                let acc: f64 = (0..n)
                    .map(|j| {
                        let (yj, xj) = pixel(win, j);
                        p[i * n + j] * vm.at(c, yj, xj)
                    })
                    .sum();
                out.set(c, yi, xi, acc);
            }
        }
    }
    (crop_to(&out, x.h, x.w), probs)
}

/// Plain multi-scale attention; also returns the per-scale probabilities.
pub fn mssa<T: Element>(s: &ParamStore<T>, m: &Mssa, x: &Map) -> (Map, Vec<Probs>) {
    let g = x.c / m.windows.len();
    let mut outs = Vec::new();
    let mut all = Vec::new();
    for (i, sp) in m.scales.iter().enumerate() {
        let (o, p) = window_attention(s, sp.q, sp.k, sp.v, &x.channels(i * g, g), m.windows[i], None);
        outs.push(o);
        all.push(p);
    }
    (conv(s, m.merge, &Map::stack(&outs)), all)
}

/// Shifted multi-scale attention; `shared` supplies probabilities when the
/// module has no query/key weights of its own.
pub fn sw_mssa<T: Element>(s: &ParamStore<T>, m: &Mssa, x: &Map, shared: Option<&[Probs]>) -> Map {
    let g = x.c / m.windows.len();
    let outs: Vec<Map> = m
        .scales
        .iter()
        .enumerate()
        .map(|(i, sp)| {
            let (wh, ww) = m.windows[i];
            let (dy, dx) = ((wh / 2) as isize, (ww / 2) as isize);
            let part = roll(&x.channels(i * g, g), dy, dx);
            let (o, _) = window_attention(s, sp.q, sp.k, sp.v, &part, (wh, ww), shared.map(|p| &p[i]));
            roll(&o, -dy, -dx)
        })
        .collect();
    conv(s, m.merge, &Map::stack(&outs))
}

pub fn estm<T: Element>(s: &ParamStore<T>, m: &Estm, x: &Map) -> Map {
    let maybe_bsgm = |b: &Option<Bsgm>, v: &Map| match b {
        Some(b) => bsgm(s, b, v),
        None => v.clone(),
    };
    let o1 = local_core(s, &m.local0, x).plus(x);
    let (w, probs) = mssa(s, &m.mssa, &maybe_bsgm(&m.bsgm0, &o1));
    let fc = lrcab_core(s, &m.lrcab0, &w).plus(&w);
    let o2 = fc.plus(&o1);
    let o3 = local_core(s, &m.local1, &fc).plus(&o2);
    let shared = m.share_scores.then_some(&probs[..]);
    let sw = sw_mssa(s, &m.sw_mssa, &maybe_bsgm(&m.bsgm1, &o3), shared);
    lrcab_core(s, &m.lrcab1, &sw).plus(&o3)
}

/// Full model, `[3, H, W] -> [3, aH, aW]`.
pub fn network<T: Element>(model: &EstnWeights<T>, lr: &Tensor<T>) -> Tensor<f64> {
    let s = &model.params;
    let l = &model.layout;
    let f0 = conv(s, l.head, &Map::from_tensor(lr));
    let mut f = f0.clone();
    for m in &l.body {
        f = estm(s, m, &f);
    }
    let t = conv(s, l.tail, &f.plus(&f0));
    let a = l.scale;
    let mut out = Map::zeros(3, t.h * a, t.w * a);
    for c in 0..3 {
        for y in 0..t.h {
            for x in 0..t.w {
                for dy in 0..a {
                    for dx in 0..a {
                        out.set(c, a * y + dy, a * x + dx, t.at(c * a * a + dy * a + dx, y, x));
                    }
                }
            }
        }
    }
    out.to_tensor()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirror_bounces() {
        let got: Vec<usize> = (0..9).map(|i| mirror(i, 3)).collect();
        assert_eq!(got, [0, 1, 2, 1, 0, 1, 2, 1, 0]);
    }

    #[test]
    fn shift_groups() {
        let mut x = Map::zeros(6, 3, 3);
        x.d.iter_mut().enumerate().for_each(|(i, v)| *v = (i % 9) as f64 + 1.0);
        let y = shift(&x);
        assert_eq!(y.channels(0, 1).d, x.channels(0, 1).d);
        assert_eq!(y.channels(1, 1).d, x.channels(1, 1).d);
        assert_eq!(y.channels(2, 1).d, [4., 5., 6., 7., 8., 9., 0., 0., 0.]);
        assert_eq!(y.channels(5, 1).d, [0., 1., 2., 0., 4., 5., 0., 7., 8.]);
    }
}
