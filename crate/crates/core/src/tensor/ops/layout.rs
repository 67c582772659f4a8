//! Pure data-movement primitives. All of them are expressed as a gather
//! through an index map, so one backward rule (scatter-add) serves them all.

use super::expect_rank;
use crate::error::{Error, Result};
use crate::tensor::{strides_of, Element, Tensor, Var};

/// Source index meaning "write zero".
const FILL_ZERO: usize = usize::MAX;

/// Boundary handling for spatial operators.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding, output keeps the input extent.
    Zero,
    /// No padding, output shrinks by the kernel extent minus one.
    Valid,
    /// Mirror about the edge pixel (the edge itself is not repeated),
    /// output keeps the input extent.
    Reflect,
}

/// Undoes [`Var::pad_reflect`]: the original spatial extent, anchored at the
/// top-left corner.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropRecord {
    pub height: usize,
    pub width: usize,
}

/// Reflect-pads index `i` into `0..n` by mirroring about the edges,
/// repeatedly if needed. `n` must be at least 2 when `i` is outside.
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    if (0..n).contains(&i) {
        return i as usize;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m >= n { period - m } else { m }) as usize
}

fn spatial(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::shape(op, format!("need at least 2 axes, got {:?}", shape)));
    }
    let r = shape.len();
    let lead = shape[..r - 2].iter().product();
    Ok((lead, shape[r - 2], shape[r - 1]))
}

fn with_spatial(shape: &[usize], h: usize, w: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    let r = s.len();
    s[r - 2] = h;
    s[r - 1] = w;
    s
}

/// Index map for a spatial remap: `row(oy)`/`col(ox)` give the source
/// coordinate or `None` for zero fill.
fn spatial_index(
    lead: usize,
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
    row: impl Fn(usize) -> Option<usize>,
    col: impl Fn(usize) -> Option<usize>,
) -> Vec<usize> {
    let rows: Vec<Option<usize>> = (0..oh).map(row).collect();
    let cols: Vec<Option<usize>> = (0..ow).map(col).collect();
    let mut index = Vec::with_capacity(lead * oh * ow);
    for l in 0..lead {
        for ry in &rows {
            for cx in &cols {
                index.push(match (ry, cx) {
                    (Some(y), Some(x)) => (l * h + y) * w + x,
                    _ => FILL_ZERO,
                });
            }
        }
    }
    index
}

impl<'t, T: Element> Var<'t, T> {
    /// `out[i] = self[index[i]]`, with [`FILL_ZERO`] entries producing zero.
    pub(crate) fn gather(self, op: &'static str, index: Vec<usize>, shape: Vec<usize>) -> Result<Self> {
        let x = self.value();
        let src = x.data();
        let data = index
            .iter()
            .map(|&i| if i == FILL_ZERO { T::zero() } else { src[i] })
            .collect();
        let out = Tensor::raw(shape, data);
        self.tape().record(
            op,
            &[self],
            out,
            Box::new(move |b| {
                let input = &b.inputs[0];
                let mut gi = vec![T::zero(); input.len()];
                for (&i, &g) in index.iter().zip(b.grad.data()) {
                    if i != FILL_ZERO {
                        gi[i] += g;
                    }
                }
                vec![Some(input.with_data(gi))]
            }),
        )
    }

    /// Reorders axes: output axis `k` is input axis `axes[k]`.
    pub fn permute(self, axes: &[usize]) -> Result<Self> {
        let shape = self.shape();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::shape("permute", format!("invalid axes {:?} for shape {:?}", axes, shape)));
        }
        let in_strides = strides_of(&shape);
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let n: usize = shape.iter().product();
        let mut index = Vec::with_capacity(n);
        let mut counter = vec![0usize; out_shape.len()];
        for _ in 0..n {
            index.push(counter.iter().zip(&strides).map(|(c, s)| c * s).sum());
            for k in (0..counter.len()).rev() {
                counter[k] += 1;
                if counter[k] < out_shape[k] {
                    break;
                }
                counter[k] = 0;
            }
        }
        self.gather("permute", index, out_shape)
    }

    /// Swaps the last two axes.
    pub fn transpose_last2(self) -> Result<Self> {
        let r = self.shape().len();
        if r < 2 {
            return Err(Error::shape("transpose", "need at least 2 axes"));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }

    /// Slice `start..start + len` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Self> {
        let shape = self.shape();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::shape(
                "narrow",
                format!("range {}..{} on axis {} of {:?}", start, start + len, axis, shape),
            ));
        }
        let (outer, extent, inner) = crate::tensor::split_axis(&shape, axis);
        let mut index = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            for k in start..start + len {
                let base = (o * extent + k) * inner;
                index.extend(base..base + inner);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        self.gather("narrow", index, out_shape)
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[Self], axis: usize) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = first.shape();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {} out of range for {:?}", axis, base)));
        }
        let shapes: Vec<Vec<usize>> = parts.iter().map(|p| p.shape()).collect();
        for s in &shapes {
            let ok = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(k, (a, b))| k == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", format!("{:?} vs {:?}", s, base)));
            }
        }
        let (outer, _, inner) = crate::tensor::split_axis(&base, axis);
        let extents: Vec<usize> = shapes.iter().map(|s| s[axis]).collect();
        let total: usize = extents.iter().sum();
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &e) in values.iter().zip(&extents) {
                data.extend_from_slice(&v.data()[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let mut out_shape = base;
        out_shape[axis] = total;
        let out = Tensor::raw(out_shape, data);
        first.tape().record(
            "concat",
            parts,
            out,
            Box::new(move |b| {
                let g = b.grad.data();
                extents
                    .iter()
                    .enumerate()
                    .map(|(k, &e)| {
                        if !b.needs[k] {
                            return None;
                        }
                        let off: usize = extents[..k].iter().sum();
                        let mut d = Vec::with_capacity(outer * e * inner);
                        for o in 0..outer {
                            let start = (o * total + off) * inner;
                            d.extend_from_slice(&g[start..start + e * inner]);
                        }
                        Some(b.inputs[k].with_data(d))
                    })
                    .collect()
            }),
        )
    }

    /// Pads the last two axes by `[top, bottom, left, right]`.
    pub fn pad2d(self, pads: [usize; 4], mode: Padding) -> Result<Self> {
        let shape = self.shape();
        let (lead, h, w) = spatial("pad2d", &shape)?;
        let [top, bottom, left, right] = pads;
        if pads == [0; 4] {
            return self.gather("pad2d", (0..lead * h * w).collect(), shape);
        }
        if h == 0 || w == 0 {
            return Err(Error::shape("pad2d", "empty spatial extent"));
        }
        let (oh, ow) = (h + top + bottom, w + left + right);
        let index = match mode {
            Padding::Valid => {
                return Err(Error::shape("pad2d", "valid padding cannot pad"));
            }
            Padding::Zero => spatial_index(
                lead,
                (h, w),
                (oh, ow),
                |y| y.checked_sub(top).filter(|&v| v < h),
                |x| x.checked_sub(left).filter(|&v| v < w),
            ),
            Padding::Reflect => {
                if (h == 1 && top + bottom > 0) || (w == 1 && left + right > 0) {
                    return Err(Error::shape(
                        "pad_reflect",
                        format!("cannot reflect an extent of 1 (shape {:?})", shape),
                    ));
                }
                spatial_index(
                    lead,
                    (h, w),
                    (oh, ow),
                    |y| Some(reflect_index(y as isize - top as isize, h)),
                    |x| Some(reflect_index(x as isize - left as isize, w)),
                )
            }
        };
        self.gather("pad2d", index, with_spatial(&shape, oh, ow))
    }

    /// Spatial window `[top, top+h) x [left, left+w)` of the last two axes.
    pub fn crop2d(self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        let shape = self.shape();
        let (lead, ih, iw) = spatial("crop2d", &shape)?;
        if top + h > ih || left + w > iw {
            return Err(Error::shape(
                "crop2d",
                format!("window {}x{} at ({},{}) exceeds {:?}", h, w, top, left, shape),
            ));
        }
        let index = spatial_index(lead, (ih, iw), (h, w), |y| Some(y + top), |x| Some(x + left));
        self.gather("crop2d", index, with_spatial(&shape, h, w))
    }

    /// Reflect-pads the bottom/right edges up to the next multiple of
    /// `(mh, mw)`. The returned record restores the original extent.
    pub fn pad_reflect(self, (mh, mw): (usize, usize)) -> Result<(Self, CropRecord)> {
        if mh == 0 || mw == 0 {
            return Err(Error::shape("pad_reflect", "multiples must be at least 1"));
        }
        let shape = self.shape();
        let (_, h, w) = spatial("pad_reflect", &shape)?;
        let ph = h.div_ceil(mh) * mh - h;
        let pw = w.div_ceil(mw) * mw - w;
        let padded = self.pad2d([0, ph, 0, pw], Padding::Reflect)?;
        Ok((padded, CropRecord { height: h, width: w }))
    }

    pub fn crop(self, record: &CropRecord) -> Result<Self> {
        self.crop2d(0, 0, record.height, record.width)
    }

    /// Toroidal roll of the last two axes: `out[y][x] = in[y - dy][x - dx]`.
    pub fn cyclic_shift(self, dy: isize, dx: isize) -> Result<Self> {
        let shape = self.shape();
        let (lead, h, w) = spatial("cyclic_shift", &shape)?;
        if h == 0 || w == 0 {
            return self.gather("cyclic_shift", Vec::new(), shape);
        }
        let index = spatial_index(
            lead,
            (h, w),
            (h, w),
            |y| Some((y as isize - dy).rem_euclid(h as isize) as usize),
            |x| Some((x as isize - dx).rem_euclid(w as isize) as usize),
        );
        self.gather("cyclic_shift", index, shape)
    }

    /// `[H, W, C] -> [B, wh*ww, C]`. Windows and positions inside a window
    /// are both row-major.
    pub fn grid_partition(self, (wh, ww): (usize, usize)) -> Result<Self> {
        let shape = expect_rank("grid_partition", &self, 3)?;
        let (h, w, c) = (shape[0], shape[1], shape[2]);
        if wh == 0 || ww == 0 || h % wh != 0 || w % ww != 0 {
            return Err(Error::shape(
                "grid_partition",
                format!("{}x{} not divisible into {}x{} windows", h, w, wh, ww),
            ));
        }
        let index = grid_index(h, w, c, wh, ww);
        let b = (h / wh) * (w / ww);
        self.gather("grid_partition", index, vec![b, wh * ww, c])
    }

    /// Inverse of [`grid_partition`](Self::grid_partition) for an `h x w` map.
    pub fn grid_merge(self, (wh, ww): (usize, usize), (h, w): (usize, usize)) -> Result<Self> {
        let shape = expect_rank("grid_merge", &self, 3)?;
        let c = shape[2];
        if wh == 0 || ww == 0 || h % wh != 0 || w % ww != 0 || shape[0] != (h / wh) * (w / ww) || shape[1] != wh * ww {
            return Err(Error::shape(
                "grid_merge",
                format!("{:?} is not a {}x{} window grid of {}x{}", shape, wh, ww, h, w),
            ));
        }
        let forward = grid_index(h, w, c, wh, ww);
        let mut index = vec![0; forward.len()];
        for (i, &src) in forward.iter().enumerate() {
            index[src] = i;
        }
        self.gather("grid_merge", index, vec![h, w, c])
    }

    /// `[c*a^2, H, W] -> [c, aH, aW]` with
    /// `out[ch][a*y+dy][a*x+dx] = in[ch*a^2 + dy*a + dx][y][x]`.
    pub fn pixel_shuffle(self, a: usize) -> Result<Self> {
        let shape = expect_rank("pixel_shuffle", &self, 3)?;
        let (cin, h, w) = (shape[0], shape[1], shape[2]);
        if a == 0 || cin % (a * a) != 0 {
            return Err(Error::shape(
                "pixel_shuffle",
                format!("{} channels not divisible by {}^2", cin, a),
            ));
        }
        let c = cin / (a * a);
        let (oh, ow) = (h * a, w * a);
        let mut index = Vec::with_capacity(cin * h * w);
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let (y, dy, x, dx) = (oy / a, oy % a, ox / a, ox % a);
                    let src_c = ch * a * a + dy * a + dx;
                    index.push((src_c * h + y) * w + x);
                }
            }
        }
        self.gather("pixel_shuffle", index, vec![c, oh, ow])
    }
}

fn grid_index(h: usize, w: usize, c: usize, wh: usize, ww: usize) -> Vec<usize> {
    let nbx = w / ww;
    let nb = (h / wh) * nbx;
    let mut index = Vec::with_capacity(h * w * c);
    for b in 0..nb {
        let (by, bx) = (b / nbx, b % nbx);
        for p in 0..wh * ww {
            let (iy, ix) = (p / ww, p % ww);
            let (y, x) = (by * wh + iy, bx * ww + ix);
            let base = (y * w + x) * c;
            index.extend(base..base + c);
        }
    }
    index
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn reflect_index_mirrors_without_repeating_edge() {
        let got: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
    }

    #[test]
    fn pad_reflect_row_to_multiple_of_four() {
        let tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 3], &[1.0, 2.0, 3.0]));
        let (p, rec) = x.pad_reflect((1, 4)).unwrap();
        assert_eq!(p.value().data(), &[1.0, 2.0, 3.0, 2.0]);
        assert_eq!(rec, CropRecord { height: 1, width: 3 });
        assert_eq!(p.crop(&rec).unwrap().value().data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn pad_reflect_noop_when_already_multiple() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(vec![2, 4, 8], |i| i as f64));
        let (p, rec) = x.pad_reflect((4, 4)).unwrap();
        assert_eq!(*p.value(), *x.value());
        assert_eq!(*p.crop(&rec).unwrap().value(), *x.value());
    }

    #[test]
    fn pad_reflect_rejects_single_pixel_extent() {
        let tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 3], &[1.0, 2.0, 3.0]));
        assert!(x.pad_reflect((4, 1)).is_err());
    }

    #[test]
    fn cyclic_shift_rolls_right() {
        let tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 4], &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(x.cyclic_shift(0, 1).unwrap().value().data(), &[4.0, 1.0, 2.0, 3.0]);
        let full = x.cyclic_shift(1, 4).unwrap();
        assert_eq!(*full.value(), *x.value());
    }

    #[test]
    fn grid_partition_layout_is_row_major() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(vec![4, 4, 1], |i| i as f64));
        let g = x.grid_partition((2, 2)).unwrap();
        assert_eq!(g.shape(), vec![4, 4, 1]);
        // window 0 holds (0,0),(0,1),(1,0),(1,1)
        assert_eq!(&g.value().data()[..4], &[0.0, 1.0, 4.0, 5.0]);
        // window 1 is to the right of window 0
        assert_eq!(&g.value().data()[4..8], &[2.0, 3.0, 6.0, 7.0]);
        let back = g.grid_merge((2, 2), (4, 4)).unwrap();
        assert_eq!(*back.value(), *x.value());
    }

    #[test]
    fn grid_with_full_window_is_flatten() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(vec![3, 5, 2], |i| i as f64));
        let g = x.grid_partition((3, 5)).unwrap();
        assert_eq!(g.shape(), vec![1, 15, 2]);
        assert_eq!(g.value().data(), x.value().data());
    }

    #[test]
    fn grid_partition_rejects_indivisible() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::zeros(vec![5, 4, 1]));
        assert!(x.grid_partition((2, 2)).is_err());
    }

    #[test]
    fn pixel_shuffle_example() {
        let tape = Tape::new();
        let x = tape.constant(t(&[4, 1, 1], &[1.0, 2.0, 3.0, 4.0]));
        let y = x.pixel_shuffle(2).unwrap();
        assert_eq!(y.shape(), vec![1, 2, 2]);
        assert_eq!(y.value().data(), &[1.0, 2.0, 3.0, 4.0]);
        let id = x.pixel_shuffle(1).unwrap();
        assert_eq!(*id.value(), *x.value());
        assert!(x.pixel_shuffle(3).is_err());
    }

    #[test]
    fn concat_and_narrow_are_inverse() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::from_fn(vec![2, 2, 3], |i| i as f64));
        let b = tape.constant(Tensor::from_fn(vec![1, 2, 3], |i| 100.0 + i as f64));
        let c = Var::concat(&[a, b], 0).unwrap();
        assert_eq!(c.shape(), vec![3, 2, 3]);
        assert_eq!(*c.narrow(0, 0, 2).unwrap().value(), *a.value());
        assert_eq!(*c.narrow(0, 2, 1).unwrap().value(), *b.value());
        let d = Var::concat(&[a, a], 2).unwrap();
        assert_eq!(d.shape(), vec![2, 2, 6]);
        assert_eq!(*d.narrow(2, 3, 3).unwrap().value(), *a.value());
    }

    #[test]
    fn permute_matches_manual_transpose() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(vec![2, 3, 4], |i| i as f64));
        let y = x.permute(&[1, 2, 0]).unwrap().value();
        assert_eq!(y.shape(), &[3, 4, 2]);
        assert_eq!(y.at(&[2, 1, 1]), x.value().at(&[1, 2, 1]));
        assert!(x.permute(&[0, 0, 1]).is_err());
    }
}
