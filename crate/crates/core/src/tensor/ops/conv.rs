use rayon::prelude::*;

use super::{expect_rank, Padding};
use crate::error::{Error, Result};
use crate::tensor::gemm::{gemm_nn, gemm_nt, gemm_tn};
use crate::tensor::{Element, Tensor, Var};

struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn cols(&self) -> usize {
        self.cin * self.kh * self.kw
    }
    fn pixels(&self) -> usize {
        self.oh * self.ow
    }
    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1
    }
}

/// `col[(ci*kh+dy)*kw+dx][oy*ow+ox] = x[ci][oy+dy][ox+dx]`
fn im2col<T: Element>(x: &[T], g: &Geometry) -> Vec<T> {
    let mut col = vec![T::zero(); g.cols() * g.pixels()];
    col.par_chunks_mut(g.pixels()).enumerate().for_each(|(r, row)| {
        let (ci, rem) = (r / (g.kh * g.kw), r % (g.kh * g.kw));
        let (dy, dx) = (rem / g.kw, rem % g.kw);
        for oy in 0..g.oh {
            let src = &x[(ci * g.h + oy + dy) * g.w + dx..];
            row[oy * g.ow..(oy + 1) * g.ow].copy_from_slice(&src[..g.ow]);
        }
    });
    col
}

fn col2im<T: Element>(col: &[T], g: &Geometry) -> Vec<T> {
    let mut x = vec![T::zero(); g.cin * g.h * g.w];
    let k2 = g.kh * g.kw;
    x.par_chunks_mut(g.h * g.w).enumerate().for_each(|(ci, plane)| {
        for r in 0..k2 {
            let (dy, dx) = (r / g.kw, r % g.kw);
            let row = &col[(ci * k2 + r) * g.pixels()..(ci * k2 + r + 1) * g.pixels()];
            for oy in 0..g.oh {
                let dst = &mut plane[(oy + dy) * g.w + dx..];
                for (d, &v) in dst[..g.ow].iter_mut().zip(&row[oy * g.ow..(oy + 1) * g.ow]) {
                    *d += v;
                }
            }
        }
    });
    x
}

fn same_pads(kh: usize, kw: usize) -> [usize; 4] {
    [kh / 2, kh / 2, kw / 2, kw / 2]
}

impl<'t, T: Element> Var<'t, T> {
    /// 2-D cross-correlation of `[Cin, H, W]` with `[Cout, Cin, kh, kw]`.
    pub fn conv2d(self, kernel: Self, bias: Option<Self>, padding: Padding) -> Result<Self> {
        let xs = expect_rank("conv2d", &self, 3)?;
        let ks = expect_rank("conv2d", &kernel, 4)?;
        if ks[1] != xs[0] {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {:?} expects {} input channels, input is {:?}", ks, ks[1], xs),
            ));
        }
        if xs[1] == 0 || xs[2] == 0 {
            return Err(Error::shape("conv2d", "empty spatial extent"));
        }
        if padding != Padding::Valid && (ks[2] % 2 == 0 || ks[3] % 2 == 0) {
            return Err(Error::shape("conv2d", format!("same padding needs odd kernel, got {:?}", ks)));
        }
        if let Some(b) = &bias {
            if b.shape().iter().product::<usize>() != ks[0] {
                return Err(Error::shape("conv2d", format!("bias {:?} for {} outputs", b.shape(), ks[0])));
            }
        }
        let padded = match padding {
            Padding::Valid => self,
            _ if ks[2] == 1 && ks[3] == 1 => self,
            mode => self.pad2d(same_pads(ks[2], ks[3]), mode)?,
        };
        padded.conv_valid(kernel, bias)
    }

    fn conv_valid(self, kernel: Self, bias: Option<Self>) -> Result<Self> {
        let xs = self.shape();
        let ks = kernel.shape();
        if xs[1] < ks[2] || xs[2] < ks[3] {
            return Err(Error::shape("conv2d", format!("kernel {:?} larger than input {:?}", ks, xs)));
        }
        let cout = ks[0];
        let g = Geometry {
            cin: xs[0],
            h: xs[1],
            w: xs[2],
            kh: ks[2],
            kw: ks[3],
            oh: xs[1] - ks[2] + 1,
            ow: xs[2] - ks[3] + 1,
        };
        let x = self.value();
        let k = kernel.value();
        let mut out = vec![T::zero(); cout * g.pixels()];
        if g.pointwise() {
            gemm_nn(cout, g.cin, g.pixels(), k.data(), x.data(), &mut out);
        } else {
            let col = im2col(x.data(), &g);
            gemm_nn(cout, g.cols(), g.pixels(), k.data(), &col, &mut out);
        }
        if let Some(b) = &bias {
            let bv = b.value();
            for (c, plane) in out.chunks_mut(g.pixels()).enumerate() {
                let bc = bv.data()[c];
                plane.iter_mut().for_each(|v| *v += bc);
            }
        }
        let out = Tensor::raw(vec![cout, g.oh, g.ow], out);
        let mut parents = vec![self, kernel];
        parents.extend(bias);
        self.tape().record(
            "conv2d",
            &parents,
            out,
            Box::new(move |bw| {
                let (x, k, gr) = (&bw.inputs[0], &bw.inputs[1], bw.grad.data());
                let col = (!g.pointwise() && bw.needs[1]).then(|| im2col(x.data(), &g));
                let gx = bw.needs[0].then(|| {
                    if g.pointwise() {
                        let mut d = vec![T::zero(); g.cin * g.pixels()];
                        gemm_tn(g.cin, cout, g.pixels(), k.data(), gr, &mut d);
                        x.with_data(d)
                    } else {
                        let mut gcol = vec![T::zero(); g.cols() * g.pixels()];
                        gemm_tn(g.cols(), cout, g.pixels(), k.data(), gr, &mut gcol);
                        x.with_data(col2im(&gcol, &g))
                    }
                });
                let gk = bw.needs[1].then(|| {
                    let mut d = vec![T::zero(); cout * g.cols()];
                    let src = col.as_deref().unwrap_or(x.data());
                    gemm_nt(cout, g.pixels(), g.cols(), gr, src, &mut d);
                    k.with_data(d)
                });
                let mut grads = vec![gx, gk];
                if bw.inputs.len() == 3 {
                    grads.push(bw.needs[2].then(|| {
                        let d = gr.chunks(g.pixels()).map(|c| c.iter().copied().sum()).collect();
                        bw.inputs[2].with_data(d)
                    }));
                }
                grads
            }),
        )
    }

    /// Per-channel convolution: channel `c` of `[C, H, W]` with slice `c` of
    /// `[C, kh, kw]`.
    pub fn depthwise_conv2d(self, kernel: Self, padding: Padding) -> Result<Self> {
        let xs = expect_rank("depthwise_conv2d", &self, 3)?;
        let ks = expect_rank("depthwise_conv2d", &kernel, 3)?;
        if ks[0] != xs[0] {
            return Err(Error::shape(
                "depthwise_conv2d",
                format!("kernel {:?} for input {:?}", ks, xs),
            ));
        }
        if xs[1] == 0 || xs[2] == 0 {
            return Err(Error::shape("depthwise_conv2d", "empty spatial extent"));
        }
        if padding != Padding::Valid && (ks[1] % 2 == 0 || ks[2] % 2 == 0) {
            return Err(Error::shape("depthwise_conv2d", "same padding needs odd kernel"));
        }
        let padded = match padding {
            Padding::Valid => self,
            mode => self.pad2d(same_pads(ks[1], ks[2]), mode)?,
        };
        padded.depthwise_valid(kernel)
    }

    fn depthwise_valid(self, kernel: Self) -> Result<Self> {
        let xs = self.shape();
        let ks = kernel.shape();
        let (c, h, w, kh, kw) = (xs[0], xs[1], xs[2], ks[1], ks[2]);
        if h < kh || w < kw {
            return Err(Error::shape("depthwise_conv2d", "kernel larger than input"));
        }
        let (oh, ow) = (h - kh + 1, w - kw + 1);
        let xv = self.value();
        let kv = kernel.value();
        let (x, k) = (xv.data(), kv.data());
        let mut out = vec![T::zero(); c * oh * ow];
        out.par_chunks_mut(oh * ow).enumerate().for_each(|(ci, plane)| {
            let xp = &x[ci * h * w..(ci + 1) * h * w];
            let kp = &k[ci * kh * kw..(ci + 1) * kh * kw];
            for dy in 0..kh {
                for dx in 0..kw {
                    let kv = kp[dy * kw + dx];
                    if kv == T::zero() {
                        continue;
                    }
                    for oy in 0..oh {
                        let src = &xp[(oy + dy) * w + dx..][..ow];
                        for (o, &s) in plane[oy * ow..(oy + 1) * ow].iter_mut().zip(src) {
                            *o += kv * s;
                        }
                    }
                }
            }
        });
        let out = Tensor::raw(vec![c, oh, ow], out);
        self.tape().record(
            "depthwise_conv2d",
            &[self, kernel],
            out,
            Box::new(move |bw| {
                let (x, k, g) = (&bw.inputs[0], &bw.inputs[1], bw.grad.data());
                let kd = k.data();
                let gx = bw.needs[0].then(|| {
                    let mut d = vec![T::zero(); c * h * w];
                    d.par_chunks_mut(h * w).enumerate().for_each(|(ci, plane)| {
                        let kp = &kd[ci * kh * kw..(ci + 1) * kh * kw];
                        let gp = &g[ci * oh * ow..(ci + 1) * oh * ow];
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let kv = kp[dy * kw + dx];
                                for oy in 0..oh {
                                    let dst = &mut plane[(oy + dy) * w + dx..][..ow];
                                    for (d, &gv) in dst.iter_mut().zip(&gp[oy * ow..(oy + 1) * ow]) {
                                        *d += kv * gv;
                                    }
                                }
                            }
                        }
                    });
                    x.with_data(d)
                });
                let gk = bw.needs[1].then(|| {
                    let mut d = vec![T::zero(); c * kh * kw];
                    for ci in 0..c {
                        let xp = &x.data()[ci * h * w..(ci + 1) * h * w];
                        let gp = &g[ci * oh * ow..(ci + 1) * oh * ow];
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let mut acc = T::zero();
                                for oy in 0..oh {
                                    let src = &xp[(oy + dy) * w + dx..][..ow];
                                    for (&s, &gv) in src.iter().zip(&gp[oy * ow..(oy + 1) * ow]) {
                                        acc += s * gv;
                                    }
                                }
                                d[(ci * kh + dy) * kw + dx] = acc;
                            }
                        }
                    }
                    k.with_data(d)
                });
                vec![gx, gk]
            }),
        )
    }

    /// Per-channel spatial mean: `[C, H, W] -> [C, 1, 1]`.
    pub fn global_avg_pool(self) -> Result<Self> {
        let xs = expect_rank("global_avg_pool", &self, 3)?;
        let (c, plane) = (xs[0], xs[1] * xs[2]);
        if plane == 0 {
            return Err(Error::shape("global_avg_pool", "empty spatial extent"));
        }
        let inv = T::lit(1.0 / plane as f64);
        let x = self.value();
        let data = x.data().chunks(plane).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        let out = Tensor::raw(vec![c, 1, 1], data);
        self.tape().record(
            "global_avg_pool",
            &[self],
            out,
            Box::new(move |bw| {
                let mut d = Vec::with_capacity(c * plane);
                for &g in bw.grad.data() {
                    d.extend(std::iter::repeat_n(g * inv, plane));
                }
                vec![Some(bw.inputs[0].with_data(d))]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use crate::tensor::{Padding, Tape, Tensor};

    #[test]
    fn ones_kernel_counts_neighbours() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::ones(vec![1, 3, 3]));
        let k = tape.constant(Tensor::ones(vec![1, 1, 3, 3]));
        let y = x.conv2d(k, None, Padding::Zero).unwrap().value();
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn pointwise_identity_kernel() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(vec![3, 4, 5], |i| (i as f64).sin()));
        let k = tape.constant(Tensor::from_fn(vec![3, 3, 1, 1], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
        assert_eq!(*x.conv2d(k, None, Padding::Zero).unwrap().value(), *x.value());
    }

    #[test]
    fn valid_padding_shrinks_and_bias_adds() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::ones(vec![2, 4, 5]));
        let k = tape.constant(Tensor::ones(vec![3, 2, 3, 3]));
        let b = tape.constant(Tensor::new(vec![3], vec![0.0, 1.0, -1.0]).unwrap());
        let y = x.conv2d(k, Some(b), Padding::Valid).unwrap().value();
        assert_eq!(y.shape(), &[3, 2, 3]);
        assert_eq!(y.at(&[1, 1, 2]), 19.0);
        assert_eq!(y.at(&[2, 0, 0]), 17.0);
    }

    #[test]
    fn conv_errors() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones(vec![2, 4, 4]));
        let k = tape.constant(Tensor::ones(vec![1, 3, 3, 3]));
        assert!(x.conv2d(k, None, Padding::Zero).is_err());
        let even = tape.constant(Tensor::ones(vec![1, 2, 2, 2]));
        assert!(x.conv2d(even, None, Padding::Zero).is_err());
        let empty = tape.constant(Tensor::ones(vec![2, 0, 4]));
        let k2 = tape.constant(Tensor::ones(vec![1, 2, 1, 1]));
        assert!(empty.conv2d(k2, None, Padding::Zero).is_err());
    }

    #[test]
    fn depthwise_shift_examples() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let mut k = vec![0.0; 9];
        k[3] = 1.0; // left-of-centre tap
        let k = tape.constant(Tensor::new(vec![1, 3, 3], k).unwrap());
        let y = x.depthwise_conv2d(k, Padding::Zero).unwrap().value();
        assert_eq!(y.data(), &[0.0, 1.0, 2.0]);

        let x2 = tape.constant(Tensor::new(vec![2, 1, 3], vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0]).unwrap());
        let mut k2 = vec![0.0; 18];
        k2[4] = 1.0; // channel 0 centre
        k2[9 + 5] = 1.0; // channel 1 right-of-centre
        let k2 = tape.constant(Tensor::new(vec![2, 3, 3], k2).unwrap());
        let y2 = x2.depthwise_conv2d(k2, Padding::Zero).unwrap().value();
        assert_eq!(y2.data(), &[1.0, 2.0, 3.0, 2.0, 3.0, 0.0]);
    }

    #[test]
    fn global_avg_pool_means() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 7.0, 7.0, 7.0, 7.0]).unwrap());
        let y = x.global_avg_pool().unwrap().value();
        assert_eq!(y.shape(), &[2, 1, 1]);
        assert_eq!(y.data(), &[2.5, 7.0]);
    }
}
