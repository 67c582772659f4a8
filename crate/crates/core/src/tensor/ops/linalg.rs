use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::gemm::{gemm_nn, gemm_nt, gemm_tn};
use crate::tensor::{split_axis, Element, Tensor, Var};

/// Runs `f(batch, out_chunk)` over equal output chunks, in parallel when the
/// batch is large. Each chunk is written by exactly one task.
fn per_batch<T: Element>(out: &mut [T], chunk: usize, f: impl Fn(usize, &mut [T]) + Sync + Send) {
    if chunk == 0 {
        return;
    }
    if out.len() / chunk >= 4 && out.len() >= 4096 {
        out.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    } else {
        out.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}

impl<'t, T: Element> Var<'t, T> {
    /// Batched matrix product `[.., n, k] x [.., k, m] -> [.., n, m]`.
    /// Leading axes must match exactly.
    pub fn matmul(self, other: Self) -> Result<Self> {
        let (sa, sb) = (self.shape(), other.shape());
        let r = sa.len();
        if r < 2 || sb.len() != r || sa[..r - 2] != sb[..r - 2] || sa[r - 1] != sb[r - 2] {
            return Err(Error::shape("matmul", format!("{:?} x {:?}", sa, sb)));
        }
        let batch: usize = sa[..r - 2].iter().product();
        let (n, k, m) = (sa[r - 2], sa[r - 1], sb[r - 1]);
        let (a, b) = (self.value(), other.value());
        let (ad, bd) = (a.data(), b.data());
        let mut out = vec![T::zero(); batch * n * m];
        per_batch(&mut out, n * m, |i, c| {
            gemm_nn(n, k, m, &ad[i * n * k..(i + 1) * n * k], &bd[i * k * m..(i + 1) * k * m], c)
        });
        let mut out_shape = sa.clone();
        out_shape[r - 1] = m;
        let out = Tensor::raw(out_shape, out);
        self.tape().record(
            "matmul",
            &[self, other],
            out,
            Box::new(move |bw| {
                let (a, b, g) = (&bw.inputs[0], &bw.inputs[1], bw.grad.data());
                let (ad, bd) = (a.data(), b.data());
                let ga = bw.needs[0].then(|| {
                    let mut d = vec![T::zero(); batch * n * k];
                    per_batch(&mut d, n * k, |i, c| {
                        gemm_nt(n, m, k, &g[i * n * m..(i + 1) * n * m], &bd[i * k * m..(i + 1) * k * m], c)
                    });
                    a.with_data(d)
                });
                let gb = bw.needs[1].then(|| {
                    let mut d = vec![T::zero(); batch * k * m];
                    per_batch(&mut d, k * m, |i, c| {
                        gemm_tn(k, n, m, &ad[i * n * k..(i + 1) * n * k], &g[i * n * m..(i + 1) * n * m], c)
                    });
                    b.with_data(d)
                });
                vec![ga, gb]
            }),
        )
    }

    /// Fully connected map along `axis`: `weights` is `[out, in]`, the input
    /// extent on `axis` must be `in`. All other axes are batched.
    pub fn dense(self, axis: usize, weights: Self, bias: Option<Self>) -> Result<Self> {
        let shape = self.shape();
        let ws = weights.shape();
        if axis >= shape.len() || ws.len() != 2 || ws[1] != shape[axis] {
            return Err(Error::shape(
                "dense",
                format!("weights {:?} on axis {} of {:?}", ws, axis, shape),
            ));
        }
        let (fan_out, fan_in) = (ws[0], ws[1]);
        if let Some(b) = &bias {
            if b.shape().iter().product::<usize>() != fan_out {
                return Err(Error::shape("dense", format!("bias {:?} for {} outputs", b.shape(), fan_out)));
            }
        }
        let (outer, _, inner) = split_axis(&shape, axis);
        let xv = self.value();
        let wv = weights.value();
        let (x, w) = (xv.data(), wv.data());
        let mut out = vec![T::zero(); outer * fan_out * inner];
        if inner == 1 {
            gemm_nt(outer, fan_in, fan_out, x, w, &mut out);
        } else {
            per_batch(&mut out, fan_out * inner, |o, c| {
                gemm_nn(fan_out, fan_in, inner, w, &x[o * fan_in * inner..(o + 1) * fan_in * inner], c)
            });
        }
        if let Some(b) = &bias {
            let bv = b.value();
            for (i, c) in out.chunks_mut(inner).enumerate() {
                let bj = bv.data()[i % fan_out];
                c.iter_mut().for_each(|v| *v += bj);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = fan_out;
        let out = Tensor::raw(out_shape, out);
        let mut parents = vec![self, weights];
        parents.extend(bias);
        self.tape().record(
            "dense",
            &parents,
            out,
            Box::new(move |bw| {
                let (x, w, g) = (&bw.inputs[0], &bw.inputs[1], bw.grad.data());
                let mut grads = Vec::with_capacity(bw.inputs.len());
                if inner == 1 {
                    grads.push(bw.needs[0].then(|| {
                        let mut d = vec![T::zero(); outer * fan_in];
                        gemm_nn(outer, fan_out, fan_in, g, w.data(), &mut d);
                        x.with_data(d)
                    }));
                    grads.push(bw.needs[1].then(|| {
                        let mut d = vec![T::zero(); fan_out * fan_in];
                        gemm_tn(fan_out, outer, fan_in, g, x.data(), &mut d);
                        w.with_data(d)
                    }));
                } else {
                    grads.push(bw.needs[0].then(|| {
                        let mut d = vec![T::zero(); outer * fan_in * inner];
                        let wd = w.data();
                        per_batch(&mut d, fan_in * inner, |o, c| {
                            gemm_tn(fan_in, fan_out, inner, wd, &g[o * fan_out * inner..(o + 1) * fan_out * inner], c)
                        });
                        x.with_data(d)
                    }));
                    grads.push(bw.needs[1].then(|| {
                        let mut d = vec![T::zero(); fan_out * fan_in];
                        for o in 0..outer {
                            gemm_nt(
                                fan_out,
                                inner,
                                fan_in,
                                &g[o * fan_out * inner..(o + 1) * fan_out * inner],
                                &x.data()[o * fan_in * inner..(o + 1) * fan_in * inner],
                                &mut d,
                            );
                        }
                        w.with_data(d)
                    }));
                }
                if bw.inputs.len() == 3 {
                    grads.push(bw.needs[2].then(|| {
                        let mut d = vec![T::zero(); fan_out];
                        for (i, c) in g.chunks(inner).enumerate() {
                            d[i % fan_out] += c.iter().copied().sum::<T>();
                        }
                        bw.inputs[2].with_data(d)
                    }));
                }
                grads
            }),
        )
    }
}
