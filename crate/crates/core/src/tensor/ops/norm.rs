use crate::error::{Error, Result};
use crate::tensor::fault::{self, Fault};
use crate::tensor::{split_axis, Element, Tensor, Var};

impl<'t, T: Element> Var<'t, T> {
    /// Normalises to zero mean and unit (biased) variance along `axis`, then
    /// applies `gamma * x + beta`. Zero-variance input maps to `beta`.
    pub fn layer_norm(self, axis: usize, gamma: Self, beta: Self, eps: f64) -> Result<Self> {
        let shape = self.shape();
        if axis >= shape.len() || shape[axis] < 1 {
            return Err(Error::shape("layer_norm", format!("axis {} of {:?}", axis, shape)));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        for p in [&gamma, &beta] {
            if p.shape().iter().product::<usize>() != n {
                return Err(Error::shape(
                    "layer_norm",
                    format!("affine {:?} for extent {}", p.shape(), n),
                ));
            }
        }
        let eps = T::lit(eps);
        let inv_n = T::lit(1.0 / n as f64);
        let x = self.value();
        let (gv, bv) = (gamma.value(), beta.value());
        let mut xhat = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let mean = (0..n).map(|k| x.data()[at(k)]).sum::<T>() * inv_n;
                let var = (0..n)
                    .map(|k| {
                        let d = x.data()[at(k)] - mean;
                        d * d
                    })
                    .sum::<T>()
                    * inv_n;
                let is = T::one() / (var + eps).sqrt();
                inv_std[o * inner + i] = is;
                for k in 0..n {
                    xhat[at(k)] = (x.data()[at(k)] - mean) * is;
                }
            }
        }
        let out: Vec<T> = xhat
            .iter()
            .enumerate()
            .map(|(idx, &v)| {
                let k = (idx / inner) % n;
                v * gv.data()[k] + bv.data()[k]
            })
            .collect();
        let out = x.with_data(out);
        self.tape().record(
            "layer_norm",
            &[self, gamma, beta],
            out,
            Box::new(move |bw| {
                let g = bw.grad.data();
                let gamma = &bw.inputs[1];
                let gx = bw.needs[0].then(|| {
                    let mut d = vec![T::zero(); g.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |k: usize| (o * n + k) * inner + i;
                            let mut sum_g = T::zero();
                            let mut sum_gx = T::zero();
                            for k in 0..n {
                                let gh = g[at(k)] * gamma.data()[k];
                                sum_g += gh;
                                sum_gx += gh * xhat[at(k)];
                            }
                            let is = inv_std[o * inner + i];
                            for k in 0..n {
                                let gh = g[at(k)] * gamma.data()[k];
                                d[at(k)] = is * (gh - sum_g * inv_n - xhat[at(k)] * sum_gx * inv_n);
                            }
                        }
                    }
                    bw.inputs[0].with_data(d)
                });
                let mut dgamma = vec![T::zero(); n];
                let mut dbeta = vec![T::zero(); n];
                for (idx, &gv) in g.iter().enumerate() {
                    let k = (idx / inner) % n;
                    dgamma[k] += gv * xhat[idx];
                    dbeta[k] += gv;
                }
                vec![
                    gx,
                    bw.needs[1].then(|| bw.inputs[1].with_data(dgamma)),
                    bw.needs[2].then(|| bw.inputs[2].with_data(dbeta)),
                ]
            }),
        )
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax_rows(self) -> Result<Self> {
        let shape = self.shape();
        let m = *shape.last().ok_or_else(|| Error::shape("softmax_rows", "rank 0 input"))?;
        if m == 0 {
            return Err(Error::shape("softmax_rows", "empty rows"));
        }
        let x = self.value();
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(m) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            let mut inv = T::one() / total;
            if fault::active(Fault::Softmax) {
                inv = inv * T::lit(0.9);
            }
            row.iter_mut().for_each(|v| *v *= inv);
        }
        let out = x.with_data(out);
        self.tape().record(
            "softmax_rows",
            &[self],
            out,
            Box::new(move |bw| {
                let mut d = Vec::with_capacity(bw.grad.len());
                for (g, p) in bw.grad.data().chunks(m).zip(bw.output.data().chunks(m)) {
                    let dot: T = g.iter().zip(p).map(|(&g, &p)| g * p).sum();
                    d.extend(g.iter().zip(p).map(|(&g, &p)| p * (g - dot)));
                }
                vec![Some(Tensor::raw(bw.grad.shape().to_vec(), d))]
            }),
        )
    }
}
