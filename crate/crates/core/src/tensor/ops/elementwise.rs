use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::same_shape;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor, Var};

fn gauss_cdf<T: Element>(x: T) -> T {
    T::lit(0.5) * (T::one() + (x * T::lit(FRAC_1_SQRT_2)).erf())
}

fn gauss_pdf<T: Element>(x: T) -> T {
    (-(x * x) * T::lit(0.5)).exp() * T::lit(1.0 / (2.0 * PI).sqrt())
}

fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<'t, T: Element> Var<'t, T> {
    /// Elementwise map with derivative `df(x, y)` where `y = f(x)`.
    fn unary(
        self,
        op: &'static str,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + 'static,
    ) -> Result<Self> {
        let x = self.value();
        let out = x.map(f);
        self.tape().record(
            op,
            &[self],
            out,
            Box::new(move |b| {
                let data = b.inputs[0]
                    .data()
                    .iter()
                    .zip(b.output.data())
                    .zip(b.grad.data())
                    .map(|((&x, &y), &g)| g * df(x, y))
                    .collect();
                vec![Some(b.grad.with_data(data))]
            }),
        )
    }

    pub fn relu(self) -> Result<Self> {
        self.unary(
            "relu",
            |x| x.max(T::zero()),
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    /// `x * Phi(x)` with the exact Gaussian CDF.
    pub fn gelu(self) -> Result<Self> {
        self.unary(
            "gelu",
            |x| x * gauss_cdf(x),
            |x, _| gauss_cdf(x) + x * gauss_pdf(x),
        )
    }

    pub fn sigmoid(self) -> Result<Self> {
        self.unary("sigmoid", sigmoid, |_, y| y * (T::one() - y))
    }

    pub fn abs(self) -> Result<Self> {
        self.unary("abs", |x| x.abs(), |x, _| {
            if x > T::zero() {
                T::one()
            } else if x < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        })
    }

    pub fn scale(self, alpha: f64) -> Result<Self> {
        let a = T::lit(alpha);
        self.unary("scale", move |x| x * a, move |_, _| a)
    }

    pub fn add_scalar(self, c: f64) -> Result<Self> {
        let c = T::lit(c);
        self.unary("add_scalar", move |x| x + c, |_, _| T::one())
    }

    pub fn add(self, other: Self) -> Result<Self> {
        same_shape("add", &self, &other)?;
        let (a, b) = (self.value(), other.value());
        let out = a.with_data(a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect());
        self.tape().record(
            "add",
            &[self, other],
            out,
            Box::new(|b| vec![Some(b.grad.clone()), Some(b.grad.clone())]),
        )
    }

    pub fn sub(self, other: Self) -> Result<Self> {
        same_shape("sub", &self, &other)?;
        let (a, b) = (self.value(), other.value());
        let out = a.with_data(a.data().iter().zip(b.data()).map(|(&x, &y)| x - y).collect());
        self.tape().record(
            "sub",
            &[self, other],
            out,
            Box::new(|b| vec![Some(b.grad.clone()), Some(b.grad.map(|g| -g))]),
        )
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(self, other: Self) -> Result<Self> {
        same_shape("mul", &self, &other)?;
        let (a, b) = (self.value(), other.value());
        let out = a.with_data(a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect());
        self.tape().record(
            "mul",
            &[self, other],
            out,
            Box::new(|b| {
                let g = b.grad.data();
                let (x, y) = (&b.inputs[0], &b.inputs[1]);
                let gx = b.needs[0]
                    .then(|| b.grad.with_data(g.iter().zip(y.data()).map(|(&g, &y)| g * y).collect()));
                let gy = b.needs[1]
                    .then(|| b.grad.with_data(g.iter().zip(x.data()).map(|(&g, &x)| g * x).collect()));
                vec![gx, gy]
            }),
        )
    }

    /// Scales channel `c` of a `[C, ...]` tensor by `gate[c]`. `gate` may have
    /// any shape holding exactly `C` elements (e.g. `[C, 1, 1]`).
    pub fn mul_channel(self, gate: Self) -> Result<Self> {
        let shape = self.shape();
        let gshape = gate.shape();
        if shape.is_empty() || gshape.iter().product::<usize>() != shape[0] {
            return Err(Error::shape(
                "mul_channel",
                format!("gate {:?} does not match channels of {:?}", gshape, shape),
            ));
        }
        let plane: usize = shape[1..].iter().product();
        let (x, s) = (self.value(), gate.value());
        let mut out = x.data().to_vec();
        for (c, chunk) in out.chunks_mut(plane.max(1)).enumerate() {
            let sc = s.data()[c];
            chunk.iter_mut().for_each(|v| *v *= sc);
        }
        let out = x.with_data(out);
        self.tape().record(
            "mul_channel",
            &[self, gate],
            out,
            Box::new(move |b| {
                let (x, s) = (&b.inputs[0], &b.inputs[1]);
                let g = b.grad.data();
                let gx = b.needs[0].then(|| {
                    let mut d = g.to_vec();
                    for (c, chunk) in d.chunks_mut(plane.max(1)).enumerate() {
                        let sc = s.data()[c];
                        chunk.iter_mut().for_each(|v| *v *= sc);
                    }
                    b.grad.with_data(d)
                });
                let gs = b.needs[1].then(|| {
                    let d = g
                        .chunks(plane.max(1))
                        .zip(x.data().chunks(plane.max(1)))
                        .map(|(gc, xc)| gc.iter().zip(xc).map(|(&g, &x)| g * x).sum())
                        .collect();
                    s.with_data(d)
                });
                vec![gx, gs]
            }),
        )
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(self) -> Result<Self> {
        let x = self.value();
        let out = Tensor::scalar(x.sum());
        self.tape().record(
            "sum",
            &[self],
            out,
            Box::new(|b| {
                let g = b.grad.item();
                vec![Some(Tensor::full(b.inputs[0].shape().to_vec(), g))]
            }),
        )
    }

    pub fn mean(self) -> Result<Self> {
        let n = self.value().len();
        if n == 0 {
            return Err(Error::shape("mean", "empty tensor"));
        }
        self.sum()?.scale(1.0 / n as f64)
    }

    /// Same data viewed with a different shape.
    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let x = self.value();
        let out = Tensor::new(shape, x.data().to_vec())
            .map_err(|_| Error::shape("reshape", format!("cannot view {:?} as requested", x.shape())))?;
        self.tape().record(
            "reshape",
            &[self],
            out,
            Box::new(|b| {
                let g = Tensor::raw(b.inputs[0].shape().to_vec(), b.grad.data().to_vec());
                vec![Some(g)]
            }),
        )
    }
}
