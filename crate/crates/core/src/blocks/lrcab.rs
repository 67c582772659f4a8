//! Residual channel attention with a widened transform in front.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::params::{Bound, ConvParams, ParamBuilder};
use crate::tensor::{Element, Var};

/// Transform placed before the channel gate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LrcabVariant {
    /// 3x3 C->C, relu, 3x3 C->C.
    Original,
    /// 1x1 C->2C, relu, 1x1 2C->C.
    TwoConv1x1,
    /// 3x3 C->2C, relu, 3x3 2C->C.
    TwoConv3x3,
    /// 1x1 C->2C, relu, 3x3 2C->C.
    #[default]
    Lrcab,
}

impl LrcabVariant {
    pub const ALL: [LrcabVariant; 4] = [Self::Original, Self::TwoConv1x1, Self::TwoConv3x3, Self::Lrcab];

    /// `(expand width factor, expand kernel, compress kernel)`.
    pub fn geometry(self) -> (usize, usize, usize) {
        match self {
            Self::Original => (1, 3, 3),
            Self::TwoConv1x1 => (2, 1, 1),
            Self::TwoConv3x3 => (2, 3, 3),
            Self::Lrcab => (2, 1, 3),
        }
    }
}

impl fmt::Display for LrcabVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Original => "original",
            Self::TwoConv1x1 => "two_1x1",
            Self::TwoConv3x3 => "two_3x3",
            Self::Lrcab => "lrcab",
        })
    }
}

impl FromStr for LrcabVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown lrcab variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lrcab {
    pub expand: ConvParams,
    pub compress: ConvParams,
    pub squeeze: ConvParams,
    pub excite: ConvParams,
}

impl Lrcab {
    pub fn build<T: Element>(b: &mut ParamBuilder<'_, T>, c: usize, ratio: usize, variant: LrcabVariant) -> Self {
        let (wide, ke, kc) = variant.geometry();
        Lrcab {
            expand: b.conv("expand", wide * c, c, ke),
            compress: b.conv("compress", c, wide * c, kc),
            squeeze: b.conv("squeeze", c / ratio, c, 1),
            excite: b.conv("excite", c, c / ratio, 1),
        }
    }

    /// `t = compress(relu(expand(x)))`.
    pub fn transform<'t, T: Element>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        self.compress.apply(p, self.expand.apply(p, x)?.relu()?)
    }

    /// Per-channel gate `sigmoid(excite(relu(squeeze(pool(t)))))`, `[C,1,1]`.
    pub fn gate<'t, T: Element>(&self, p: &Bound<'t, T>, t: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = self.squeeze.apply(p, t.global_avg_pool()?)?.relu()?;
        self.excite.apply(p, s)?.sigmoid()
    }

    /// Gated transform without any residual.
    pub fn core<'t, T: Element>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let t = self.transform(p, x)?;
        t.mul_channel(self.gate(p, t)?)
    }

    pub fn forward<'t, T: Element>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        self.core(p, x)?.add(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{Init, ParamStore};
    use crate::tensor::{Tape, Tensor};

    #[test]
    fn zero_weights_are_identity() {
        for variant in LrcabVariant::ALL {
            let mut store = ParamStore::<f32>::new();
            let m = Lrcab::build(&mut ParamBuilder::new(&mut store, 0, Init::Zeros), 4, 2, variant);
            let tape = Tape::new();
            let p = store.bind(&tape, false);
            let x = Tensor::from_fn(vec![4, 3, 5], |i| (i as f32).cos() * 3.0);
            assert!(m.forward(&p, tape.constant(x.clone())).unwrap().value().bit_eq(&x));
        }
    }

    #[test]
    fn hand_gate_on_two_channels() {
        // Identity-like squeeze/excite; t is set through the compress bias.
        let mut store = ParamStore::<f64>::new();
        let m = Lrcab::build(&mut ParamBuilder::new(&mut store, 0, Init::Zeros), 2, 1, LrcabVariant::TwoConv1x1);
        store.get_mut(m.compress.bias).data_mut().copy_from_slice(&[1.0, -2.0]);
        for id in [m.squeeze.weight, m.excite.weight] {
            store.get_mut(id).data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        }
        let tape = Tape::new();
        let p = store.bind(&tape, false);
        let x = tape.constant(Tensor::zeros(vec![2, 2, 2]));
        let y = m.forward(&p, x).unwrap().value();
        // s = sigmoid(relu(t)) = [sigmoid(1), 0.5]
        let s0 = 1.0 / (1.0 + (-1.0f64).exp());
        for i in 0..4 {
            assert!((y.data()[i] - s0).abs() < 1e-12);
            assert!((y.data()[4 + i] + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gate_is_open_interval() {
        let mut store = ParamStore::<f64>::new();
        let m = Lrcab::build(&mut ParamBuilder::new(&mut store, 8, Init::FanIn), 6, 2, LrcabVariant::Lrcab);
        let tape = Tape::new();
        let p = store.bind(&tape, false);
        let x = tape.constant(Tensor::from_fn(vec![6, 4, 4], |i| (i as f64 * 0.4).sin() * 5.0));
        let t = m.transform(&p, x).unwrap();
        let s = m.gate(&p, t).unwrap().value();
        assert_eq!(s.shape(), &[6, 1, 1]);
        assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in LrcabVariant::ALL {
            assert_eq!(v.to_string().parse::<LrcabVariant>().unwrap(), v);
        }
        assert!("rcab".parse::<LrcabVariant>().is_err());
    }
}
