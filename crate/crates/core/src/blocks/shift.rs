//! Local stages built from fixed shift convolutions and learnable 1x1 mixing.

use crate::error::Result;
use crate::params::{Bound, ConvParams, ParamBuilder};
use crate::tensor::{Element, Padding, Tensor, Var};

/// Fixed five-group depthwise shift: channel groups are moved by one pixel
/// (or not at all) with zero fill.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShiftConvSpec {
    channels: usize,
}

impl ShiftConvSpec {
    /// Tap offsets `(dy, dx)` per group: output `(y, x)` reads input
    /// `(y + dy, x + dx)`. Order is center, up, down, left, right.
    pub const OFFSETS: [(isize, isize); 5] = [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)];

    pub fn new(channels: usize) -> Self {
        ShiftConvSpec { channels }
    }

    /// Contiguous group sizes, differing by at most one, larger groups first.
    pub fn group_sizes(&self) -> [usize; 5] {
        let (q, r) = (self.channels / 5, self.channels % 5);
        std::array::from_fn(|g| q + usize::from(g < r))
    }

    /// Group index of every channel.
    pub fn groups(&self) -> Vec<usize> {
        self.group_sizes()
            .iter()
            .enumerate()
            .flat_map(|(g, &n)| std::iter::repeat(g).take(n))
            .collect()
    }

    /// One-hot `[C, 3, 3]` kernel.
    pub fn kernel<T: Element>(&self) -> Tensor<T> {
        let mut k = Tensor::zeros(vec![self.channels, 3, 3]);
        for (c, g) in self.groups().into_iter().enumerate() {
            let (dy, dx) = Self::OFFSETS[g];
            k.data_mut()[c * 9 + ((1 + dy) * 3 + 1 + dx) as usize] = T::one();
        }
        k
    }

    pub fn apply<'t, T: Element>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let k = x.tape().constant(self.kernel());
        x.depthwise_conv2d(k, Padding::Zero)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocalStage {
    pub shift_in: ShiftConvSpec,
    pub expand: ConvParams,
    pub shift_mid: ShiftConvSpec,
    pub compress: ConvParams,
}

impl LocalStage {
    pub fn build<T: Element>(b: &mut ParamBuilder<'_, T>, c: usize) -> Self {
        LocalStage {
            shift_in: ShiftConvSpec::new(c),
            expand: b.conv("expand", 2 * c, c, 1),
            shift_mid: ShiftConvSpec::new(2 * c),
            compress: b.conv("compress", c, 2 * c, 1),
        }
    }

    /// Everything but the residual: `compress(shift(relu(expand(shift(x)))))`.
    pub fn core<'t, T: Element>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let e = self.expand.apply(p, self.shift_in.apply(x)?)?.relu()?;
        self.compress.apply(p, self.shift_mid.apply(e)?)
    }

    pub fn forward<'t, T: Element>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        self.core(p, x)?.add(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{Init, ParamStore};
    use crate::tensor::Tape;

    #[test]
    fn partition_covers_channels() {
        for c in 1..40 {
            let s = ShiftConvSpec::new(c).group_sizes();
            assert_eq!(s.iter().sum::<usize>(), c);
            assert!(s.iter().max().unwrap() - s.iter().min().unwrap() <= 1);
        }
        assert_eq!(ShiftConvSpec::new(7).group_sizes(), [2, 2, 1, 1, 1]);
    }

    #[test]
    fn shift_directions() {
        let tape = Tape::new();
        let plane: Vec<f64> = (1..=9).map(f64::from).collect();
        let x = tape.constant(Tensor::new(vec![5, 3, 3], plane.repeat(5)).unwrap());
        let y = ShiftConvSpec::new(5).apply(x).unwrap().value();
        let ch = |c: usize| y.data()[c * 9..(c + 1) * 9].to_vec();
        assert_eq!(ch(0), plane);
        assert_eq!(ch(1), [4., 5., 6., 7., 8., 9., 0., 0., 0.]);
        assert_eq!(ch(2), [0., 0., 0., 1., 2., 3., 4., 5., 6.]);
        assert_eq!(ch(3), [2., 3., 0., 5., 6., 0., 8., 9., 0.]);
        assert_eq!(ch(4), [0., 1., 2., 0., 4., 5., 0., 7., 8.]);
    }

    #[test]
    fn zero_weights_are_identity() {
        let mut store = ParamStore::<f32>::new();
        let stage = LocalStage::build(&mut ParamBuilder::new(&mut store, 0, Init::Zeros), 7);
        let tape = Tape::new();
        let p = store.bind(&tape, false);
        let x = Tensor::from_fn(vec![7, 5, 6], |i| (i as f32 * 0.37).sin());
        let y = stage.forward(&p, tape.constant(x.clone())).unwrap().value();
        assert!(y.bit_eq(&x));
    }

    #[test]
    fn single_pixel_keeps_only_center_group() {
        // At 1x1 the shifted groups read only padding, so with identity-like
        // 1x1 convs only the center groups survive.
        let mut store = ParamStore::<f64>::new();
        let stage = LocalStage::build(&mut ParamBuilder::new(&mut store, 0, Init::Zeros), 5);
        let w = store.get_mut(stage.expand.weight);
        for c in 0..5 {
            w.data_mut()[c * 5 + c] = 1.0;
            w.data_mut()[(5 + c) * 5 + c] = -1.0;
        }
        let w = store.get_mut(stage.compress.weight);
        for c in 0..5 {
            w.data_mut()[c * 10 + c] = 2.0;
            w.data_mut()[c * 10 + 5 + c] = 3.0;
        }
        let tape = Tape::new();
        let p = store.bind(&tape, false);
        let x = [1.5, -2.0, 0.5, 3.0, -1.0];
        let y = stage
            .forward(&p, tape.constant(Tensor::new(vec![5, 1, 1], x.to_vec()).unwrap()))
            .unwrap()
            .value();
        // Only channel 0 passes the first shift; the inner shift at 10
        // channels keeps channels 0 and 1, of which only e0 = 1.5 is nonzero.
        assert_eq!(y.data(), &[1.5 + 2.0 * 1.5, -2.0, 0.5, 3.0, -1.0]);
    }
}
