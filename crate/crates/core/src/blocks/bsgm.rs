//! Block sparse global mixing: a dense layer across the window-block axis.

use crate::error::{Error, Result};
use crate::params::{Bound, DenseParams, NormParams, ParamBuilder};
use crate::tensor::{Element, Var};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bsgm {
    pub norm: NormParams,
    pub entry: DenseParams,
    pub block: DenseParams,
    pub exit: DenseParams,
    pub window: (usize, usize),
    /// Square tile side the block dense was sized for.
    pub tile: usize,
}

/// Number of windows in one tile.
pub fn block_count(tile: usize, window: (usize, usize)) -> usize {
    (tile / window.0) * (tile / window.1)
}

impl Bsgm {
    pub fn build<T: Element>(b: &mut ParamBuilder<'_, T>, c: usize, window: (usize, usize), tile: usize) -> Self {
        let blocks = block_count(tile, window);
        Bsgm {
            norm: b.norm("norm", c),
            entry: b.dense("entry", c, c),
            block: b.dense("block", blocks, blocks),
            exit: b.dense("exit", c, c),
            window,
            tile,
        }
    }

    pub fn trained_block_count(&self) -> usize {
        block_count(self.tile, self.window)
    }

    /// `[C, H, W] -> [C, H, W]`. The map is reflect-padded to whole tiles and
    /// each tile is mixed independently with the same block dense.
    pub fn forward<'t, T: Element>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let (padded, crop) = x.pad_reflect((self.tile, self.tile))?;
        // Pointwise parts act on the channel axis directly; this equals the
        // channel-last formulation.
        let x1 = self.entry.apply(p, self.norm.apply(p, padded, 0)?, 0)?.gelu()?;
        let shape = x1.shape();
        let (th, tw) = (shape[1] / self.tile, shape[2] / self.tile);
        let mut rows = Vec::with_capacity(th);
        for ty in 0..th {
            let mut tiles = Vec::with_capacity(tw);
            for tx in 0..tw {
                let t = x1.crop2d(ty * self.tile, tx * self.tile, self.tile, self.tile)?;
                tiles.push(self.mix_tile(p, t)?);
            }
            rows.push(Var::concat(&tiles, 2)?);
        }
        let x4 = Var::concat(&rows, 1)?;
        self.exit.apply(p, x4, 0)?.add(x1)?.crop(&crop)
    }

    /// Grid partition, block-axis dense, grid merge on one `[C, t, t]` tile.
    fn mix_tile<'t, T: Element>(&self, p: &Bound<'t, T>, t: Var<'t, T>) -> Result<Var<'t, T>> {
        let hwc = t.permute(&[1, 2, 0])?;
        let x2 = hwc.grid_partition(self.window)?;
        let blocks = x2.shape()[0];
        if blocks != self.trained_block_count() {
            return Err(Error::shape(
                "bsgm",
                format!("{} blocks, block dense expects {}", blocks, self.trained_block_count()),
            ));
        }
        let x3 = self.block.apply(p, x2, 0)?;
        x3.grid_merge(self.window, (self.tile, self.tile))?.permute(&[2, 0, 1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{Init, ParamStore};
    use crate::tensor::{Tape, Tensor};

    fn zero_bsgm(c: usize, window: (usize, usize), tile: usize) -> (ParamStore<f64>, Bsgm) {
        let mut store = ParamStore::new();
        let m = Bsgm::build(&mut ParamBuilder::new(&mut store, 0, Init::Zeros), c, window, tile);
        (store, m)
    }

    fn set_eye(store: &mut ParamStore<f64>, id: crate::params::ParamId) {
        let t = store.get_mut(id);
        let n = t.shape()[0];
        for i in 0..n {
            t.data_mut()[i * n + i] = 1.0;
        }
    }

    #[test]
    fn zero_exit_passes_x1() {
        let (mut store, m) = zero_bsgm(3, (2, 2), 4);
        set_eye(&mut store, m.block.weight);
        set_eye(&mut store, m.entry.weight);
        store.get_mut(m.norm.gamma).data_mut().fill(1.0);
        let tape = Tape::new();
        let p = store.bind(&tape, false);
        let x = tape.constant(Tensor::from_fn(vec![3, 4, 4], |i| ((i * 7) % 5) as f64));
        let out = m.forward(&p, x).unwrap().value();
        let x1 = m
            .entry
            .apply(&p, m.norm.apply(&p, x, 0).unwrap(), 0)
            .unwrap()
            .gelu()
            .unwrap()
            .value();
        assert!(out.bit_eq(&x1));
    }

    #[test]
    fn constant_input_gives_zero() {
        let (mut store, m) = zero_bsgm(2, (2, 2), 4);
        for id in [m.block.weight, m.entry.weight, m.exit.weight] {
            set_eye(&mut store, id);
        }
        store.get_mut(m.norm.gamma).data_mut().fill(1.0);
        let tape = Tape::new();
        let p = store.bind(&tape, false);
        let x = tape.constant(Tensor::full(vec![2, 4, 4], 3.0));
        assert!(m.forward(&p, x).unwrap().value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn block_count_mismatch_is_reported() {
        let mut store = ParamStore::<f64>::new();
        let mut m = Bsgm::build(&mut ParamBuilder::new(&mut store, 0, Init::FanIn), 2, (2, 2), 4);
        m.tile = 8;
        let tape = Tape::new();
        let p = store.bind(&tape, false);
        let x = tape.constant(Tensor::zeros(vec![2, 8, 8]));
        assert!(m.forward(&p, x).is_err());
    }

    #[test]
    fn odd_sizes_keep_shape() {
        let mut store = ParamStore::<f32>::new();
        let m = Bsgm::build(&mut ParamBuilder::new(&mut store, 3, Init::FanIn), 3, (2, 2), 4);
        let tape = Tape::new();
        let p = store.bind(&tape, false);
        for (h, w) in [(2, 2), (5, 3), (9, 11)] {
            let x = tape.constant(Tensor::from_fn(vec![3, h, w], |i| i as f32 * 0.01));
            assert_eq!(m.forward(&p, x).unwrap().shape(), vec![3, h, w]);
        }
    }
}
