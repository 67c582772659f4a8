//! Whole-network assembly: head conv, a chain of ESTMs, conv + pixel shuffle.

use crate::blocks::{block_count, Estm};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::params::{Bound, ConvParams, Init, ParamBuilder, ParamStore};
use crate::tensor::{expect_image, Element, Tape, Tensor, Var};

/// Parameter handles for the full model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub head: ConvParams,
    pub body: Vec<Estm>,
    pub tail: ConvParams,
    pub scale: usize,
}

impl Layout {
    fn build<T: Element>(b: &mut ParamBuilder<'_, T>, cfg: &ModelConfig) -> Self {
        let c = cfg.channels;
        Layout {
            head: b.conv("head", c, 3, 3),
            body: (0..cfg.blocks)
                .map(|i| b.scope(format!("estm{i}"), |b| Estm::build(b, cfg)))
                .collect(),
            tail: b.conv("tail", 3 * cfg.scale * cfg.scale, c, 3),
            scale: cfg.scale,
        }
    }

    /// `[3, H, W] -> [3, aH, aW]`.
    pub fn forward<'t, T: Element>(&self, p: &Bound<'t, T>, lr: Var<'t, T>) -> Result<Var<'t, T>> {
        check_input(&lr.shape())?;
        let f0 = self.head.apply(p, lr)?;
        let mut f = f0;
        for m in &self.body {
            f = m.forward(p, f)?;
        }
        self.tail.apply(p, f.add(f0)?)?.pixel_shuffle(self.scale)
    }
}

fn check_input(shape: &[usize]) -> Result<()> {
    expect_image(shape)?;
    if shape[1] < 2 || shape[2] < 2 {
        return Err(Error::shape("forward", format!("input {:?} must be at least 2x2", shape)));
    }
    Ok(())
}

/// Configuration, parameter handles and values for one model.
#[derive(Clone, Debug, PartialEq)]
pub struct EstnWeights<T: Element = f32> {
    pub config: ModelConfig,
    pub layout: Layout,
    pub params: ParamStore<T>,
}

impl<T: Element> EstnWeights<T> {
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        Self::with_init(cfg, seed, Init::FanIn)
    }

    pub fn with_init(cfg: &ModelConfig, seed: u64, init: Init) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let layout = Layout::build(&mut ParamBuilder::new(&mut params, seed, init), cfg);
        Ok(EstnWeights {
            config: cfg.clone(),
            layout,
            params,
        })
    }

    pub fn cast<U: Element>(&self) -> EstnWeights<U> {
        EstnWeights {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.cast(),
        }
    }

    /// Learnable scalar count; the fixed shift kernels are not parameters.
    pub fn count_params(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn forward<'t>(&self, p: &Bound<'t, T>, lr: Var<'t, T>) -> Result<Var<'t, T>> {
        self.layout.forward(p, lr)
    }

    /// Gradient-free forward that frees intermediates after every module.
    pub fn infer(&self, lr: &Tensor<T>) -> Result<Tensor<T>> {
        check_input(lr.shape())?;
        let run = |f: &dyn Fn(&Bound<'_, T>, Var<'_, T>) -> Result<Tensor<T>>, x: &Tensor<T>| {
            let tape = Tape::new();
            let p = self.params.bind(&tape, false);
            f(&p, tape.constant(x.clone()))
        };
        let l = &self.layout;
        let f0 = run(&|p, x| Ok((*l.head.apply(p, x)?.value()).clone()), lr)?;
        let mut f = f0.clone();
        for m in &l.body {
            f = run(&|p, x| Ok((*m.forward(p, x)?.value()).clone()), &f)?;
        }
        f.add_assign(&f0);
        run(&|p, x| Ok((*l.tail.apply(p, x)?.pixel_shuffle(l.scale)?.value()).clone()), &f)
    }
}

/// Floating point operation estimate, counted as two per multiply-accumulate.
#[derive(Clone, Debug, PartialEq)]
pub struct FlopReport {
    pub lr_size: (usize, usize),
    pub parts: Vec<(String, f64)>,
}

impl FlopReport {
    pub fn total(&self) -> f64 {
        self.parts.iter().map(|(_, v)| v).sum()
    }
}

fn conv_flops(cout: usize, cin: usize, k: usize) -> f64 {
    2.0 * (cout * cin * k * k) as f64
}

/// FLOPs to produce an output of `out_size = (width, height)`. Per-pixel
/// costs are taken at the LR size; padding overhead, normalisation,
/// activations, softmax and the fixed shifts are not counted.
pub fn estimate_flops(cfg: &ModelConfig, out_size: (usize, usize)) -> FlopReport {
    let (w, h) = (out_size.0 / cfg.scale, out_size.1 / cfg.scale);
    let px = (w * h) as f64;
    let c = cfg.channels;
    let n_scales = cfg.mssa_windows.len();
    let g = c / n_scales;
    let blocks = cfg.blocks as f64;

    let local = 2.0 * (conv_flops(2 * c, c, 1) + conv_flops(c, 2 * c, 1));
    let bsgm = if cfg.bsgm_enabled {
        // Entry and exit channel denses per pixel, plus the block dense:
        // C * window-area applications of a B x B map per tile.
        let tile_px = (cfg.train_patch * cfg.train_patch) as f64;
        let b = block_count(cfg.train_patch, cfg.bsgm_window);
        let win = (cfg.bsgm_window.0 * cfg.bsgm_window.1) as f64;
        let per_tile = 2.0 * (b * b) as f64 * c as f64 * win;
        2.0 * (2.0 * conv_flops(c, c, 1) + per_tile / tile_px)
    } else {
        0.0
    };
    let mut attn = 0.0;
    for &(wh, ww) in &cfg.mssa_windows {
        let n = (wh * ww) as f64;
        // Per pixel: q, k, v projections and QK^T plus PV, each 2*n*g.
        let qkv = 3.0 * conv_flops(g, g, 1);
        let scores = 2.0 * n * g as f64;
        let apply = 2.0 * n * g as f64;
        attn += qkv + scores + apply;
        attn += if cfg.share_scores {
            conv_flops(g, g, 1) + apply
        } else {
            qkv + scores + apply
        };
    }
    attn += 2.0 * conv_flops(c, c, 1);
    let (wide, ke, kc) = cfg.lrcab_variant.geometry();
    let lrcab = 2.0 * (conv_flops(wide * c, c, ke) + conv_flops(c, wide * c, kc));
    let head = conv_flops(c, 3, 3);
    let tail = conv_flops(3 * cfg.scale * cfg.scale, c, 3);
    FlopReport {
        lr_size: (w, h),
        parts: vec![
            ("head".into(), head * px),
            ("local".into(), blocks * local * px),
            ("bsgm".into(), blocks * bsgm * px),
            ("attention".into(), blocks * attn * px),
            ("lrcab".into(), blocks * lrcab * px),
            ("tail".into(), tail * px),
        ],
    }
}

/// Hand count of parameters from the configuration alone.
pub fn param_breakdown(cfg: &ModelConfig) -> Vec<(String, usize)> {
    let c = cfg.channels;
    let conv = |cout: usize, cin: usize, k: usize| cout * cin * k * k + cout;
    let dense = |o: usize, i: usize| o * i + o;
    let n = cfg.mssa_windows.len();
    let g = c / n;
    let local = 2 * (conv(2 * c, c, 1) + conv(c, 2 * c, 1));
    let bsgm = if cfg.bsgm_enabled {
        let b = block_count(cfg.train_patch, cfg.bsgm_window);
        2 * (2 * c + 2 * dense(c, c) + dense(b, b))
    } else {
        0
    };
    let qk = if cfg.share_scores { 0 } else { 2 * n * conv(g, g, 1) };
    let attn = 3 * n * conv(g, g, 1) + n * conv(g, g, 1) + qk + 2 * conv(c, c, 1);
    let (wide, ke, kc) = cfg.lrcab_variant.geometry();
    let r = c / cfg.ca_ratio;
    let lrcab = 2 * (conv(wide * c, c, ke) + conv(c, wide * c, kc) + conv(r, c, 1) + conv(c, r, 1));
    let i = cfg.blocks;
    vec![
        ("head".into(), conv(c, 3, 3)),
        ("local".into(), i * local),
        ("bsgm".into(), i * bsgm),
        ("attention".into(), i * attn),
        ("lrcab".into(), i * lrcab),
        ("tail".into(), conv(3 * cfg.scale * cfg.scale, c, 3)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::LrcabVariant;

    #[test]
    fn build_is_deterministic_and_validated() {
        let cfg = ModelConfig::tiny(6, 1, 2);
        let a = EstnWeights::<f32>::build(&cfg, 7).unwrap();
        assert_eq!(a, EstnWeights::build(&cfg, 7).unwrap());
        assert_ne!(a.params, EstnWeights::<f32>::build(&cfg, 8).unwrap().params);
        let mut bad = cfg;
        bad.blocks = 0;
        assert!(EstnWeights::<f32>::build(&bad, 7).is_err());
    }

    #[test]
    fn hand_count_matches_registry() {
        for share in [true, false] {
            for bsgm in [true, false] {
                for variant in LrcabVariant::ALL {
                    let mut cfg = ModelConfig::tiny(6, 2, 3);
                    cfg.share_scores = share;
                    cfg.bsgm_enabled = bsgm;
                    cfg.lrcab_variant = variant;
                    let w = EstnWeights::<f32>::build(&cfg, 0).unwrap();
                    let hand: usize = param_breakdown(&cfg).iter().map(|p| p.1).sum();
                    assert_eq!(w.count_params(), hand, "{cfg:?}");
                }
            }
        }
    }

    #[test]
    fn head_conv_count() {
        let cfg = ModelConfig::default();
        assert_eq!(param_breakdown(&cfg)[0].1, 1680);
    }

    #[test]
    fn infer_matches_taped_forward() {
        let cfg = ModelConfig::tiny(6, 2, 2);
        let w = EstnWeights::<f64>::build(&cfg, 3).unwrap();
        let lr = Tensor::from_fn(vec![3, 5, 7], |i| (i as f64 * 0.05).sin() * 0.5 + 0.5);
        let tape = Tape::new();
        let p = w.params.bind(&tape, false);
        let a = w.forward(&p, tape.constant(lr.clone())).unwrap().value();
        let b = w.infer(&lr).unwrap();
        assert_eq!(b.shape(), &[3, 10, 14]);
        assert!(a.bit_eq(&b));
    }

    #[test]
    fn zero_input_zero_bias_gives_zero() {
        let cfg = ModelConfig::tiny(6, 1, 2);
        let mut w = EstnWeights::<f32>::build(&cfg, 1).unwrap();
        let ids: Vec<_> = w.params.ids().filter(|&id| w.params.name(id).ends_with("bias")).collect();
        for id in ids {
            w.params.get_mut(id).data_mut().fill(0.0);
        }
        let y = w.infer(&Tensor::zeros(vec![3, 6, 6])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn flops_scale_with_area() {
        let cfg = ModelConfig::default();
        let a = estimate_flops(&cfg, (640, 360)).total();
        let b = estimate_flops(&cfg, (1280, 360)).total();
        assert!((b / a - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_tiny_input() {
        let w = EstnWeights::<f32>::build(&ModelConfig::tiny(6, 1, 2), 1).unwrap();
        assert!(w.infer(&Tensor::zeros(vec![3, 1, 5])).is_err());
        assert!(w.infer(&Tensor::zeros(vec![4, 5, 5])).is_err());
    }
}
