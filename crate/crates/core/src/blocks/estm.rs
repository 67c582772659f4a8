//! One enhanced transformer module: local, global, local, shifted global.

use crate::config::ModelConfig;
use crate::error::Result;
use crate::params::{Bound, ParamBuilder};
use crate::tensor::{Element, Var};

use super::{AttentionCache, Bsgm, LocalStage, Lrcab, Mssa};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Estm {
    pub local0: LocalStage,
    pub bsgm0: Option<Bsgm>,
    pub mssa: Mssa,
    pub lrcab0: Lrcab,
    pub local1: LocalStage,
    pub bsgm1: Option<Bsgm>,
    pub sw_mssa: Mssa,
    pub lrcab1: Lrcab,
    pub share_scores: bool,
}

impl Estm {
    pub fn build<T: Element>(b: &mut ParamBuilder<'_, T>, cfg: &ModelConfig) -> Self {
        let c = cfg.channels;
        let bsgm = |b: &mut ParamBuilder<'_, T>, name: &str| {
            cfg.bsgm_enabled
                .then(|| b.scope(name, |b| Bsgm::build(b, c, cfg.bsgm_window, cfg.train_patch)))
        };
        let lrcab = |b: &mut ParamBuilder<'_, T>, name: &str| {
            b.scope(name, |b| Lrcab::build(b, c, cfg.ca_ratio, cfg.lrcab_variant))
        };
        Estm {
            local0: b.scope("local0", |b| LocalStage::build(b, c)),
            bsgm0: bsgm(b, "bsgm0"),
            mssa: b.scope("mssa", |b| Mssa::build(b, c, &cfg.mssa_windows, true)),
            lrcab0: lrcab(b, "lrcab0"),
            local1: b.scope("local1", |b| LocalStage::build(b, c)),
            bsgm1: bsgm(b, "bsgm1"),
            sw_mssa: b.scope("sw_mssa", |b| Mssa::build(b, c, &cfg.mssa_windows, !cfg.share_scores)),
            lrcab1: lrcab(b, "lrcab1"),
            share_scores: cfg.share_scores,
        }
    }

    pub fn forward<'t, T: Element>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let bsgm = |m: &Option<Bsgm>, v: Var<'t, T>| match m {
            Some(m) => m.forward(p, v),
            None => Ok(v),
        };
        let mut cache = AttentionCache::new(self.mssa.windows.len());
        let o1 = self.local0.forward(p, x)?;
        let b0 = bsgm(&self.bsgm0, o1)?;
        let w = self.mssa.forward(p, b0, &mut cache)?;
        let fc = self.lrcab0.forward(p, w)?;
        let o2 = fc.add(o1)?;
        let o3 = self.local1.core(p, fc)?.add(o2)?;
        let b1 = bsgm(&self.bsgm1, o3)?;
        let sw = self.sw_mssa.forward_shifted(p, b1, &cache, self.share_scores)?;
        self.lrcab1.core(p, sw)?.add(o3)
    }
}
