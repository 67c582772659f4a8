mod attention;
mod bsgm;
mod estm;
mod lrcab;
mod shift;

pub use attention::{window_attention, AttentionCache, CachedScores, Mode, Mssa, ScaleParams};
pub use bsgm::{block_count, Bsgm};
pub use estm::Estm;
pub use lrcab::{Lrcab, LrcabVariant};
pub use shift::{LocalStage, ShiftConvSpec};
