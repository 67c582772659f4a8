//! Differentiable primitives, implemented as methods on [`Var`].

mod conv;
mod elementwise;
mod layout;
mod linalg;
mod norm;

pub use layout::{CropRecord, Padding};

use super::{Element, Var};
use crate::error::{Error, Result};

pub(crate) fn same_shape<T: Element>(op: &'static str, a: &Var<'_, T>, b: &Var<'_, T>) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(Error::shape(op, format!("{:?} vs {:?}", sa, sb)));
    }
    Ok(())
}

pub(crate) fn expect_rank<T: Element>(op: &'static str, v: &Var<'_, T>, rank: usize) -> Result<Vec<usize>> {
    let s = v.shape();
    if s.len() != rank {
        return Err(Error::shape(op, format!("expected rank {}, got shape {:?}", rank, s)));
    }
    Ok(s)
}
