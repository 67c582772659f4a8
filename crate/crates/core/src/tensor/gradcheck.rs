//! Central finite-difference gradient checking in 64-bit precision.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compares the tape gradient of a scalar function against central
/// differences. Returns the largest elementwise relative error, using
/// `max(|a|, |b|, 1e-8)` as the denominator.
pub fn finite_diff_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    let eval = |input: Tensor<f64>| -> Result<f64> {
        let tape = Tape::new();
        let out = f(tape.constant(input))?;
        let v = out.value();
        if v.len() != 1 {
            return Err(Error::shape("finite_diff_check", format!("f returned shape {:?}", v.shape())));
        }
        Ok(v.item())
    };

    let tape = Tape::new();
    let leaf = tape.leaf(x.clone(), true);
    let out = f(leaf)?;
    tape.backward(out)?;
    let analytic = leaf.grad().unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));

    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic.data()[i];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
