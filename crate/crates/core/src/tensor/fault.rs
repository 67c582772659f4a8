//! Deliberate defects used to confirm the self-check suite catches them.
//! Process-wide; never enabled outside the check harness.

use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};

use crate::error::Error;

static SOFTMAX: AtomicBool = AtomicBool::new(false);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Softmax rows are scaled so they no longer sum to one.
    Softmax,
}

impl FromStr for Fault {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "softmax" => Ok(Fault::Softmax),
            _ => Err(Error::Config(format!("unknown sabotage target `{s}` (known: softmax)"))),
        }
    }
}

pub fn inject(fault: Fault, on: bool) {
    match fault {
        Fault::Softmax => SOFTMAX.store(on, Ordering::SeqCst),
    }
}

pub(crate) fn active(fault: Fault) -> bool {
    match fault {
        Fault::Softmax => SOFTMAX.load(Ordering::Relaxed),
    }
}
