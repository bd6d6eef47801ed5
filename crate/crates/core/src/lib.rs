#![no_std]
// `!(x > 0.0)` is the NaN-rejecting form; reference constants keep their digits.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod distill;
pub mod error;
pub mod eval;
pub mod experts;
pub mod models;
pub mod numkit;

pub use error::{Error, Result};
