// `!(x > y)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod exec;
pub mod model;
pub mod nn;
pub mod preprocess;
pub mod report;
pub mod train;

pub use error::{Error, Result};
