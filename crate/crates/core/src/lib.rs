// `!(x > 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod io;
pub mod net;
pub mod pipeline;
pub mod refine;
pub mod scene;
pub mod seed;
pub mod shapes;
pub mod train;

pub use error::{Error, Result};
