#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod flow;
pub mod functional;
pub mod hessian;
pub mod io;
pub mod measure;
pub mod quadratic;
pub mod rearrange;
pub mod rng;

pub use error::{Error, Result};
