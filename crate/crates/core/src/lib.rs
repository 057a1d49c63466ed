#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments, clippy::needless_range_loop)]

pub mod artifact;
pub mod cli;
pub mod dist;
pub mod economy;
pub mod error;
pub mod markov;
pub mod measures;
pub mod simulate;
pub mod solver;
pub mod uncertainty;

pub use error::{Error, Result};
