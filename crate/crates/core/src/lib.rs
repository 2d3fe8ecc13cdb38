#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod approximation_chain;
pub mod curve_space;
pub mod error;
pub mod hjm_dynamics;
pub mod mc_oracle;
pub mod payoff_smoothing;
pub mod quadrature;
pub mod vi_pricer;

pub use error::{Error, Result};
