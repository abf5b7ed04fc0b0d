//! Joint pilot/data energy allocation and robust minimum sum-MSE linear
//! precoding for the multiuser MIMO downlink.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod config;
pub mod energy;
pub mod error;
pub mod linalg;
pub mod montecarlo;
pub mod precoder;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
