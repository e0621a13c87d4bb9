//! Desk-scale shortcut-learning experiments for image classifiers.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod rng;
pub mod skew;
pub mod synthgen;
pub mod train;

pub use error::{Error, Result};
