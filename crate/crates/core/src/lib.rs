//! Desk-scale image and text model for fungal growth stage classification
//! and elapsed-time regression, with the synthetic data generator that feeds it.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod heads;
pub mod io;
pub mod model;
pub mod nn;
pub mod par;
pub mod synthgen;
pub mod training;

pub use error::{Error, Result};
