#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod bayes;
pub mod constraints;
pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod trainers;

pub use error::{Error, Result};
