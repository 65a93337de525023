//! Just-noticeably-different adversarial images.
//!
//! A small reverse-mode autodiff engine, two convolutional models (a digit
//! classifier and a single-object detector), a regularized gradient-descent
//! attack that stops at the first decision change, and full-reference image
//! quality metrics to score the result.

pub mod attack;
pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod models;
pub mod regularizers;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
