//! Two-stage semi-supervised distillation for text classification: a
//! consistency-trained transformer teaches a TextCNN through output, feature
//! and consistency objectives.

pub mod augment;
pub mod autodiff;
pub mod cli;
pub mod data;
pub mod efficiency;
pub mod error;
pub mod losses;
pub mod models;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
