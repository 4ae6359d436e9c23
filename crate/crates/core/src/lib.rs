//! Object co-occurrence out-of-distribution detection.
//!
//! The pipeline runs slot attention over a backbone feature map, classifies
//! every slot, mines the multi-category slot patterns seen on training data,
//! and scores each test sample with a function chosen by how its own pattern
//! relates to that training table.

pub mod bundle;
pub mod cli;
pub mod dst;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod numerics;
pub mod patterns;
pub mod record;
pub mod scoring;
pub mod slot;
pub mod synthbench;

pub use error::{OcoError, Result};
