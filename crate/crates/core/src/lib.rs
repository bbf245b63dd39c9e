//! Preference-pair synthesis through representation steering.
//!
//! The crate runs a small decoder-only transformer on the CPU and builds a
//! preference dataset from it without any external annotator:
//!
//! 1. [`directions`] encodes feature instructions under positive and negative
//!    system prompts and keeps, per layer, the first principal component of
//!    the representation differences.
//! 2. [`instructions`] samples raw instructions from a pre-query template,
//!    scores each one against every criterion direction, assigns the best
//!    criterion and keeps the best-aligned subset.
//! 3. [`preference`] decodes every kept instruction twice, once pushed along
//!    its criterion direction and once pushed against it, giving the chosen
//!    and rejected responses.
//!
//! [`tuner`] picks the two steering strengths from reward sweeps without any
//! training, [`analysis`] compares direction sets and checks n-gram leakage,
//! and [`pipeline`] chains all stages with persisted, resumable artifacts.
//!
//! See the `examples/` directory of this crate for one runnable program per
//! capability.

pub mod analysis;
pub mod container;
pub mod directions;
pub mod error;
pub mod instructions;
pub mod pipeline;
pub mod preference;
pub mod runtime;
pub mod toy;
pub mod tuner;

pub use error::{Error, Result};
