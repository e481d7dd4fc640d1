//! Explainable joint intent detection and slot filling.
//!
//! A transformer encoder feeds three branches: an intent classifier, a bank
//! of per-slot-type self-attentions supervised by binary token classifiers,
//! and a slot classifier that fuses the type logits back in through cross
//! attention. The per-type attention matrices are the explanation payload;
//! [`explain`] turns them into entropy statistics and heatmaps.

pub mod autodiff;
pub mod data;
pub mod encoder;
pub mod model;
pub mod cli;
pub mod explain;
pub mod error;

pub use error::{Error, Result};
