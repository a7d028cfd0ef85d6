//! Desk-scale vehicle trajectory prediction engine.
//!
//! Predicts the future trajectory of a highway vehicle (the *ego*) from its
//! own track history and the histories of its neighbors. Neighbor context is
//! summarized by one of five interchangeable pooling strategies (`slstm`,
//! `csp`, `sgan`, `polar`, `polar_vr`) feeding a maneuver-conditioned LSTM
//! encoder-decoder that outputs a Gaussian mixture over future positions.
//!
//! The crate is organized around the data flow:
//!
//! * [`geometry`] — relative frames, Cartesian/polar conversion, headings,
//!   radial velocity.
//! * [`dataset`] — trajectory ingestion, scene segmentation, maneuver
//!   labeling, dataset splits, and a synthetic highway scene generator.
//! * [`nn`] — a minimal reverse-mode autodiff tape with the ops the model
//!   needs (LSTM cell, affine, conv, pooling, softmax) plus a
//!   finite-difference gradient checker.
//! * [`pooling`] — neighborhood selection, the social tensor, and the
//!   pooling strategies themselves.
//! * [`model`] — the encoder / pooling / maneuver-recognition / decoder
//!   assembly producing the mixture output.
//! * [`train`] — losses, the Adam training loop, checkpointing glue.
//! * [`eval`] — RMSE-by-horizon and maneuver-stratified reporting.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod model;
pub mod nn;
pub mod pooling;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
