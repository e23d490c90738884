//! Core of the HASHTAG fault-injection detector.
//!
//! Everything in this crate is pure computation over in-memory values and
//! builds without `std` (an allocator is required). File formats, wall-clock
//! measurements, parallel sharding and the command-line interface live in the
//! companion `hashtag` crate.
//!
//! Module map:
//!
//! - [`net`]: fixed-point network engine (quantization, forward, exact
//!   backpropagation, bit flips, toy training).
//! - [`pearson`]: seeded Pearson tables, 8-bit and widened hashing, collision
//!   experiments.
//! - [`signature`]: secret stream ordering, per-layer signatures and the
//!   signature bundle.
//! - [`sensitivity`]: Taylor-expansion sensitivity scores and checkpoint
//!   selection.
//! - [`attack`]: progressive bit-flip attack, random-flip baseline and attack
//!   profiling.
//! - [`detector`]: online verification, guarded inference and detection-rate
//!   evaluation.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod attack;
pub mod detector;
mod error;
pub mod net;
pub mod pearson;
pub mod rng;
pub mod sensitivity;
pub mod signature;
pub mod stats;

pub use error::{Error, Result};
