//! File formats, evaluation harness and command line for the `hashtag-core`
//! detector.

pub mod bench;
pub mod cli;
pub mod formats;
pub mod report;
pub mod trace;
