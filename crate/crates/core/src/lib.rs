//! Dynamic cross-source links for multi-source query evaluation.

pub mod cli;
pub mod engine;
pub mod harness;
pub mod linkstore;
pub mod model;
pub mod querygen;
