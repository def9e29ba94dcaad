//! Extreme-operating-condition search (EOCS) for relay setting calculation
//! in renewable power systems.
//!
//! The crate covers the whole pipeline: a short-circuit solver that handles
//! the nonlinear fault response of inverter-based sources, exhaustive and
//! heuristic searchers for the operating condition maximizing the end-of-line
//! three-phase fault current, feature encodings of (grid, condition,
//! protection) instances, a parallel GraphSAGE network trained to predict
//! that condition directly, and the evaluation/comparison harness.

pub mod config;
pub mod fault;
pub mod features;
pub mod grid;
pub mod matrices;
pub mod nn;
pub mod pipeline;
pub mod search;
pub mod testing;
