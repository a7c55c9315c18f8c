//! Dense state-vector quantum simulation plus a genetic-programming engine
//! for evolving quantum programs against oracle and state-preparation
//! problems.
//!
//! The crate is organised in layers that mirror the data flow of an
//! experiment:
//!
//! * [`qstate`]: register states, tensor products, measurement.
//! * [`gates`]: the gate library and its embedding into registers.
//! * [`program`]: linear, tree and linear-tree program genomes and their
//!   exact (branch-enumerating) evaluation.
//! * [`problems`]: oracle families, target states and reference circuits.
//! * [`fitness`]: the fitness schemes and their shared comparison interface.
//! * [`evolve`]: populations, selection, variation and the run loop.
//!
//! All randomness flows from a single seed through `rand_chacha` streams, so
//! runs are reproducible regardless of worker-thread count. Compile without
//! the default `parallel` feature to drop the `rayon` dependency; evaluation
//! then falls back to the sequential path.

pub mod error;
pub mod evolve;
pub mod fitness;
pub mod gates;
pub mod problems;
pub mod program;
pub mod qstate;

pub use error::{Error, Result};
