//! Deterministic simulator for decentralized federated averaging (DecAvg)
//! over Erdős–Rényi, Barabási–Albert and stochastic block model topologies.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod graph;
pub mod learner;
pub mod metrics;
pub mod partition;
pub mod protocol;
pub mod rng;

pub use error::{Error, Result};
