//! Simulation laboratory for asynchronous majority dynamics on binomial random graphs.

pub mod analysis;
pub mod coupling;
pub mod dynamics;
pub mod graph;
pub mod harness;
pub mod rng;
