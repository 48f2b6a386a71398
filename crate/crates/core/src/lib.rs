//! Joint placement of two-partition DNN inference pipelines and multipath
//! forwarding of their traffic over a capacitated network.
//!
//! Each application splits its model into two partitions that run on
//! (possibly different) hosts. Traffic crosses the network in three stages,
//! from the source through both hosts to the destination. Link and node congestion are priced with convex cost functions
//! and the solvers minimize a weighted sum of communication and computation
//! cost.

pub mod cost;
pub mod error;
pub mod flow;
pub mod forwarding;
pub mod harness;
pub mod marginals;
pub mod paths;
pub mod placement;
pub mod problem;
pub mod solvers;
pub mod topology;

pub use error::{Error, Result};
