use std::path::PathBuf;

use thiserror::Error;

use crate::topology::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("cannot read scenario file {path}: {source}")]
    ScenarioFile {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("application {app}, stage {stage}: positive-fraction forwarding graph contains the cycle {cycle:?}")]
    CyclicFlow {
        app: usize,
        stage: usize,
        cycle: Vec<NodeId>,
    },

    #[error("application {app}, stage {stage}: node {to} is unreachable from node {from}")]
    Unreachable {
        app: usize,
        stage: usize,
        from: NodeId,
        to: NodeId,
    },

    #[error("application {app}: partition {partition} has no admissible host with finite score")]
    NoCandidate { app: usize, partition: usize },

    #[error("invalid forwarding policy: {0}")]
    InvalidPolicy(String),

    #[error("brute-force placement would enumerate {combinations} combinations (limit {limit})")]
    OracleTooLarge { combinations: u128, limit: u128 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
