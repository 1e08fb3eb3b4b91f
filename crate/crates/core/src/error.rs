use thiserror::Error;

use crate::netmodel::{NodeId, SignalTiming};

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("grid must be at least 2x2, got {rows}x{cols}")]
    GridTooSmall { rows: usize, cols: usize },
    #[error("approach length must be positive, got {0}")]
    InvalidLength(f64),
    #[error("approaches need at least one lane")]
    NoLanes,
    #[error("signalized map has {got} entries, expected {expected}")]
    SignalMapSize { expected: usize, got: usize },
    #[error("invalid signal timing {0:?}")]
    InvalidTiming(SignalTiming),
    #[error("intersection {0} has fewer than three legs")]
    DegenerateNode(NodeId),
    #[error("unknown intersection {0}")]
    UnknownNode(NodeId),
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid flow configuration: {0}")]
    InvalidFlow(String),
    #[error("no route from boundary {from} to boundary {to}")]
    NoRoute { from: usize, to: usize },
    #[error("intersection {0} is not signalized")]
    NotSignalized(NodeId),
    #[error("intersection {node} is not awaiting a decision at t={time}")]
    NotAtDecision { node: NodeId, time: f64 },
    #[error("action {action} is not admissible at intersection {node}")]
    InadmissibleAction { node: NodeId, action: usize },
    #[error("deadlock at t={time}: {in_network} vehicles remain and no event is pending")]
    Deadlock { time: f64, in_network: usize },
    #[error("green duration must be positive, got {0}")]
    InvalidGreen(f64),
    #[error("no completed trips")]
    EmptyTripSet,
}

#[derive(Debug, Error, PartialEq)]
pub enum LearnError {
    #[error("input has {got} features, network expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("admissible action set is empty")]
    EmptyMask,
    #[error("replay memory holds {have} transitions, batch needs {need}")]
    InsufficientSamples { have: usize, need: usize },
    #[error("invalid network shape: {0}")]
    InvalidShape(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("no agent for region {0}")]
    MissingAgent(usize),
    #[error("agent {agent} expects state width {expected}, model produces {got}")]
    LayoutMismatch { agent: usize, expected: usize, got: usize },
    #[error("unknown model tag {0:?}")]
    UnknownModel(String),
    #[error("partition does not cover intersection {0}")]
    Uncovered(NodeId),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum PartitionError {
    #[error("alpha must be non-negative and finite, got {0}")]
    InvalidAlpha(f64),
    #[error("partition is not a disjoint cover: {0}")]
    NotAPartition(String),
    #[error("partition file: {0}")]
    Format(String),
}
