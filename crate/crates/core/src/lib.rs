//! Region-based multi-agent signal control on a mesoscopic grid simulator.

pub mod ctde;
pub mod error;
pub mod mesosim;
pub mod netmodel;
pub mod policies;
pub mod qlearn;
pub mod regionform;
pub mod scalar;
pub mod spsa;

pub use error::{AgentError, LearnError, NetworkError, PartitionError, SimError};
pub use scalar::Scalar;

/// Double-precision Q-network.
pub type QNetwork = qlearn::Mlp<f64>;
/// Double-precision learner.
pub type Learner = qlearn::DoubleDqn<f64>;
/// Double-precision regional agent.
pub type Agent = ctde::RegionalAgent<f64>;
/// Double-precision agent set.
pub type AgentSystem = ctde::SemiCtde<f64>;
/// Single-precision agent set.
pub type AgentSystemF32 = ctde::SemiCtde<f32>;
