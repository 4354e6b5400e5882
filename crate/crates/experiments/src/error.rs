use miqp::MpsError;
use rascopf::cascade::CascadeError;
use rascopf::dcpf::DcpfError;
use rascopf::formulations::FormulationError;
use rascopf::network::NetworkError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Formulation(#[from] FormulationError),
    #[error(transparent)]
    Cascade(#[from] CascadeError),
    #[error(transparent)]
    Dcpf(#[from] DcpfError),
    #[error(transparent)]
    Mps(#[from] MpsError),
    #[error("invalid scenario spec: {0}")]
    Scenario(String),
}

impl ExperimentError {
    /// Process exit code: 3 I/O, 4 invalid input, 5 solver, 6 simulation.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Io { .. } => 3,
            ExperimentError::Config(_) | ExperimentError::Scenario(_) => 4,
            ExperimentError::Network(NetworkError::Io { .. }) => 3,
            ExperimentError::Network(_) => 4,
            ExperimentError::Formulation(FormulationError::Network(_))
            | ExperimentError::Formulation(FormulationError::Config(_)) => 4,
            ExperimentError::Formulation(_) => 5,
            ExperimentError::Mps(MpsError::Io(_)) => 3,
            ExperimentError::Mps(_) => 5,
            ExperimentError::Cascade(_) | ExperimentError::Dcpf(_) => 6,
        }
    }

    pub fn io(path: impl std::fmt::Display, e: impl std::fmt::Display) -> Self {
        ExperimentError::Io {
            path: path.to_string(),
            reason: e.to_string(),
        }
    }
}
