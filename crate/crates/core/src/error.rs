use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("covariance jet is inconsistent: {0}")]
    BadJet(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("sampling precondition violated: {0}")]
    Sampling(String),
    #[error("spectral representation absent; the field was not synthesized on a torus")]
    NoSpectralRepresentation,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("corrupt field container: {0}")]
    BadContainer(String),
    #[error("harness error: {0}")]
    Harness(String),
}
