use thiserror::Error;

use crate::integrate::IntegrationError;
use crate::model::ModelError;
use crate::spectral::SpectralError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Integration(#[from] IntegrationError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("model `{0}` is not declared monotone")]
    NotMonotone(String),
    #[error("dominant eigenvalue is complex; level curves need the grid contour method")]
    ComplexDominant,
    #[error("switching function is undefined for this pulse ({0})")]
    NoSwitch(String),
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
