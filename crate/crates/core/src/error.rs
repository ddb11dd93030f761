use thiserror::Error;

/// Errors raised by every module of the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("instance too large: {0}")]
    TooLarge(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("hidden neuron {neuron} of layer {layer} has an all-zero incoming row")]
    ZeroRow { layer: usize, neuron: usize },

    #[error("recovery failed at layer {layer}: {reason}")]
    Recovery { layer: usize, reason: RecoveryFailure },

    #[error("malformed JSON document: {0}")]
    Format(String),
}

/// Diagnostic attached to a failed recovery.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecoveryFailure {
    #[error("flattening has rank {found}, expected {expected} (singular value ratio {ratio:.3e})")]
    RankDeficient {
        expected: usize,
        found: usize,
        ratio: f64,
    },

    #[error("pencil eigenvalues too close after {attempts} attempts (min separation {separation:.3e})")]
    DegeneratePencil { attempts: usize, separation: f64 },

    #[error("pencil has complex eigenvalues (imaginary part {imag:.3e})")]
    ComplexSpectrum { imag: f64 },

    #[error("residual {residual:.3e} exceeds tolerance {tol:.3e}")]
    ResidualTooLarge { residual: f64, tol: f64 },

    #[error("least-squares fit did not converge after {starts} starts (relative error {error:.3e})")]
    NotConverged { starts: usize, error: f64 },

    #[error("no hidden unit matches the constant unit of the homogenized network")]
    MissingConstantUnit,

    #[error("{0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}

pub(crate) fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}
