use thiserror::Error;

/// Errors raised by the spectral toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("p must be nonzero")]
    ZeroHopping,

    #[error("C below (1+p²)/2p: got {bound}, need more than {threshold}")]
    BoundTooSmall { bound: f64, threshold: f64 },

    #[error("matrix is not symmetric (max deviation {deviation:.3e})")]
    NotSymmetric { deviation: f64 },

    #[error("matrix too large for the dense solver ({size} > {cap})")]
    MatrixTooLarge { size: usize, cap: usize },

    #[error("Floquet interlacing failed: {0}")]
    InterlacingFailed(String),

    #[error("spurious roots: {0}")]
    SpuriousRoots(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("degenerate scaling range: {0}")]
    DegenerateScaling(String),

    #[error("window misses spectrum")]
    WindowMissesSpectrum,

    #[error("energy {0} lies outside the cover")]
    OutsideCover(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
