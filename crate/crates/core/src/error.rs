use std::path::PathBuf;

/// Errors produced anywhere in the reconstruction toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("spectrum has imaginary residue {residue:.3e} above tolerance {tolerance:.3e}; input is not symmetric")]
    ImaginaryResidue { residue: f64, tolerance: f64 },

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("phantom projects to zero; cannot scale to the requested total counts")]
    ZeroProjection,

    #[error("all-zero spectrum cannot be inverted")]
    ZeroSpectrum,

    #[error("residual energy z2'z2 = {value:.6e} is negative beyond tolerance (y'y = {yty:.6e}); adjointness or spectrum is broken")]
    NegativeResidual { value: f64, yty: f64 },

    #[error("GCV is undefined with n = {n} LORs and {p} effective pixels (need n > p; see the ill-conditioned supplement geometries)")]
    DegenerateDof { n: usize, p: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("non-finite objective at {0}")]
    NonFinite(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
