use std::path::PathBuf;

/// Errors produced by the registration toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("grid must have 2 or 3 axes, got {0}")]
    WrongDimensionality(usize),

    #[error("axis {axis} extent odd ({extent})")]
    OddExtent { axis: usize, extent: usize },

    #[error("axis {axis} extent {extent} is smaller than the minimum of {min}")]
    ExtentTooSmall { axis: usize, extent: usize, min: usize },

    #[error("axis {axis}: band extent {band} does not divide grid extent {grid}")]
    BandNotDivisor { axis: usize, band: usize, grid: usize },

    #[error("axis {axis}: factor {factor} = {grid}/{band} is odd")]
    OddFactor { axis: usize, factor: usize, grid: usize, band: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-Hermitian spectrum: imaginary residual {residual:e} exceeds tolerance {tolerance:e}")]
    NonHermitian { residual: f64, tolerance: f64 },

    #[error("band spectrum has nonzero Nyquist coefficients")]
    NyquistNotZero,

    #[error("loss diverged (non-finite) at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("ground-truth deformation folds ({folding_percent:.4}% negative Jacobian); use a smaller amplitude")]
    FoldingAmplitude { folding_percent: f64 },

    #[error("label {label} missing in {side} map")]
    LabelMissing { label: u32, side: &'static str },

    #[error("not a NIfTI-1 file: {0}")]
    NotNifti(String),

    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),

    #[error("truncated NIfTI payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("NIfTI dim[0] = {0} exceeds 3 spatial dimensions")]
    TooManyDims(i16),

    #[error("malformed field manifest: {0}")]
    Manifest(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error came from the filesystem or a file format rather than
    /// from argument validation.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::NotNifti(_)
                | Error::UnsupportedDatatype(_)
                | Error::TruncatedPayload { .. }
                | Error::TooManyDims(_)
                | Error::Manifest(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
