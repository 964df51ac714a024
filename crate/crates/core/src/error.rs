use thiserror::Error;

/// Errors raised by the geometry, spinor and operator constructions.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported dimension {n}: expected 1..={max}")]
    Dimension { n: usize, max: usize },

    #[error("not a spin element: {reason}")]
    NotSpinElement { reason: String },

    #[error("rotation has non-positive determinant {det}")]
    Orientation { det: f64 },

    #[error("matrix is not orthogonal (defect {defect:.3e})")]
    NotOrthogonal { defect: f64 },

    #[error("grid error: {0}")]
    Grid(String),

    #[error("metric is not positive definite at grid point {point:?}")]
    NotPositiveDefinite { point: Vec<usize> },

    #[error("incompatible spin structures {left} and {right}")]
    IncompatibleSpinStructure { left: String, right: String },

    #[error("inconsistent frames at grid point {point:?}: orthogonality defect {defect:.3e}")]
    InconsistentFrames { point: Vec<usize>, defect: f64 },

    #[error(
        "spin lift continuation is ambiguous on edge {from:?} -> {to:?} (defect {defect:.3}); refine the grid"
    )]
    RefinementNeeded {
        from: Vec<usize>,
        to: Vec<usize>,
        defect: f64,
    },

    #[error("smooth diffeomorphisms act on grid fields only with interpolation enabled")]
    InterpolationRequired,

    #[error("orientation-reversing map (det = {det}); only orientation-preserving maps are supported")]
    OrientationReversing { det: i64 },

    #[error("dense operator size {size} exceeds the cap {cap}; use a smaller grid")]
    SizeCap { size: usize, cap: usize },

    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error("wiring error: {0}")]
    Wiring(String),

    #[error("invalid descriptor `{desc}`: {reason}")]
    Descriptor { desc: String, reason: String },

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("invalid setting: {0}")]
    Setting(String),

    #[error("malformed spinor file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn descriptor(desc: &str, reason: impl Into<String>) -> Self {
        Error::Descriptor {
            desc: desc.to_string(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by invalid user input (configs, descriptors, files).
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config { .. }
                | Error::Setting(_)
                | Error::Descriptor { .. }
                | Error::Dimension { .. }
                | Error::Grid(_)
                | Error::Format(_)
                | Error::Io(_)
                | Error::Json(_)
                | Error::InterpolationRequired
                | Error::OrientationReversing { .. }
                | Error::NotPositiveDefinite { .. }
                | Error::SizeCap { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
