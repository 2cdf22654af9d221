use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("unit error in `{field}`: {reason}")]
    Unit { field: &'static str, reason: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("numerical range: {0}")]
    NumericalRange(String),

    #[error("signal at frame {frame} is outside the invertible range of the signal equation")]
    OutOfInvertibleRange { frame: usize },

    #[error("curve has zero total concentration; first moment undefined")]
    EmptyCurve,

    #[error("design matrix is rank deficient")]
    SingularDesign,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("mask selects no voxels")]
    EmptyMask,

    #[error("image {height}x{width} is smaller than the {window}x{window} window")]
    ImageTooSmall { height: usize, width: usize, window: usize },

    #[error("region {0} contains no voxels")]
    EmptyRegion(i32),

    #[error("voxel (row {row}, col {col}): {source}")]
    Voxel {
        row: usize,
        col: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn unit(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Unit { field, reason: reason.into() }
    }

    pub(crate) fn at_voxel(self, row: usize, col: usize) -> Self {
        Error::Voxel { row, col, source: Box::new(self) }
    }
}
