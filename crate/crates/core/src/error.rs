use std::io;

use thiserror::Error;

/// Errors produced by the quantification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("station stack: {0}")]
    Stations(String),

    #[error("empty mask")]
    EmptyMask,

    #[error("erosion diameter must be odd and >= 1, got {0}")]
    EvenDiameter(usize),

    #[error("constant input: {0}")]
    ConstantInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("zero-variance region in normalized cross-correlation")]
    ZeroVariance,

    #[error("reference measurement: {0}")]
    RoiPlacement(String),

    #[error(
        "atlas measurement failed: no voxels left after fusion and erosion \
         (warped {warped:?}, intersection {intersection}, eroded {eroded})"
    )]
    MeasurementFailure {
        warped: Vec<usize>,
        intersection: usize,
        eroded: usize,
    },

    #[error("degenerate calibration design: {0}")]
    DegenerateDesign(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
