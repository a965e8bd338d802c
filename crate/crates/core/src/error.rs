use alloc::string::String;

/// Errors raised by the numerical kernels.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("population {value} outside [0, 1]")]
    PopulationDomain { value: f64 },
    #[error("intensity {value} at index {index} outside [0, 1]")]
    IntensityDomain { index: usize, value: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },
    #[error("odd spatial dimensions {height}x{width} for 2x2 pooling")]
    OddPoolDims { height: usize, width: usize },
    #[error("non-finite gradient in layer {layer} at index {index}")]
    NonFiniteGradient { layer: usize, index: usize },
    #[error("trace does not match model: {0}")]
    TraceMismatch(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn shape_err(expected: impl core::fmt::Display, actual: impl core::fmt::Display) -> Error {
    use alloc::string::ToString;
    Error::ShapeMismatch { expected: expected.to_string(), actual: actual.to_string() }
}
