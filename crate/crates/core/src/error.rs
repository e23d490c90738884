use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Errors raised by core operations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("bitwidth {bitwidth} outside the supported range {min}..={max}")]
    Bitwidth { bitwidth: u8, min: u8, max: u8 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("index out of range: {0}")]
    OutOfRange(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("training diverged at epoch {epoch} (loss is not finite)")]
    Diverged { epoch: usize },
    /// The bundle was built for a differently shaped model. This is not a
    /// compromise verdict.
    #[error("bundle does not match model structure: {0}")]
    StructuralMismatch(String),
}
