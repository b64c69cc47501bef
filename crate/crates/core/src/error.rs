use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: {left:?} vs {right:?}")]
    Shape {
        context: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("cannot normalize a zero-length feature vector")]
    ZeroVector,
    #[error("frame {got} arrived after frame {last}")]
    FrameOrder { last: u32, got: u32 },
    #[error("invalid box: width {width} and height {height} must be positive")]
    InvalidBox { width: f64, height: f64 },
    #[error("duplicate id {id} in frame {frame}")]
    DuplicateId { frame: u32, id: u32 },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn shape_err<T>(context: &'static str, left: &[usize], right: &[usize]) -> Result<T> {
    Err(Error::Shape {
        context,
        left: left.to_vec(),
        right: right.to_vec(),
    })
}
