use thiserror::Error;

pub type Result<T> = std::result::Result<T, AutogradError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutogradError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
}

impl AutogradError {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        AutogradError::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        AutogradError::InvalidArgument {
            op,
            msg: msg.into(),
        }
    }
}
