use alloc::string::String;

use crate::tensor::TensorError;
use crate::wavelet::WaveletError;

/// Errors raised above the tensor layer: configuration, data and protocol
/// violations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Wavelet(#[from] WaveletError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("fold `{subject}`: {source}")]
    Fold {
        subject: String,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
}
