use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("value {value} at index {index} is not a spike (expected 0 or 1)")]
    NonBinary { index: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid network: {0}")]
    Network(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("no trainable parameters")]
    AllFrozen,

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("IDX file {path}: bad magic {found:#010x}, expected {expected:#010x}")]
    IdxMagic {
        path: String,
        expected: u32,
        found: u32,
    },

    #[error("IDX file {path}: truncated, expected {expected} bytes, found {actual}")]
    IdxTruncated {
        path: String,
        expected: usize,
        actual: usize,
    },

    #[error("IDX count mismatch: {images} images but {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_shape(expected: &[usize], actual: &[usize]) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        })
    }
}
