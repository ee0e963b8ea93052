use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A tensor dimension does not satisfy an operation's contract.
    /// `detail` names the offending dimension and the expected/actual values.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("weight container: {0}")]
    Container(String),

    #[error("spec format: {0}")]
    SpecFormat(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("image: {0}")]
    Image(String),

    #[error("training: {0}")]
    Training(String),

    #[error("non-finite gradient in {0}; aborting update")]
    NonFiniteGradient(String),

    #[error("unknown model '{name}'; known models: {known}")]
    UnknownModel { name: String, known: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Error {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }
}
