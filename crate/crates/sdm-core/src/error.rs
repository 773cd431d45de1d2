use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: String,
        expected: String,
        got: String,
    },

    #[error("timestep {t} out of range [1, {t_max}]")]
    TimestepOutOfRange { t: usize, t_max: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in loss term `{term}`")]
    NonFiniteLoss { term: &'static str },

    #[error("training diverged at step {step}: total loss is non-finite")]
    Diverged { step: u64 },

    #[error("dataset error: {0}")]
    Data(String),

    #[error("no frames found for group `{group}` under {root}")]
    NoFrames { root: String, group: String },

    #[error("frame index mismatch in group `{group}`: {detail}")]
    FrameIndexMismatch { group: String, detail: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("corrupt checkpoint at {path}: {detail}")]
    CorruptCheckpoint { path: String, detail: String },

    #[error(
        "stage-2 checkpoint expects stage-1 parent {expected}, but the provided stage-1 checkpoint hashes to {actual}"
    )]
    ParentHashMismatch { expected: String, actual: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(context: impl Into<String>, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.into(),
            got: got.into(),
        }
    }
}
