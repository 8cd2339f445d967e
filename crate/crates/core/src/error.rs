use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no switching region covers state {0}")]
    NoRegionCovers(String),
    #[error("step called on a finished episode")]
    StepAfterDone,
    #[error("step called before reset")]
    NotReset,
    #[error("surface set is empty")]
    EmptySurfaceSet,
    #[error("unknown surface class `{0}`")]
    UnknownSurfaceClass(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no active tape for this variable")]
    NoTapeActive,
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("unknown context id {0}")]
    UnknownContext(usize),
    #[error("policy bank is empty")]
    EmptyBank,
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersionMismatch { found: u32, expected: u32 },
    #[error("malformed checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("episode count must be positive")]
    InvalidEpisodeCount,
    #[error("no {kind} logs found in {dir}")]
    MissingLogs { kind: String, dir: PathBuf },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),
    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}
