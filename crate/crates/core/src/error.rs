use std::path::PathBuf;

use crate::generation::EndpointError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}:{line}: {source}", path.display())]
    Line {
        path: PathBuf,
        line: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed line: {0}")]
    Malformed(String),

    #[error("unknown concept `{0}`")]
    UnknownConcept(String),

    #[error("unknown semantic group `{0}`")]
    UnknownGroup(String),

    #[error("duplicate concept id `{0}`")]
    DuplicateConcept(String),

    #[error("self-loop on concept `{0}`")]
    SelfLoop(String),

    #[error("knowledge graph has no concepts")]
    EmptyGraph,

    #[error("knowledge graph needs at least 2 semantic groups, found {0}")]
    TooFewGroups(usize),

    #[error("no embedding for concept `{0}`")]
    MissingEmbedding(String),

    #[error("expected {expected} values, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value `{0}`")]
    NonFinite(String),

    #[error("zero-norm embedding for concept `{0}`")]
    ZeroVector(String),

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("no keyword lies in the initial group")]
    NoInitialKeywords,

    #[error("rollout already finished after {0} steps")]
    RolloutFinished(usize),

    #[error("patient `{0}` cannot be used: {1}")]
    Unlinkable(String, &'static str),

    #[error("every patient in the corpus was skipped")]
    AllSkipped,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("corpus mismatch: {0}")]
    Corpus(String),

    #[error(transparent)]
    Endpoint(#[from] EndpointError),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at(path: impl Into<PathBuf>, line: usize, source: Error) -> Self {
        Error::Line {
            path: path.into(),
            line,
            source: Box::new(source),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
