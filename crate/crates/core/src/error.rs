use std::path::PathBuf;

use crate::model::PoolStructureKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("unsupported file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("invalid instance: {0}")]
    Invalid(String),

    #[error("expected pool structure {expected}, instance is {found}")]
    StructureMismatch {
        expected: PoolStructureKind,
        found: PoolStructureKind,
    },

    #[error("incompatible generator request: {0}")]
    Generator(String),

    #[error("problem too large: {0}")]
    TooLarge(String),

    #[error("solver backend: {0}")]
    Backend(String),

    #[error("ambiguity set is empty: {0}")]
    AmbiguityEmpty(String),

    #[error("model is infeasible: {0}")]
    Infeasible(String),

    #[error("cut for this adversary point is already in the master")]
    DuplicateCut,

    #[error("separation stopped before convergence: {reason}")]
    NotConverged {
        reason: String,
        best: Box<crate::model::StaffingSolution>,
    },

    #[error("internal error: {0}")]
    Internal(String),
}
