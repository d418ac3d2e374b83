use thiserror::Error;

use crate::dyadic::DyadicInterval;

#[derive(Debug, Error)]
pub enum Error {
    #[error("interval {interval:?} is outside the tree of depth {depth}")]
    OutOfTree {
        interval: DyadicInterval,
        depth: u32,
    },

    #[error("leaf {0:?} has no children")]
    LeafHasNoChildren(DyadicInterval),

    #[error("leaf {leaf} is singular or badly conditioned (min eigenvalue {min_eigenvalue:e})")]
    SingularLeaf { leaf: usize, min_eigenvalue: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("bad parameters: {0}")]
    BadParams(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
