//! Graph data: homogeneous labeled graphs, knowledge graphs, neighbor and
//! filter indexes, negative sampling and synthetic generators.

mod filter;
mod homogeneous;
mod kg;
mod negative;
pub mod synthetic;

pub use filter::{filtered_candidates, Candidates, FilterIndex};
pub use homogeneous::{load_homogeneous, load_homogeneous_files, HomogeneousGraph, Split};
pub use kg::{load_kg, KnowledgeGraph, Neighbor, Vocab};
pub use negative::{sample_negatives, NegativeBatch};

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A directed labeled edge `(head, relation, tail)` by vocabulary index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub const fn new(head: usize, relation: usize, tail: usize) -> Self {
        Self { head, relation, tail }
    }
}

/// Orientation of a neighbor entry relative to the node that owns it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// The edge points into the owning node (`(u, r, v)` stored at `v`).
    In,
    /// The edge leaves the owning node (`(v, r, u)` stored at `v`).
    Out,
}

/// Which slot of a triple is being predicted or corrupted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Slot {
    Head,
    Tail,
}

/// Flat message list: message `k` travels from `src[k]` to `dst[k]` along
/// relation `rel[k]` with orientation `dir[k]` (as seen from `dst[k]`).
#[derive(Debug, Clone, PartialEq)]
pub struct MessageIndex {
    pub num_nodes: usize,
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    pub rel: Arc<[usize]>,
    pub dir: Arc<[Direction]>,
}

impl MessageIndex {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    /// Number of incoming messages per node.
    pub fn in_degree(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &d in self.dst.iter() {
            deg[d] += 1;
        }
        deg
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{what} {index} out of range (limit {limit})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },
    #[error("label out of range: node {node} has label {label}, but there are {classes} classes")]
    LabelOutOfRange { node: usize, label: usize, classes: usize },
    #[error("split `{0}` is empty")]
    EmptySplit(&'static str),
    #[error("triple {0:?} appears in more than one split")]
    SplitOverlap(Triple),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("unknown {what} `{name}`")]
    Unknown { what: &'static str, name: String },
}

impl GraphError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn read_to_string(path: &std::path::Path) -> Result<String, GraphError> {
    std::fs::read_to_string(path).map_err(|e| GraphError::io(path, e))
}
