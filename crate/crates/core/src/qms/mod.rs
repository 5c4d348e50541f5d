//! Query/method/skill graph used by the solver for skill retrieval.

mod graph;
mod growth;
mod persist;
mod reinforce;
mod retrieval;

use std::sync::{Arc, RwLock};

pub use graph::{BlockDag, EdgeWeights, FunctionBlock, MNode, MethodKind, QNode, QmsGraph, SNode};
pub use growth::{
    normalize_block_id, source_hash, CorpusSolution, GraphDelta, GrowthArtifacts, GrowthConfig, GrowthKind,
};
pub use persist::GraphStats;
pub use reinforce::{Gradient, UpdateReport, DEFAULT_LEARNING_RATE, MIN_WEIGHT};
pub use retrieval::{
    candidate_pool, log_prob, sample_skills, softmax_over, Activation, SkillSample, SkillScores, DEFAULT_POOL_SIZE,
    DEFAULT_SAMPLE_SIZE, DEFAULT_TEMPERATURE, DEFAULT_TOP_K_Q,
};

use crate::embed::EmbedError;

/// Readers share, updates and growth take the write lock.
pub type SharedGraph = Arc<RwLock<QmsGraph>>;

#[derive(Debug, thiserror::Error)]
pub enum QmsError {
    #[error("embedding dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("node `{0}` has a zero embedding")]
    ZeroEmbedding(String),
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("contrastive node `{0}` needs both sources")]
    IncompleteContrastive(String),
    #[error("skill `{0}` has an empty template")]
    EmptyTemplate(String),
    #[error("block edge ({0}, {1}) is out of range")]
    BadBlockEdge(usize, usize),
    #[error("block graph contains a cycle")]
    CyclicBlockDag,
    #[error("edge endpoint does not exist")]
    DanglingEdge,
    #[error("edge weight {0} must be finite and non-negative")]
    NegativeWeight(f64),
    #[error("sample taken at graph version {sampled_at}, graph is now at {current}")]
    StaleSample { sampled_at: u64, current: u64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("corrupt graph files: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PartialEq for QmsError {
    fn eq(&self, other: &Self) -> bool {
        self.to_string() == other.to_string()
    }
}
