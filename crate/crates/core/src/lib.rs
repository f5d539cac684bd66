//! Knowledge-graph link prediction with budget-normalized, learnable
//! per-edge attention weights.
//!
//! The model is a single-layer graph-convolutional encoder over a
//! multi-relational graph: each entity embedding is a per-node bias plus an
//! attention-weighted sum of diagonally-rescaled neighbor embeddings, scored
//! by a DistMult or ComplEx decoder. Because every edge carries its own
//! learnable weight, trained weights double as an edge-trust signal, which
//! the analysis tooling turns into denoising and interpretability reports:
//! influencer rankings, occlusion scans, per-relation weight distributions,
//! cross-seed self-similarity, and low-weight edge flagging.
//!
//! Module map:
//! - [`graph`]: vocabulary interning, edge records, incoming-edge index,
//!   split handling; [`snapshot`] serializes graphs to a text format.
//! - [`attention`]: raw per-edge scalars and per-node budget normalization.
//! - [`encoder`] / [`decoder`]: embeddings and triple scoring.
//! - [`train`]: negative sampling, cross-entropy loss, exact gradients,
//!   Adam optimization loop; [`checkpoint`] persists parameters.
//! - [`eval`]: raw/filtered mean reciprocal rank and Hits@k.
//! - [`perturb`]: subsampling, noise injection, corruption sweeps, and the
//!   duplication-divergence synthetic benchmark.
//! - [`interpret`]: post-training edge-trust reports.

pub mod attention;
pub mod checkpoint;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod mat;
pub mod interpret;
pub mod perturb;
pub mod snapshot;
pub mod train;

pub use attention::{NormalizedAttention, RawAttention};
pub use decoder::{DecoderKind, RelationTable};
pub use encoder::{AttentionMode, ModelParameters};
pub use error::{Error, Result};
pub use eval::{EvalReport, Evaluator, Side};
pub use graph::{
    Direction, EdgeId, EdgeRecord, EntityId, GraphBuilder, KnowledgeGraph, LoadReport, RelationId,
    Split, Triple, Vocabulary,
};
pub use mat::Mat;
pub use train::{TrainConfig, TrainReport};
