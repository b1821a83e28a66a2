//! Self-supervised node embeddings by contrasting randomly sampled subsets of
//! a graph.
//!
//! Each training step draws two views of the graph (per-node feature dropping
//! and per-edge dropping), encodes both with one shared two-layer GCN, scores
//! every cross-view node pair by inner product, picks positive and negative
//! pairs from those scores, and minimizes a Jensen-Shannon contrastive loss
//! plus a cross-view consistency penalty. Frozen embeddings are evaluated with
//! a logistic-regression probe.

pub mod error;
pub mod graph;
pub mod rng;
pub mod sbm;
pub mod sampler;
pub mod encoder;
pub mod objective;
pub mod strategy;
pub mod optim;

pub use error::{Error, Result};
pub mod config;
pub mod train;
pub mod checkpoint;
pub mod gradcheck;
pub mod probe;
pub mod sweep;

pub use checkpoint::Checkpoint;
pub use encoder::{backward, forward, init_params, EncoderConfig, EncoderParams, Embeddings};
pub use graph::{load_graph, normalize_adjacency, Graph, NormalizedAdjacency, Splits};
pub use objective::{
    combined_loss, consistency_loss, contrastive_loss, select_pairs, select_pairs_shuffling,
    similarity, LossBreakdown, PairSets, SimilarityMatrix,
};
pub use probe::{accuracy, linear_probe, EvalReport, ProbeConfig};
pub use sampler::{sample_epoch_views, sample_view, SampleConfig, ViewSample};
pub use sbm::{generate_sbm, SbmSpec};
pub use strategy::{PairStrategy, StrategyRegistry};
pub use train::{embed, resume, train, EpochRecord, TrainConfig, TrainOutcome};
