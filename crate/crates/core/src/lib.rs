//! Knowledge graph embeddings trained without negative sampling.
//!
//! Training replaces corrupted triples with a cross-correlation objective
//! between relation-transformed head and tail batches (`H|` vs `T`, and `H`
//! vs `T|`). The crate also ships margin/logistic negative-sampling
//! baselines and a raw/filtered link-prediction evaluator.

pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod models;
pub mod tensor;
pub mod training;
pub mod whiten;

pub use data::{load_knowledge_graph, DatasetStats, KnowledgeGraph, Query, Split, Triple};
pub use error::{Error, Result};
pub use evaluation::{evaluate, rank_triple, MetricsReport, RankResult};
pub use losses::{LossConfig, LossValue, Objective};
pub use models::{EmbeddingModel, ModelKind, Norm, PairForm};
pub use tensor::Matrix;
pub use training::{train, Method, NegFilter, TrainConfig, TrainOutcome, TrainRecord};
