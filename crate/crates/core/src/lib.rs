//! Hierarchical user-intent graph recommender.
//!
//! Items are linked by shared users into a co-interaction graph; per content
//! modality, a tower of soft assignments groups items into progressively
//! coarser intents. Users and items are scored by a dot product of
//! ID embeddings concatenated with intent representations, trained with BPR.

pub mod autodiff;
pub mod cograph;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod intents;
pub mod trainer;

pub use cograph::{build_cograph, CoGraph, GraphOptions, SparseMatrix};
pub use error::{Error, Result};
pub use eval::{rank_users, RankingReport};
pub use ingest::{Dataset, IdMap, Interaction, InteractionLog, Split, Triplet};
pub use intents::{LevelConfig, LossWeights, ModelConfig, ModelInputs, ModelParams, ScoringSnapshot};
pub use trainer::{train, TrainConfig, TrainOutcome};
