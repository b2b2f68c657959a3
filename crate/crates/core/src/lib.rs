//! Dense-retrieval pseudo-relevance feedback.
//!
//! A flat inner-product index over [`VectorStore`]s, vector PRF baselines
//! (Average, Rocchio), a small transformer that rewrites a query embedding
//! from its top-k feedback embeddings, the contrastive trainer for that
//! transformer, trec_eval-style metrics, and a latency harness.

pub mod bench;
pub mod error;
pub mod index;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod prf;
pub mod qrels;
pub mod store;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use index::{batch_search, search, Hit, ScoredList};
pub use metrics::{evaluate, EvalOptions, MetricReport, RunFile};
pub use model::{init_params, load_checkpoint, save_checkpoint, ModelConfig, Parameters, Pooling};
pub use pipeline::{Pipeline, Rewrite};
pub use prf::{average_prf, rocchio_prf, RocchioParams};
pub use qrels::{Grade, Qrels};
pub use store::VectorStore;
pub use synth::{generate, holdout, SyntheticConfig, SyntheticSet};
pub use train::{train, TrainConfig, TrainData, TrainOutcome};
