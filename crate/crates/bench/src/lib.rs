//! Shared fixtures for the benchmarks.

use tprf_core::train::{build_examples, TrainingExample};
use tprf_core::{
    generate, init_params, ModelConfig, Parameters, SyntheticConfig, SyntheticSet, TrainConfig,
};

/// Encoder shape used across the benchmarks: small enough for a laptop,
/// deep enough that layer cost shows.
pub fn small_model() -> ModelConfig {
    ModelConfig::new(2, 4, 64, 128).expect("valid shape")
}

pub fn small_params() -> Parameters<f32> {
    init_params(&small_model(), 0)
}

/// Synthetic set with `clusters × passages` passages and `qpc` queries per
/// cluster, other settings at their defaults.
pub fn corpus(clusters: usize, passages: usize, qpc: usize) -> SyntheticSet {
    generate(&SyntheticConfig {
        n_clusters: clusters,
        passages_per_cluster: passages,
        queries_per_cluster: qpc,
        ..Default::default()
    })
    .expect("valid synthetic config")
}

/// Training examples drawn from a default-sized corpus.
pub fn examples(n: usize) -> Vec<TrainingExample> {
    let set = corpus(8, 100, n.div_ceil(8));
    let mut ex = build_examples(
        &set.corpus,
        &set.queries,
        &set.qrels,
        &TrainConfig::default(),
    )
    .expect("examples")
    .examples;
    ex.truncate(n);
    ex
}
