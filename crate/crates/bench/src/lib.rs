//! Shared fixtures for the benchmarks.

use scpnet::data::{synth_generate, SynthConfig, SynthOutput};
use scpnet::model::{init_model, ModelParams};
use scpnet::prior::build_prior;
use scpnet::train::TrainConfig;
use scpnet::{PriorGraph, PriorParams};

pub struct Fixture {
    pub data: SynthOutput,
    pub params: ModelParams,
    pub graph: PriorGraph,
    pub config: TrainConfig,
}

/// Synthetic dataset of the given size with an initialized model and its
/// static prior.
pub fn fixture(n_labels: usize, dim: usize, n_train: usize) -> Fixture {
    let data = synth_generate(&SynthConfig {
        n_labels,
        dim,
        n_clusters: (n_labels / 5).max(1),
        n_train,
        n_test: 1,
        ..SynthConfig::default()
    })
    .expect("synthetic data");
    let config = TrainConfig { epochs: 1, ..TrainConfig::synthetic() };
    let params = init_model(&data.embeddings, config.layers, config.tau, config.leaky_slope, 0)
        .expect("model init");
    let graph = build_prior(&data.embeddings, config.prior).expect("prior");
    Fixture { data, params, graph, config }
}

pub fn prior_params(top_k: usize) -> PriorParams {
    PriorParams { top_k, ..PriorParams::default() }
}
