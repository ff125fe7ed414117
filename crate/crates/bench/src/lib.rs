//! Shared workloads for the benchmarks: the urban fixture with a freshly
//! initialized model of the requested size.

use propsplat_core::synth::urban_20;
use propsplat_core::{train, LinkQuery, Measurement, ModelState, TrainConfig};

pub struct Workload {
    pub model: ModelState,
    pub config: TrainConfig,
    /// Test links cycled to the requested count.
    pub queries: Vec<LinkQuery>,
    /// Training links, one default-size batch.
    pub batch: Vec<Measurement>,
}

pub fn urban_workload(n_gaussians: usize, n_queries: usize) -> Workload {
    let urban = urban_20().expect("fixture builds");
    let config = TrainConfig {
        n_gaussians,
        iterations: 0,
        ..Default::default()
    };
    let model = train(&urban.train, &config).expect("initialization").model;
    let queries = urban
        .test
        .iter()
        .cycle()
        .take(n_queries)
        .map(|m| LinkQuery::new(m.tx, m.rx, m.frequency_hz).expect("valid link"))
        .collect();
    let batch = urban.train.iter().copied().take(config.batch_size).collect();
    Workload {
        model,
        config,
        queries,
        batch,
    }
}
