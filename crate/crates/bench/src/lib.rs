//! Random instances for the benchmarks.

use std::sync::Arc;

use nestgibbs::{ChainConfig, ChannelTransform, ClientConfig, DiscreteMeasure, LambdaSpec, ModelSpace, RiskSource};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `k` clients with uniform random risk tables in `[0, 10)` over `m` points.
pub fn table_chain(k: usize, m: usize, lambda: f64, seed: u64) -> ChainConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let space = Arc::new(ModelSpace::indexed(m).expect("nonempty space"));
    let clients = (1..=k)
        .map(|id| ClientConfig {
            client_id: id,
            source: RiskSource::Table((0..m).map(|_| rng.random_range(0.0..10.0)).collect()),
            lambda: LambdaSpec::Explicit(lambda),
        })
        .collect();
    ChainConfig {
        clients,
        q1: DiscreteMeasure::uniform(space),
        lambda0: None,
        channel: ChannelTransform::Identity,
    }
}
