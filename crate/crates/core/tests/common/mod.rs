#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use nestgibbs::conjugate::GaussianMeasure;
use nestgibbs::{
    ChainConfig, ChannelTransform, ClientConfig, DataPoint, Dataset, DiscreteMeasure, LambdaSpec, LossSpec,
    ModelSpace, RiskSource,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `m` random points in `[-3, 3]^d`.
pub fn random_space(rng: &mut ChaCha8Rng, m: usize, d: usize) -> Arc<ModelSpace> {
    loop {
        let points: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let space = ModelSpace::canonical(d, points).unwrap();
        if space.len() == m {
            return Arc::new(space);
        }
    }
}

/// Random measure; each point is dropped from the support with probability `zero_prob`,
/// keeping at least one.
pub fn random_measure(rng: &mut ChaCha8Rng, space: Arc<ModelSpace>, zero_prob: f64) -> DiscreteMeasure {
    let m = space.len();
    let keep = rng.random_range(0..m);
    let probs: Vec<f64> = (0..m)
        .map(|i| {
            if i != keep && rng.random_bool(zero_prob) {
                0.0
            } else {
                rng.random_range(0.01..1.0)
            }
        })
        .collect();
    DiscreteMeasure::from_probs(space, &probs).unwrap()
}

pub fn uniform_risks(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    (0..m).map(|_| rng.random_range(0.0..10.0)).collect()
}

/// K ∈ {2..5}, |M| ∈ {2..50}, d ∈ {1..3}, risks U[0,10], λ U[0.1,10], full-support Q_1.
pub fn theorem1_instance(rng: &mut ChaCha8Rng) -> ChainConfig {
    let k = rng.random_range(2..=5);
    let m = rng.random_range(2..=50);
    let d = rng.random_range(1..=3);
    let space = random_space(rng, m, d);
    let q1 = random_measure(rng, space, 0.0);
    let clients = (1..=k)
        .map(|id| ClientConfig {
            client_id: id,
            source: RiskSource::Table(uniform_risks(rng, m)),
            lambda: LambdaSpec::Explicit(rng.random_range(0.1..10.0)),
        })
        .collect();
    ChainConfig {
        clients,
        q1,
        lambda0: None,
        channel: ChannelTransform::Identity,
    }
}

/// Noisy linear data around `theta`.
pub fn linear_dataset(rng: &mut ChaCha8Rng, id: usize, n: usize, theta: &[f64]) -> Dataset {
    let points = (0..n)
        .map(|_| {
            let x: Vec<f64> = theta.iter().map(|_| rng.random_range(-1.5..1.5)).collect();
            let y = x.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() + rng.random_range(-0.3..0.3);
            DataPoint::new(x, y)
        })
        .collect();
    Dataset::new(id, points).unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaRule {
    /// `λ_k = λ_0·n_0/n_k`.
    SizeScaled,
    /// `λ_k = λ_0` for every client.
    Equal,
}

/// Squared-error data on a grid over `[-2, 2]^d`, d ∈ {1, 2}, K ∈ {2..4}, n_k ∈ {2..8}.
pub fn data_instance(seed: u64, rule: LambdaRule) -> ChainConfig {
    let mut rng = rng(seed);
    let d = rng.random_range(1..=2);
    let res = if d == 1 { rng.random_range(21..=60) } else { rng.random_range(8..=15) };
    let space = Arc::new(ModelSpace::grid(&vec![-2.0; d], &vec![2.0; d], &vec![res; d]).unwrap());
    let q1 = random_measure(&mut rng, space, 0.0);
    let theta: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let k = rng.random_range(2..=4);
    let lambda0 = rng.random_range(0.5..2.0);
    let clients = (1..=k)
        .map(|id| {
            let n = rng.random_range(2..=8);
            ClientConfig {
                client_id: id,
                source: RiskSource::Data {
                    dataset: linear_dataset(&mut rng, id, n, &theta),
                    loss: LossSpec::SquaredError,
                },
                lambda: match rule {
                    LambdaRule::SizeScaled => LambdaSpec::Auto,
                    LambdaRule::Equal => LambdaSpec::Explicit(lambda0),
                },
            }
        })
        .collect();
    ChainConfig {
        clients,
        q1,
        lambda0: Some(lambda0),
        channel: ChannelTransform::Identity,
    }
}

/// Random SPD matrix `AAᵀ + 0.5·I`.
pub fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(d, d) * 0.5
}

pub struct GaussianInstance {
    pub datasets: Vec<Dataset>,
    pub q1: GaussianMeasure,
    pub lambda0: f64,
}

impl GaussianInstance {
    pub fn scaled_lambdas(&self) -> Vec<f64> {
        let n0: usize = self.datasets.iter().map(Dataset::n).sum();
        self.datasets.iter().map(|d| self.lambda0 * (n0 as f64 / d.n() as f64)).collect()
    }
}

/// d ∈ {1..4}, K ∈ {2..4}, n_k ∈ {1..8}, random SPD prior precision.
pub fn gaussian_instance(rng: &mut ChaCha8Rng) -> GaussianInstance {
    let d = rng.random_range(1..=4);
    let k = rng.random_range(2..=4);
    let theta: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let datasets = (1..=k)
        .map(|id| {
            let n = rng.random_range(1..=8);
            linear_dataset(rng, id, n, &theta)
        })
        .collect();
    let mean = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
    let q1 = GaussianMeasure::new(mean, random_spd(rng, d)).unwrap();
    GaussianInstance {
        datasets,
        q1,
        lambda0: rng.random_range(0.2..3.0),
    }
}

/// Same chain with clients reordered by `perm` and renumbered.
pub fn permute_clients(cfg: &ChainConfig, perm: &[usize]) -> ChainConfig {
    let clients = perm
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            let mut c = cfg.clients[j].clone();
            c.client_id = i + 1;
            c
        })
        .collect();
    ChainConfig {
        clients,
        ..cfg.clone()
    }
}
