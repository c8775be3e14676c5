//! Shared fixtures for the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tsgan_core::trainer::{Precision, TrainConfig};
use tsgan_core::Tensor;

pub fn gaussian_rows(n: usize, len: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..len).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect()
}

pub fn gaussian_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let n = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

/// Training config at the given channel width, trained only through stage 0.
pub fn bench_config(channels: usize, batch: usize) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.net.channels = channels;
    cfg.batch_size = batch;
    cfg.final_stage = Some(0);
    cfg.precision = Precision::F64;
    cfg
}
