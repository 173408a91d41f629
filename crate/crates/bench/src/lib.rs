//! Benchmark fixtures shared by the bench targets.

use gabi_core::experiment::ExperimentConfig;
use gabi_core::forward::{sample_heat_dataset, Dataset};
use gabi_core::neural::{Architecture, Autoencoder};
use gabi_core::rng::stream_rng;

/// A heat training set on `n x n` grids.
pub fn heat_dataset(samples: usize, n: usize) -> Dataset {
    sample_heat_dataset(samples, (n, n), 1).expect("heat data")
}

/// An untrained desk-scale autoencoder; weights do not affect timings.
pub fn desk_autoencoder(ds: &Dataset) -> Autoencoder {
    let cfg = ExperimentConfig::default().model;
    let arch: Architecture = cfg.architecture(2, 1);
    let params = arch.init_params(&mut stream_rng(5, 0)).expect("init");
    Autoencoder::new(arch, params, ds.normalization.clone()).expect("model")
}
