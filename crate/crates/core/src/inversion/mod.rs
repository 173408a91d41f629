//! Posterior sampling in latent space and pushforward to fields.
//!
//! Samplers draw latent vectors under the `N(0, I)` prior, push them through
//! a [`Decoder`] bound to the target mesh, and compare simulated
//! observations with the data.

pub mod abc;
pub mod decoder;
pub mod ensemble;
pub mod pcn;
pub mod problem;

pub use abc::{abc_all_residuals, abc_sample, abc_sample_joint_noise};
pub use decoder::{Decoder, LinearDecoder, MeshDecoder};
pub use ensemble::{
    field_stats, mean_std, posterior_stats, quantile_sorted, read_ensemble, write_ensemble, PosteriorEnsemble,
    PosteriorStats, SamplerMeta,
};
pub use pcn::{pcn_sample, PcnConfig};
pub use problem::{InverseProblem, NoiseMode, NoisePrior, Observation};
