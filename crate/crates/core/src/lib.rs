//! Geometry-conditioned autoencoder priors for Bayesian inversion on meshes.
//!
//! The crate learns a generative prior over physical fields on varying
//! geometries (an autoencoder whose latent distribution is pushed towards
//! `N(0, I)`), then solves inverse problems on new geometries by sampling the
//! latent posterior and decoding the samples.
//!
//! Layout:
//!
//! - [`tensor`], [`autodiff`], [`optim`]: dense tensors, reverse-mode AD, Adam.
//! - [`geometry`]: meshes, fields, observation and graph operators.
//! - [`forward`]: synthetic heat and graph-Helmholtz datasets, `GABD` files.
//! - [`neural`]: nonlocal GCN encoder/decoder, MMD, training, `GABW` files.
//! - [`inversion`]: truncation ABC, joint noise ABC, pCN, posterior summaries.
//! - [`baselines`]: direct-map regression and graph Gaussian processes.
//! - [`metrics`], [`experiment`]: evaluation protocol and experiment runner.

pub mod autodiff;
mod binio;
pub mod baselines;
pub mod error;
pub mod experiment;
pub mod forward;
pub mod geometry;
pub mod inversion;
pub mod metrics;
pub mod neural;
pub mod optim;
pub mod rng;
pub mod sparse;
pub mod tensor;

pub use autodiff::{Graph, Params, Var};
pub use error::{Error, Result};
pub use geometry::{Field, Mesh, ObservationOperator};
pub use tensor::Tensor;
