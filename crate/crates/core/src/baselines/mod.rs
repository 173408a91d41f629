//! Comparison methods: a supervised direct map and graph Gaussian processes.

pub mod direct;
pub mod gp;

pub use direct::{predict_direct_map, train_direct_map, DirectMapConfig, MaskRule, ObservationProtocol, Supervision};
pub use gp::{gp_fit_mml, gp_kernel_matrix, gp_posterior, log_space, GpGrid, GraphGpModel, KernelKind};
