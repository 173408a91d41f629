//! Geometry-conditioned autoencoder: nonlocal GCN layers, encoder and
//! decoder, the MMD latent penalty, training, and `GABW` checkpoints.

pub mod checkpoint;
pub mod gcn;
pub mod mmd;
pub mod model;
pub mod train;

pub use checkpoint::{config_digest, load_checkpoint, save_checkpoint, Checkpoint, Descriptor};
pub use gcn::{gcn_nonlocal_layer_apply, nonlocal_layer, Activation, GcnNonlocalLayer, MeshContext};
pub use mmd::{median_bandwidth, mmd2, mmd2_with_grad, mmd_null_quantile, Samples};
pub use model::{decoder_tape, encoder_tape, Architecture, Autoencoder, ModelKind};
pub use train::{train_autoencoder, LossRecord, LossTrace, TrainConfig};
