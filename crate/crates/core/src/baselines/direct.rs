//! Supervised direct map from sparse observations and geometry to the full
//! field.
//!
//! Node inputs are `[coords ‖ masked y ‖ mask]`: the (normalised) observed
//! value at observed nodes and zero elsewhere, plus a 0/1 indicator. The
//! observation process is sampled afresh for every training example, so the
//! model is tied to the protocol it was trained under.
//!
//! Training is either fully supervised (every channel at every node) or
//! supervised only by the noisy observations themselves, in which case the
//! unobserved channels receive no training signal at all.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Params};
use crate::error::{Error, Result};
use crate::forward::{Dataset, Normalization};
use crate::geometry::{default_channel_names, Field, Mesh, ObservationOperator};
use crate::neural::checkpoint::{config_digest, Checkpoint, Descriptor};
use crate::neural::model::{Architecture, ModelKind};
use crate::neural::train::{draw_batch, prepare, run_adam, LossRecord, LossTrace};
use crate::neural::{Activation, MeshContext};
use crate::optim::AdamConfig;
use crate::rng::{derive_seed, stream_rng};
use crate::tensor::Tensor;

/// How many nodes are observed for each training example.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskRule {
    Count(usize),
    Fraction(f64),
}

/// Which entries of the output the training loss sees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Supervision {
    /// Every channel of the reference field at every node.
    #[default]
    Full,
    /// The noisy observed values at the observed nodes of the observed channel.
    Observed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationProtocol {
    pub mask: MaskRule,
    pub channel: usize,
    pub sigma: f64,
}

impl ObservationProtocol {
    pub fn observed_count(&self, n_nodes: usize) -> usize {
        match self.mask {
            MaskRule::Count(c) => c.min(n_nodes),
            MaskRule::Fraction(f) => ((f.clamp(0.0, 1.0) * n_nodes as f64).round() as usize).min(n_nodes),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DirectMapConfig {
    pub hidden: usize,
    pub layers: usize,
    pub activation: Activation,
    pub iterations: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub protocol: ObservationProtocol,
    pub supervision: Supervision,
}

impl Default for DirectMapConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            layers: 4,
            activation: Activation::Tanh,
            iterations: 3000,
            batch_size: 16,
            adam: AdamConfig::default(),
            protocol: ObservationProtocol {
                mask: MaskRule::Count(10),
                channel: 0,
                sigma: 1e-2,
            },
            supervision: Supervision::Full,
        }
    }
}

/// Node inputs for one observation vector `y` given in physical units.
fn node_inputs(
    coords: &Tensor,
    norm: &Normalization,
    channel: usize,
    nodes: &[usize],
    y: &[f64],
) -> Result<Tensor> {
    let (n, d) = (coords.rows(), coords.cols());
    let mut observed = vec![None; n];
    for (&i, &v) in nodes.iter().zip(y) {
        *observed.get_mut(i).ok_or(Error::IndexOutOfRange { index: i, len: n })? = Some(v);
    }
    let (m, s) = (norm.mean[channel], norm.std[channel]);
    let mut data = Vec::with_capacity(n * (d + 2));
    for (i, obs) in observed.iter().enumerate() {
        data.extend_from_slice(coords.row_slice(i));
        match obs {
            Some(v) => data.extend_from_slice(&[(v - m) / s, 1.0]),
            None => data.extend_from_slice(&[0.0, 0.0]),
        }
    }
    Tensor::matrix(n, d + 2, data)
}

/// Target and 0/1 weight for observation-only supervision, in normalised
/// units. Entries with weight zero are left at zero.
fn observed_target(like: &Tensor, norm: &Normalization, channel: usize, nodes: &[usize], y: &[f64]) -> (Tensor, Tensor) {
    let c = like.cols();
    let mut t = Tensor::zeros(like.shape());
    let mut w = Tensor::zeros(like.shape());
    for (&node, &v) in nodes.iter().zip(y) {
        t.data_mut()[node * c + channel] = (v - norm.mean[channel]) / norm.std[channel];
        w.data_mut()[node * c + channel] = 1.0;
    }
    (t, w)
}

pub fn train_direct_map(dataset: &Dataset, config: &DirectMapConfig, seed: u64) -> Result<(Checkpoint, LossTrace)> {
    let first = dataset.samples.first().ok_or_else(|| Error::invalid("empty dataset"))?;
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let protocol = &config.protocol;
    if protocol.channel >= dataset.channels() {
        return Err(Error::Config(format!("observed channel {} out of range", protocol.channel)));
    }
    let arch = Architecture {
        activation: config.activation,
        ..Architecture::direct_map(first.mesh.dim(), dataset.channels(), config.hidden, config.layers)
    };
    let mut params = arch.init_params(&mut stream_rng(derive_seed(seed, "init"), 0))?;
    let (contexts, targets) = prepare(dataset);
    let train_seed = derive_seed(seed, "train");
    let stack = arch.direct();

    let trace = run_adam(&mut params, &config.adam, config.iterations, |it, params| {
        let mut rng = stream_rng(train_seed, it as u64);
        let idx = draw_batch(&mut rng, dataset.len(), config.batch_size);
        // Observation draws happen serially so the stream does not depend
        // on scheduling.
        let examples: Vec<(Tensor, Tensor, Option<Tensor>)> = idx
            .iter()
            .map(|&i| {
                let s = &dataset.samples[i];
                let n = s.mesh.n_nodes();
                let nodes = sample_indices(&mut rng, n, protocol.observed_count(n)).into_vec();
                let y: Vec<f64> = nodes
                    .iter()
                    .map(|&v| s.field.get(v, protocol.channel) + protocol.sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let x = node_inputs(&contexts[i].coords, &dataset.normalization, protocol.channel, &nodes, &y)?;
                Ok(match config.supervision {
                    Supervision::Full => (x, targets[i].clone(), None),
                    Supervision::Observed => {
                        let (t, w) = observed_target(&targets[i], &dataset.normalization, protocol.channel, &nodes, &y);
                        (x, t, Some(w))
                    }
                })
            })
            .collect::<Result<_>>()?;
        let b = idx.len() as f64;
        let per_sample: Vec<(f64, Params)> = idx
            .par_iter()
            .zip(examples.par_iter())
            .map(|(&i, (x, target, weight))| {
                let mut g = Graph::new();
                let vars = g.params(params)?;
                let xv = g.constant(x.clone());
                let out = stack.tape(&mut g, &vars, &contexts[i], xv)?;
                let t = g.constant(target.clone());
                let mut diff = g.sub(out, t)?;
                let count = match weight {
                    Some(w) => {
                        let wv = g.constant(w.clone());
                        diff = g.mul(diff, wv)?;
                        w.data().iter().sum::<f64>().max(1.0)
                    }
                    None => target.numel() as f64,
                };
                let sq = g.sum_square(diff);
                let mse = g.value(sq).item() / count;
                let root = g.scale(sq, 1.0 / (count * b));
                Ok((mse, g.backward(root)?.into_named()))
            })
            .collect::<Result<_>>()?;
        let mut loss = 0.0;
        let mut grads: Option<Params> = None;
        for (l, gr) in per_sample {
            loss += l / b;
            match &mut grads {
                None => grads = Some(gr),
                Some(acc) => {
                    for (k, t) in gr {
                        acc.get_mut(&k).expect("same parameter set").add_assign(&t);
                    }
                }
            }
        }
        let record = LossRecord {
            iteration: it,
            recon: loss,
            mmd: 0.0,
            loss,
        };
        Ok((record, grads.unwrap_or_default()))
    })?;

    let descriptor = Descriptor {
        architecture: arch,
        normalization: dataset.normalization.clone(),
        config_digest: config_digest(&(config, seed))?,
    };
    Ok((Checkpoint::new(descriptor, params)?, trace))
}

/// Field prediction in physical units from observations `y` of `observation`.
/// A protocol, if given, is compared against the observation and any
/// mismatch is logged.
pub fn predict_direct_map(
    ckpt: &Checkpoint,
    mesh: &Mesh,
    observation: &ObservationOperator,
    y: &[f64],
    protocol: Option<&ObservationProtocol>,
) -> Result<Field> {
    let arch = ckpt.architecture();
    if arch.kind != ModelKind::DirectMap {
        return Err(Error::Consistency("checkpoint does not hold a direct map".into()));
    }
    if y.len() != observation.len() {
        return Err(Error::shape("direct-map", "observation vector length"));
    }
    if observation.channel() >= arch.field_channels {
        return Err(Error::IndexOutOfRange {
            index: observation.channel(),
            len: arch.field_channels,
        });
    }
    if let Some(p) = protocol {
        if p.channel != observation.channel() || p.observed_count(mesh.n_nodes()) != observation.len() {
            log::warn!(
                "observation ({} nodes of channel {}) differs from the training protocol {:?}",
                observation.len(),
                observation.channel(),
                p
            );
        }
    }
    let ctx = MeshContext::new(mesh);
    let norm = &ckpt.descriptor.normalization;
    let x = node_inputs(&ctx.coords, norm, observation.channel(), observation.nodes(), y)?;
    let out = arch.direct().plain(&ckpt.params, &ctx.adjacency, &x, 1)?;
    if !out.is_finite() {
        return Err(Error::NonFinite("direct-map output".into()));
    }
    let field = Field::new(mesh.n_nodes(), default_channel_names(arch.field_channels), out.into_data())?;
    Ok(norm.denormalize(&field))
}
