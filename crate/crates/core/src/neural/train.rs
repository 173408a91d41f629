//! Autoencoder training: reconstruction error plus a weighted MMD penalty
//! pulling the encoded batch towards `N(0, I)`.
//!
//! Each sample gets its own tape, so per-sample work runs in parallel.
//! One iteration has three phases:
//!
//! 1. encode every batch member on its own tape;
//! 2. compute MMD² of the stacked codes against a fresh standard-normal
//!    batch, together with its gradient `G` with respect to the codes;
//! 3. continue each tape through the decoder and backpropagate
//!    `recon_i / B + λ <G_i, z_i>`, whose gradient is exactly the
//!    per-sample share of the full batch loss.
//!
//! Gradients are summed in batch order, so the result does not depend on the
//! thread count.

use std::collections::BTreeMap;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::{config_digest, Checkpoint, Descriptor};
use super::gcn::{Activation, MeshContext};
use super::mmd::{median_bandwidth, mmd2, mmd2_median_with_grad, standard_normal_batch, Samples};
use super::model::{decoder_tape, encoder_tape, Architecture};
use crate::autodiff::{Graph, Params, Var};
use crate::error::{Error, Result};
use crate::forward::Dataset;
use crate::optim::{AdamConfig, AdamState};
use crate::rng::{derive_seed, stream_rng};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub hidden: usize,
    pub layers: usize,
    pub latent_dim: usize,
    pub activation: Activation,
    pub iterations: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Weight `λ` of the MMD term.
    pub mmd_weight: f64,
    pub bandwidth_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            layers: 4,
            latent_dim: 32,
            activation: Activation::Tanh,
            iterations: 3000,
            batch_size: 16,
            adam: AdamConfig::default(),
            mmd_weight: 1.0,
            bandwidth_floor: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if !(self.mmd_weight >= 0.0) || !(self.bandwidth_floor > 0.0) {
            return Err(Error::Config("mmd_weight must be >= 0 and bandwidth_floor > 0".into()));
        }
        Ok(())
    }

    pub fn architecture(&self, coord_dim: usize, field_channels: usize) -> Architecture {
        Architecture {
            activation: self.activation,
            ..Architecture::autoencoder(coord_dim, field_channels, self.hidden, self.layers, self.latent_dim)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub recon: f64,
    pub mmd: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub records: Vec<LossRecord>,
}

impl LossTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,recon,mmd,loss\n");
        for r in &self.records {
            s.push_str(&format!("{},{},{},{}\n", r.iteration, r.recon, r.mmd, r.loss));
        }
        s
    }
}

/// One training example: its mesh operators and its normalised field.
#[derive(Clone, Copy)]
pub struct BatchItem<'a> {
    pub ctx: &'a MeshContext,
    pub target: &'a Tensor,
}

#[derive(Clone, Debug)]
pub struct LossEval {
    pub recon: f64,
    pub mmd: f64,
    pub loss: f64,
    pub grads: Params,
}

struct Tape {
    graph: Graph,
    vars: BTreeMap<String, Var>,
    z: Var,
}

/// Batch loss `mean_i recon_i + λ MMD²(Z, reference)` and its gradient.
///
/// `reference` holds `B x d_z` standard-normal draws. With `λ = 0` the MMD
/// value is still reported but contributes nothing to the gradient.
pub fn autoencoder_loss_grad(
    arch: &Architecture,
    params: &Params,
    batch: &[BatchItem],
    reference: &[f64],
    mmd_weight: f64,
    bandwidth_floor: f64,
) -> Result<LossEval> {
    let b = batch.len();
    let dz = arch.latent_dim;

    let mut tapes: Vec<Tape> = batch
        .par_iter()
        .map(|item| {
            let mut graph = Graph::new();
            let vars = graph.params(params)?;
            let u = graph.constant(item.target.clone());
            let z = encoder_tape(arch, &mut graph, &vars, item.ctx, u)?;
            Ok(Tape { graph, vars, z })
        })
        .collect::<Result<_>>()?;

    let codes: Vec<f64> = tapes.iter().flat_map(|t| t.graph.value(t.z).data().to_vec()).collect();
    let (xs, ys) = (Samples::new(&codes, dz), Samples::new(reference, dz));
    let (mmd, mmd_grad) = if mmd_weight > 0.0 {
        let e = mmd2_median_with_grad(xs, ys, bandwidth_floor)?;
        (e.value, Some(e.grad))
    } else {
        (mmd2(xs, ys, median_bandwidth(xs, ys, bandwidth_floor))?, None)
    };

    let per_sample: Vec<(f64, Params)> = tapes
        .par_iter_mut()
        .zip(batch.par_iter())
        .enumerate()
        .map(|(i, (tape, item))| {
            let g = &mut tape.graph;
            let out = decoder_tape(arch, g, &tape.vars, item.ctx, tape.z)?;
            let target = g.constant(item.target.clone());
            let diff = g.sub(out, target)?;
            let sq = g.sum_square(diff);
            let count = item.target.numel() as f64;
            let recon = g.value(sq).item() / count;
            let mut root = g.scale(sq, 1.0 / (count * b as f64));
            if let Some(grad) = &mmd_grad {
                let gi = Tensor::matrix(dz, 1, grad[i * dz..(i + 1) * dz].iter().map(|v| v * mmd_weight).collect())?;
                let gi = g.constant(gi);
                let lin = g.matmul(tape.z, gi)?;
                root = g.add(root, lin)?;
            }
            Ok((recon, g.backward(root)?.into_named()))
        })
        .collect::<Result<_>>()?;

    let mut recon = 0.0;
    let mut grads: Option<Params> = None;
    for (r, gr) in per_sample {
        recon += r / b as f64;
        match &mut grads {
            None => grads = Some(gr),
            Some(acc) => {
                for (k, t) in gr {
                    acc.get_mut(&k).expect("same parameter set").add_assign(&t);
                }
            }
        }
    }
    let loss = recon + mmd_weight * mmd;
    Ok(LossEval {
        recon,
        mmd,
        loss,
        grads: grads.unwrap_or_default(),
    })
}

/// Forward-only batch loss, for finite-difference checks.
pub fn autoencoder_loss(
    arch: &Architecture,
    params: &Params,
    batch: &[BatchItem],
    reference: &[f64],
    mmd_weight: f64,
    bandwidth_floor: f64,
) -> Result<f64> {
    let dz = arch.latent_dim;
    let mut codes = Vec::with_capacity(batch.len() * dz);
    let mut recon = 0.0;
    for item in batch {
        let mut g = Graph::new();
        let vars = g.params(params)?;
        let u = g.constant(item.target.clone());
        let z = encoder_tape(arch, &mut g, &vars, item.ctx, u)?;
        codes.extend_from_slice(g.value(z).data());
        let out = decoder_tape(arch, &mut g, &vars, item.ctx, z)?;
        let diff = g.value(out).data().iter().zip(item.target.data()).map(|(a, b)| (a - b) * (a - b));
        recon += diff.sum::<f64>() / item.target.numel() as f64;
    }
    recon /= batch.len() as f64;
    let (xs, ys) = (Samples::new(&codes, dz), Samples::new(reference, dz));
    let mmd = mmd2(xs, ys, median_bandwidth(xs, ys, bandwidth_floor))?;
    Ok(recon + mmd_weight * mmd)
}

/// Indices of one minibatch: without replacement when the dataset is large
/// enough, otherwise with replacement.
pub(crate) fn draw_batch<R: Rng + ?Sized>(rng: &mut R, n: usize, b: usize) -> Vec<usize> {
    if b <= n {
        sample_indices(rng, n, b).into_vec()
    } else {
        (0..b).map(|_| rng.random_range(0..n)).collect()
    }
}

/// Normalised field tensors and mesh operators for every dataset sample.
pub(crate) fn prepare(dataset: &Dataset) -> (Vec<MeshContext>, Vec<Tensor>) {
    dataset
        .samples
        .par_iter()
        .map(|s| (MeshContext::new(&s.mesh), dataset.normalization.normalize(&s.field).to_tensor()))
        .unzip()
}

/// Adam loop shared by the autoencoder and direct-map trainers. `step`
/// returns the loss record and gradients of iteration `it`.
pub(crate) fn run_adam<F>(params: &mut Params, adam: &AdamConfig, iterations: usize, mut step: F) -> Result<LossTrace>
where
    F: FnMut(usize, &Params) -> Result<(LossRecord, Params)>,
{
    let mut state = AdamState::new(adam.clone(), params)?;
    let mut trace = LossTrace::default();
    for it in 0..iterations {
        let (record, grads) = step(it, params).map_err(|e| match e {
            Error::NonFinite(_) => Error::Divergence { iteration: it },
            other => other,
        })?;
        if !record.loss.is_finite() {
            return Err(Error::Divergence { iteration: it });
        }
        state.step(params, &grads).map_err(|e| match e {
            Error::NonFinite(_) => Error::Divergence { iteration: it },
            other => other,
        })?;
        if it % 100 == 0 || it + 1 == iterations {
            log::info!("iteration {it}: loss {:.6e} (recon {:.6e}, mmd {:.6e})", record.loss, record.recon, record.mmd);
        }
        trace.records.push(record);
    }
    Ok(trace)
}

pub fn train_autoencoder(dataset: &Dataset, config: &TrainConfig, seed: u64) -> Result<(Checkpoint, LossTrace)> {
    config.validate()?;
    let first = dataset.samples.first().ok_or_else(|| Error::invalid("empty dataset"))?;
    let arch = config.architecture(first.mesh.dim(), dataset.channels());
    let mut params = arch.init_params(&mut stream_rng(derive_seed(seed, "init"), 0))?;
    let (contexts, targets) = prepare(dataset);
    let train_seed = derive_seed(seed, "train");
    let dz = arch.latent_dim;

    let trace = run_adam(&mut params, &config.adam, config.iterations, |it, params| {
        let mut rng = stream_rng(train_seed, it as u64);
        let idx = draw_batch(&mut rng, dataset.len(), config.batch_size);
        let reference = standard_normal_batch(&mut rng, idx.len(), dz);
        let batch: Vec<BatchItem> = idx
            .iter()
            .map(|&i| BatchItem {
                ctx: &contexts[i],
                target: &targets[i],
            })
            .collect();
        let e = autoencoder_loss_grad(&arch, params, &batch, &reference, config.mmd_weight, config.bandwidth_floor)?;
        let record = LossRecord {
            iteration: it,
            recon: e.recon,
            mmd: e.mmd,
            loss: e.loss,
        };
        Ok((record, e.grads))
    })?;

    let descriptor = Descriptor {
        architecture: arch,
        normalization: dataset.normalization.clone(),
        config_digest: config_digest(&(config, seed))?,
    };
    Ok((Checkpoint::new(descriptor, params)?, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{compare_gradients, GRAD_CHECK_FLOOR};
    use crate::forward::Sample;
    use crate::geometry::{random_point_cloud_mesh, Field};
    use crate::rng::normal_vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn full_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let arch = Architecture::autoencoder(2, 1, 4, 2, 3);
        let params = arch.init_params(&mut rng).unwrap();
        let meshes: Vec<_> = (0..3).map(|_| random_point_cloud_mesh(5, 2, &mut rng).unwrap()).collect();
        let ctxs: Vec<MeshContext> = meshes.iter().map(MeshContext::new).collect();
        let targets: Vec<Tensor> = (0..3).map(|_| Tensor::matrix(5, 1, normal_vec(&mut rng, 5)).unwrap()).collect();
        let batch: Vec<BatchItem> = ctxs.iter().zip(&targets).map(|(ctx, target)| BatchItem { ctx, target }).collect();
        let reference = normal_vec(&mut rng, 3 * 3);

        let eval = autoencoder_loss_grad(&arch, &params, &batch, &reference, 1.0, 1e-3).unwrap();
        let value = autoencoder_loss(&arch, &params, &batch, &reference, 1.0, 1e-3).unwrap();
        assert!((eval.loss - value).abs() < 1e-12);

        let h = 1e-6;
        let mut numeric = Params::new();
        for (name, t) in &params {
            let mut g = Tensor::zeros(t.shape());
            for k in 0..t.numel() {
                let mut p = params.clone();
                p.get_mut(name).unwrap().data_mut()[k] += h;
                let up = autoencoder_loss(&arch, &p, &batch, &reference, 1.0, 1e-3).unwrap();
                p.get_mut(name).unwrap().data_mut()[k] -= 2.0 * h;
                let down = autoencoder_loss(&arch, &p, &batch, &reference, 1.0, 1e-3).unwrap();
                g.data_mut()[k] = (up - down) / (2.0 * h);
            }
            numeric.insert(name.clone(), g);
        }
        let report = compare_gradients(&eval.grads, &numeric, 1e-5);
        assert!(report.passed, "max rel error {} (floor {GRAD_CHECK_FLOOR})", report.max_rel_error);
    }

    fn identical_dataset(n: usize) -> Dataset {
        let mesh = random_point_cloud_mesh(12, 3, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let values: Vec<f64> = (0..12).map(|i| mesh.coord(i)[0] * 2.0 - mesh.coord(i)[1]).collect();
        let field = Field::unnamed(12, 1, values).unwrap();
        Dataset::new(vec![Sample { mesh, field }; n]).unwrap()
    }

    #[test]
    fn memorises_identical_samples() {
        let ds = identical_dataset(4);
        let config = TrainConfig {
            hidden: 16,
            layers: 1,
            latent_dim: 2,
            iterations: 500,
            batch_size: 2,
            adam: AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
            mmd_weight: 0.0,
            ..TrainConfig::default()
        };
        let (ckpt, trace) = train_autoencoder(&ds, &config, 5).unwrap();
        assert_eq!(trace.records.len(), 500);
        let last = trace.records.last().unwrap();
        assert!(last.recon < 1e-3, "final recon {}", last.recon);
        // λ = 0: the MMD column is reported but not part of the loss.
        assert!(last.mmd > 0.0);
        assert_eq!(last.loss, last.recon);
        assert_eq!(ckpt.descriptor.architecture.latent_dim, 2);
    }

    #[test]
    fn training_is_reproducible() {
        let ds = identical_dataset(3);
        let config = TrainConfig {
            hidden: 4,
            layers: 1,
            latent_dim: 2,
            iterations: 5,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let (a, ta) = train_autoencoder(&ds, &config, 9).unwrap();
        let (b, tb) = train_autoencoder(&ds, &config, 9).unwrap();
        assert_eq!(a.encode().unwrap(), b.encode().unwrap());
        assert_eq!(ta.to_csv(), tb.to_csv());
        let (c, _) = train_autoencoder(&ds, &config, 10).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn divergence_is_reported() {
        let ds = identical_dataset(2);
        let config = TrainConfig {
            hidden: 4,
            layers: 1,
            latent_dim: 2,
            iterations: 3,
            batch_size: 2,
            adam: AdamConfig {
                lr: f64::INFINITY,
                ..AdamConfig::default()
            },
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_autoencoder(&ds, &config, 1),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn rejects_tiny_batches() {
        let ds = identical_dataset(2);
        let config = TrainConfig {
            batch_size: 1,
            ..TrainConfig::default()
        };
        assert!(matches!(train_autoencoder(&ds, &config, 1), Err(Error::Config(_))));
    }
}
