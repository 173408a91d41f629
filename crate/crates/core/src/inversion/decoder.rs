//! Latent-to-field maps used by the samplers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{default_channel_names, Field, Mesh};
use crate::neural::{Autoencoder, MeshContext};
use crate::tensor::Tensor;

use super::problem::Observation;

/// A deterministic map from latent vectors to fields on one fixed mesh.
pub trait Decoder: Sync {
    fn latent_dim(&self) -> usize;

    /// Decodes several latent vectors; output order matches input order.
    fn decode_many(&self, zs: &[&[f64]]) -> Result<Vec<Field>>;

    fn decode(&self, z: &[f64]) -> Result<Field> {
        Ok(self.decode_many(&[z])?.pop().expect("one field per latent"))
    }
}

/// A trained autoencoder's decoder bound to one mesh.
pub struct MeshDecoder<'a> {
    model: &'a Autoencoder,
    ctx: MeshContext,
}

impl<'a> MeshDecoder<'a> {
    pub fn new(model: &'a Autoencoder, mesh: &Mesh) -> Self {
        Self {
            model,
            ctx: MeshContext::new(mesh),
        }
    }
}

impl Decoder for MeshDecoder<'_> {
    fn latent_dim(&self) -> usize {
        self.model.latent_dim()
    }

    fn decode_many(&self, zs: &[&[f64]]) -> Result<Vec<Field>> {
        self.model.decode_many(&self.ctx, zs)
    }
}

/// Affine decoder `u = A z + b`, flattened node-major. Its posterior under a
/// Gaussian likelihood is available in closed form, which makes it the
/// reference model for testing samplers.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearDecoder {
    a: Tensor,
    b: Vec<f64>,
    n_nodes: usize,
    channels: usize,
}

impl LinearDecoder {
    /// `a` is `(n_nodes * channels) x d_z`; `b` has `n_nodes * channels` entries.
    pub fn new(a: Tensor, b: Vec<f64>, n_nodes: usize, channels: usize) -> Result<Self> {
        let (r, _) = a.require_rank2("linear-decoder")?;
        if r != n_nodes * channels || b.len() != r {
            return Err(Error::shape(
                "linear-decoder",
                format!("A {:?}, b of length {} for {n_nodes} nodes x {channels} channels", a.shape(), b.len()),
            ));
        }
        Ok(Self {
            a,
            b,
            n_nodes,
            channels,
        })
    }

    fn row(&self, node: usize, channel: usize) -> usize {
        node * self.channels + channel
    }

    /// Posterior mean and covariance of `z` given the observations, for
    /// the prior `z ~ N(0, I)`:
    /// precision `I + Σ A_oᵀ A_o / σ²`, mean `P⁻¹ Σ A_oᵀ (y - b_o) / σ²`.
    pub fn gaussian_posterior(&self, observations: &[Observation]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let d = self.a.cols();
        let mut precision = DMatrix::<f64>::identity(d, d);
        let mut rhs = DVector::<f64>::zeros(d);
        for obs in observations {
            let s2 = obs.operator.sigma().powi(2);
            if !(s2 > 0.0) {
                return Err(Error::invalid("closed-form posterior needs sigma > 0"));
            }
            for (&node, &y) in obs.operator.nodes().iter().zip(&obs.y) {
                let r = self.row(node, obs.operator.channel());
                let arow = self.a.row_slice(r);
                for i in 0..d {
                    rhs[i] += arow[i] * (y - self.b[r]) / s2;
                    for j in 0..d {
                        precision[(i, j)] += arow[i] * arow[j] / s2;
                    }
                }
            }
        }
        let chol = precision.cholesky().ok_or(Error::NotPositiveDefinite { jitter: 0.0 })?;
        let mean = chol.solve(&rhs);
        let cov = chol.inverse();
        Ok((
            mean.iter().copied().collect(),
            (0..d).map(|i| (0..d).map(|j| cov[(i, j)]).collect()).collect(),
        ))
    }
}

impl Decoder for LinearDecoder {
    fn latent_dim(&self) -> usize {
        self.a.cols()
    }

    fn decode_many(&self, zs: &[&[f64]]) -> Result<Vec<Field>> {
        let d = self.a.cols();
        zs.iter()
            .map(|z| {
                if z.len() != d {
                    return Err(Error::shape("decode", format!("latent of length {}, expected {d}", z.len())));
                }
                let values = (0..self.b.len())
                    .map(|r| self.b[r] + self.a.row_slice(r).iter().zip(*z).map(|(a, x)| a * x).sum::<f64>())
                    .collect();
                Field::new(self.n_nodes, default_channel_names(self.channels), values)
            })
            .collect()
    }
}
