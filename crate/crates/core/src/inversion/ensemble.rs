//! Posterior ensembles, their summaries, and on-disk form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::dataset::{decode_dataset, encode_dataset};
use crate::forward::{Dataset, Normalization, Sample};
use crate::geometry::{Field, Mesh};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerMeta {
    pub method: String,
    /// Prior draws for ABC, chain length for pCN.
    pub proposals: usize,
    pub seed: u64,
    pub acceptance_rate: Option<f64>,
}

/// Accepted latent samples and their decoded fields, sorted by residual.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorEnsemble {
    pub latents: Vec<Vec<f64>>,
    pub fields: Vec<Field>,
    pub sigmas: Option<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub meta: SamplerMeta,
}

impl PosteriorEnsemble {
    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorStats {
    pub mean: Field,
    /// Unbiased sample standard deviation.
    pub std: Field,
    pub quantiles: Vec<(f64, Field)>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean and unbiased standard deviation of a set of values.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let v = values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

/// Per-node, per-channel summaries of the decoded ensemble.
pub fn posterior_stats(ensemble: &PosteriorEnsemble, quantiles: &[f64]) -> Result<PosteriorStats> {
    field_stats(&ensemble.fields, quantiles)
}

pub fn field_stats(fields: &[Field], quantiles: &[f64]) -> Result<PosteriorStats> {
    let first = fields.first().ok_or_else(|| Error::invalid("empty ensemble"))?;
    if fields.len() < 2 {
        return Err(Error::invalid("posterior summaries need at least two samples"));
    }
    let (n, c) = (first.n_nodes(), first.n_channels());
    if fields.iter().any(|f| f.n_nodes() != n || f.n_channels() != c) {
        return Err(Error::shape("posterior-stats", "fields of different shapes"));
    }
    let entries = n * c;
    let mut mean = vec![0.0; entries];
    let mut std = vec![0.0; entries];
    let mut qs = vec![vec![0.0; entries]; quantiles.len()];
    let mut column = vec![0.0; fields.len()];
    for e in 0..entries {
        for (slot, f) in column.iter_mut().zip(fields) {
            *slot = f.values()[e];
        }
        let (m, s) = mean_std(&column);
        mean[e] = m;
        std[e] = s;
        if !quantiles.is_empty() {
            column.sort_by(f64::total_cmp);
            for (q, out) in quantiles.iter().zip(qs.iter_mut()) {
                out[e] = quantile_sorted(&column, *q);
            }
        }
    }
    let names = first.channels().to_vec();
    Ok(PosteriorStats {
        mean: Field::new(n, names.clone(), mean)?,
        std: Field::new(n, names.clone(), std)?,
        quantiles: quantiles
            .iter()
            .zip(qs)
            .map(|(&q, v)| Ok((q, Field::new(n, names.clone(), v)?)))
            .collect::<Result<_>>()?,
    })
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    latents: Vec<Vec<f64>>,
    sigmas: Option<Vec<f64>>,
    residuals: Vec<f64>,
    meta: SamplerMeta,
}

/// Writes the fields as a `GABD` container and everything else as JSON.
pub fn write_ensemble(ensemble: &PosteriorEnsemble, mesh: &Mesh, fields_path: &Path, sidecar_path: &Path) -> Result<()> {
    let channels = ensemble.fields.first().map_or(1, Field::n_channels);
    let ds = Dataset {
        samples: ensemble
            .fields
            .iter()
            .map(|f| Sample {
                mesh: mesh.clone(),
                field: f.clone(),
            })
            .collect(),
        normalization: Normalization::identity(channels),
    };
    std::fs::write(fields_path, encode_dataset(&ds)?)?;
    let sidecar = Sidecar {
        latents: ensemble.latents.clone(),
        sigmas: ensemble.sigmas.clone(),
        residuals: ensemble.residuals.clone(),
        meta: ensemble.meta.clone(),
    };
    std::fs::write(sidecar_path, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

pub fn read_ensemble(fields_path: &Path, sidecar_path: &Path) -> Result<(Mesh, PosteriorEnsemble)> {
    let ds = decode_dataset(&std::fs::read(fields_path)?)?;
    let sidecar: Sidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path)?)?;
    if sidecar.latents.len() != ds.len() || sidecar.residuals.len() != ds.len() {
        return Err(Error::Consistency("sidecar and field container disagree on ensemble size".into()));
    }
    let mesh = ds
        .samples
        .first()
        .map(|s| s.mesh.clone())
        .ok_or_else(|| Error::Consistency("empty ensemble".into()))?;
    Ok((
        mesh,
        PosteriorEnsemble {
            latents: sidecar.latents,
            fields: ds.samples.into_iter().map(|s| s.field).collect(),
            sigmas: sidecar.sigmas,
            residuals: sidecar.residuals,
            meta: sidecar.meta,
        },
    ))
}
