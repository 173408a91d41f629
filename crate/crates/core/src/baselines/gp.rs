//! Gaussian-process regression with covariances built from the spectrum of
//! the graph Laplacian.
//!
//! `K = s V f(Λ) Vᵀ` where `f(λ) = (2ν/ℓ² + λ)^(-ν)` for Matérn ν ∈ {1/2, 3/2}
//! and `f(λ) = exp(-ℓ²λ/2)` for the RBF (diffusion) kernel. The scale `s`
//! is chosen so that the average prior variance over nodes is `σ_f²`.
//! Since `tr(V f Vᵀ) = Σ f_k`, that is `s = σ_f² N / Σ f_k`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{default_channel_names, Field, LaplacianSpectrum, ObservationOperator};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    #[serde(rename = "matern-1/2")]
    Matern12,
    #[serde(rename = "matern-3/2")]
    Matern32,
    #[serde(rename = "rbf")]
    Rbf,
}

impl KernelKind {
    pub fn spectral(self, lengthscale: f64, lambda: f64) -> f64 {
        let l2 = lengthscale * lengthscale;
        match self {
            KernelKind::Matern12 => (1.0 / l2 + lambda).powf(-0.5),
            KernelKind::Matern32 => (3.0 / l2 + lambda).powf(-1.5),
            KernelKind::Rbf => (-l2 * lambda / 2.0).exp(),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            KernelKind::Matern12 => "gp-m12",
            KernelKind::Matern32 => "gp-m32",
            KernelKind::Rbf => "gp-rbf",
        }
    }
}

/// Hyperparameters of a graph GP; the spectrum is supplied separately.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphGpModel {
    pub kind: KernelKind,
    pub sigma_f: f64,
    pub lengthscale: f64,
    pub noise: f64,
}

/// Spectral weights `s f(λ_k)` including the variance normalisation.
fn weights(model: &GraphGpModel, spectrum: &LaplacianSpectrum) -> Vec<f64> {
    let f: Vec<f64> = spectrum.values.iter().map(|&l| model.kind.spectral(model.lengthscale, l.max(0.0))).collect();
    let total: f64 = f.iter().sum();
    let s = model.sigma_f * model.sigma_f * spectrum.n as f64 / total;
    f.into_iter().map(|v| v * s).collect()
}

/// Covariance between node sets `a` and `b`.
fn cross(spectrum: &LaplacianSpectrum, w: &[f64], a: &[usize], b: &[usize]) -> DMatrix<f64> {
    let n = spectrum.n;
    DMatrix::from_fn(a.len(), b.len(), |i, j| {
        let (ra, rb) = (&spectrum.vectors[a[i] * n..(a[i] + 1) * n], &spectrum.vectors[b[j] * n..(b[j] + 1) * n]);
        ra.iter().zip(rb).zip(w).map(|((x, y), wk)| x * y * wk).sum()
    })
}

/// Full `N x N` covariance matrix.
pub fn gp_kernel_matrix(model: &GraphGpModel, spectrum: &LaplacianSpectrum) -> Result<Tensor> {
    check_model(model)?;
    let all: Vec<usize> = (0..spectrum.n).collect();
    let k = cross(spectrum, &weights(model, spectrum), &all, &all);
    let n = spectrum.n;
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            // Symmetrise away rounding differences.
            data[i * n + j] = 0.5 * (k[(i, j)] + k[(j, i)]);
        }
    }
    Tensor::matrix(n, n, data)
}

fn check_model(model: &GraphGpModel) -> Result<()> {
    if !(model.sigma_f > 0.0 && model.lengthscale > 0.0 && model.noise >= 0.0) {
        return Err(Error::invalid(format!("invalid GP hyperparameters {model:?}")));
    }
    Ok(())
}

/// Cholesky with diagonal jitter escalating from 0 to 1e-6.
fn jittered_cholesky(mut m: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let scale = (0..m.nrows()).map(|i| m[(i, i)].abs()).fold(0.0f64, f64::max).max(1.0);
    let mut added = 0.0;
    for jitter in [0.0, 1e-12, 1e-10, 1e-8, 1e-6] {
        let step = jitter * scale - added;
        for i in 0..m.nrows() {
            m[(i, i)] += step;
        }
        added += step;
        if let Some(c) = Cholesky::new(m.clone()) {
            return Ok(c);
        }
    }
    Err(Error::NotPositiveDefinite { jitter: 1e-6 })
}

fn log_marginal(k_oo: &DMatrix<f64>, noise: f64, y: &DVector<f64>) -> Result<f64> {
    let m = y.len();
    let mut a = k_oo.clone();
    for i in 0..m {
        a[(i, i)] += noise * noise;
    }
    let chol = jittered_cholesky(a)?;
    let alpha = chol.solve(y);
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(-0.5 * y.dot(&alpha) - 0.5 * logdet - 0.5 * m as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Candidate hyperparameters for maximum-marginal-likelihood fitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpGrid {
    pub sigma_f: Vec<f64>,
    pub lengthscale: Vec<f64>,
    pub noise: Vec<f64>,
}

pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

impl GpGrid {
    /// 20 x 20 log grid over `σ_f, ℓ ∈ [1e-2, 10]` with a fixed noise level.
    pub fn standard(noise: f64) -> Self {
        Self {
            sigma_f: log_space(1e-2, 10.0, 20),
            lengthscale: log_space(1e-2, 10.0, 20),
            noise: vec![noise],
        }
    }
}

/// Grid point with the largest log marginal likelihood of `y` at the
/// observed nodes. Ties go to the smallest lengthscale, then the smallest
/// amplitude, then the smallest noise.
pub fn gp_fit_mml(
    spectrum: &LaplacianSpectrum,
    observation: &ObservationOperator,
    y: &[f64],
    kind: KernelKind,
    grid: &GpGrid,
) -> Result<GraphGpModel> {
    if grid.sigma_f.is_empty() || grid.lengthscale.is_empty() || grid.noise.is_empty() {
        return Err(Error::invalid("empty hyperparameter grid"));
    }
    if y.len() != observation.len() {
        return Err(Error::shape("gp-fit", "observation vector length"));
    }
    let yv = DVector::from_column_slice(y);
    let mut ls = grid.lengthscale.clone();
    ls.sort_by(f64::total_cmp);
    let mut sf = grid.sigma_f.clone();
    sf.sort_by(f64::total_cmp);
    let mut noise = grid.noise.clone();
    noise.sort_by(f64::total_cmp);

    let per_l: Vec<(f64, GraphGpModel)> = ls
        .par_iter()
        .map(|&l| {
            let unit = GraphGpModel {
                kind,
                sigma_f: 1.0,
                lengthscale: l,
                noise: 0.0,
            };
            let base = cross(spectrum, &weights(&unit, spectrum), observation.nodes(), observation.nodes());
            let mut best: Option<(f64, GraphGpModel)> = None;
            for &s in &sf {
                let k = &base * (s * s);
                for &nz in &noise {
                    let lml = log_marginal(&k, nz, &yv)?;
                    if best.is_none_or(|(b, _)| lml > b) {
                        best = Some((
                            lml,
                            GraphGpModel {
                                kind,
                                sigma_f: s,
                                lengthscale: l,
                                noise: nz,
                            },
                        ));
                    }
                }
            }
            Ok(best.expect("nonempty grid"))
        })
        .collect::<Result<_>>()?;
    let mut best = per_l[0];
    for cand in &per_l[1..] {
        if cand.0 > best.0 {
            best = *cand;
        }
    }
    Ok(best.1)
}

/// Posterior mean and standard deviation at every node.
pub fn gp_posterior(
    model: &GraphGpModel,
    spectrum: &LaplacianSpectrum,
    observation: &ObservationOperator,
    y: &[f64],
) -> Result<(Field, Field)> {
    check_model(model)?;
    if y.len() != observation.len() {
        return Err(Error::shape("gp-posterior", "observation vector length"));
    }
    let n = spectrum.n;
    let w = weights(model, spectrum);
    let prior_var: Vec<f64> = (0..n)
        .map(|i| {
            let r = &spectrum.vectors[i * n..(i + 1) * n];
            r.iter().zip(&w).map(|(v, wk)| v * v * wk).sum()
        })
        .collect();
    let names = default_channel_names(1);
    if observation.is_empty() {
        let std = prior_var.iter().map(|v| v.max(0.0).sqrt()).collect();
        return Ok((Field::new(n, names.clone(), vec![0.0; n])?, Field::new(n, names, std)?));
    }
    let obs = observation.nodes();
    let mut k_oo = cross(spectrum, &w, obs, obs);
    for i in 0..obs.len() {
        k_oo[(i, i)] += model.noise * model.noise;
    }
    let chol = jittered_cholesky(k_oo)?;
    let all: Vec<usize> = (0..n).collect();
    let k_so = cross(spectrum, &w, &all, obs);
    let alpha = chol.solve(&DVector::from_column_slice(y));
    let mean = &k_so * alpha;
    // var_i = K_ii - k_iᵀ (K_oo + σ²I)⁻¹ k_i.
    let v = chol.l().solve_lower_triangular(&k_so.transpose()).expect("triangular factor is invertible");
    let std = (0..n)
        .map(|i| (prior_var[i] - v.column(i).norm_squared()).max(0.0).sqrt())
        .collect();
    Ok((
        Field::new(n, names.clone(), mean.iter().copied().collect())?,
        Field::new(n, names, std)?,
    ))
}
