//! Truncation ABC in latent space.
//!
//! `N_s` latent draws are split into batches of `batch` samples. Batch `k`
//! draws its latents and observation noise from stream `(seed, k)` and, for
//! joint noise inference, its noise levels from a second stream keyed by
//! `k`, so results do not depend on scheduling. Each batch keeps its own
//! `N_a` best candidates and a final merge keeps the global `N_a` best,
//! ordered by residual with ties broken by sample index.

use rayon::prelude::*;

use super::ensemble::{PosteriorEnsemble, SamplerMeta};
use super::problem::{InverseProblem, NoiseMode, NoisePrior};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, normal_vec, stream_rng};

#[derive(Clone, Debug)]
struct Candidate {
    index: usize,
    residual: f64,
    z: Vec<f64>,
    sigma: Option<f64>,
}

fn by_residual(a: &Candidate, b: &Candidate) -> std::cmp::Ordering {
    a.residual.total_cmp(&b.residual).then(a.index.cmp(&b.index))
}

/// Residuals of every proposal of batch `k`, in sample order.
fn run_batch(
    problem: &InverseProblem,
    noise_prior: Option<&NoisePrior>,
    n_s: usize,
    batch: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<Candidate>> {
    let start = k * batch;
    let count = batch.min(n_s - start);
    let dz = problem.decoder.latent_dim();
    let mut rng = stream_rng(seed, k as u64);
    let zs: Vec<Vec<f64>> = (0..count).map(|_| normal_vec(&mut rng, dz)).collect();
    let sigmas: Option<Vec<f64>> = noise_prior.map(|p| {
        let mut srng = stream_rng(derive_seed(seed, "noise-prior"), k as u64);
        (0..count).map(|_| p.draw(&mut srng)).collect()
    });
    let refs: Vec<&[f64]> = zs.iter().map(|z| z.as_slice()).collect();
    let fields = problem.decoder.decode_many(&refs)?;
    zs.into_iter()
        .zip(fields)
        .enumerate()
        .map(|(i, (z, field))| {
            let sigma = sigmas.as_ref().map(|s| s[i]);
            let residual = problem.simulated_residual(&field, sigma, &mut rng)?;
            Ok(Candidate {
                index: start + i,
                residual,
                z,
                sigma,
            })
        })
        .collect()
}

fn check_sizes(n_s: usize, n_a: usize, batch: usize) -> Result<()> {
    if n_a == 0 || n_a > n_s || batch == 0 {
        return Err(Error::invalid(format!("need 1 <= N_a <= N_s and batch >= 1 (N_s={n_s}, N_a={n_a}, batch={batch})")));
    }
    Ok(())
}

fn run(
    problem: &InverseProblem,
    noise_prior: Option<&NoisePrior>,
    n_s: usize,
    n_a: usize,
    batch: usize,
    seed: u64,
) -> Result<PosteriorEnsemble> {
    check_sizes(n_s, n_a, batch)?;
    let n_batches = n_s.div_ceil(batch);
    let kept: Vec<Vec<Candidate>> = (0..n_batches)
        .into_par_iter()
        .map(|k| {
            let mut c = run_batch(problem, noise_prior, n_s, batch, k, seed)?;
            if c.len() > n_a {
                c.select_nth_unstable_by(n_a - 1, by_residual);
                c.truncate(n_a);
            }
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let mut all: Vec<Candidate> = kept.into_iter().flatten().collect();
    all.sort_by(by_residual);
    all.truncate(n_a);

    let latents: Vec<Vec<f64>> = all.iter().map(|c| c.z.clone()).collect();
    let fields = latents
        .par_chunks(batch)
        .map(|chunk| {
            let refs: Vec<&[f64]> = chunk.iter().map(|z| z.as_slice()).collect();
            problem.decoder.decode_many(&refs)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    Ok(PosteriorEnsemble {
        residuals: all.iter().map(|c| c.residual).collect(),
        sigmas: noise_prior.map(|_| all.iter().map(|c| c.sigma.unwrap()).collect()),
        latents,
        fields,
        meta: SamplerMeta {
            method: if noise_prior.is_some() { "abc-joint-noise" } else { "abc" }.into(),
            proposals: n_s,
            seed,
            acceptance_rate: None,
        },
    })
}

/// Keeps the `n_a` of `n_s` prior draws whose simulated observations are
/// closest to the data.
pub fn abc_sample(problem: &InverseProblem, n_s: usize, n_a: usize, batch: usize, seed: u64) -> Result<PosteriorEnsemble> {
    run(problem, None, n_s, n_a, batch, seed)
}

/// As [`abc_sample`], with the noise level drawn jointly from `noise_prior`
/// and carried through to the ensemble.
pub fn abc_sample_joint_noise(
    problem: &InverseProblem,
    noise_prior: &NoisePrior,
    n_s: usize,
    n_a: usize,
    batch: usize,
    seed: u64,
) -> Result<PosteriorEnsemble> {
    if problem.noise_mode != NoiseMode::InferSigma {
        return Err(Error::invalid("joint noise ABC needs an infer-sigma problem"));
    }
    run(problem, Some(noise_prior), n_s, n_a, batch, seed)
}

/// Every proposal's residual, in sample order, using the same streams as
/// the samplers. Intended for verifying the selection.
pub fn abc_all_residuals(
    problem: &InverseProblem,
    noise_prior: Option<&NoisePrior>,
    n_s: usize,
    batch: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_sizes(n_s, n_s, batch)?;
    let per_batch = (0..n_s.div_ceil(batch))
        .into_par_iter()
        .map(|k| run_batch(problem, noise_prior, n_s, batch, k, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(per_batch.into_iter().flatten().map(|c| c.residual).collect())
}
