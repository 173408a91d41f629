//! Preconditioned Crank-Nicolson MCMC on the latent space.
//!
//! The proposal `z' = sqrt(1 - β²) z + β w` leaves the `N(0, I)` prior
//! invariant, so the acceptance ratio only involves the likelihood:
//! accept with probability `min(1, exp(Φ(z) - Φ(z')))`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ensemble::{PosteriorEnsemble, SamplerMeta};
use super::problem::{InverseProblem, NoiseMode};
use crate::error::{Error, Result};
use crate::rng::{normal_vec, stream_rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PcnConfig {
    pub steps: usize,
    pub beta: f64,
    pub burn_in: usize,
    /// Keep every `thin`-th post-burn-in state.
    pub thin: usize,
}

impl Default for PcnConfig {
    fn default() -> Self {
        Self {
            steps: 100_000,
            beta: 0.2,
            burn_in: 1_000,
            thin: 10,
        }
    }
}

pub fn pcn_sample(problem: &InverseProblem, config: &PcnConfig, seed: u64) -> Result<PosteriorEnsemble> {
    if !(config.beta > 0.0 && config.beta <= 1.0) {
        return Err(Error::invalid(format!("pCN step size must lie in (0, 1], got {}", config.beta)));
    }
    if problem.noise_mode != NoiseMode::KnownSigma {
        return Err(Error::invalid("pCN needs a known-sigma problem"));
    }
    if config.thin == 0 || config.burn_in >= config.steps {
        return Err(Error::invalid("need thin >= 1 and burn_in < steps"));
    }
    let dec = problem.decoder;
    let dz = dec.latent_dim();
    let mut rng = stream_rng(seed, 0);
    let shrink = (1.0 - config.beta * config.beta).sqrt();

    let mut z = normal_vec(&mut rng, dz);
    let mut phi = problem.potential(&dec.decode(&z)?)?;
    let mut accepted = 0usize;
    let mut kept = Vec::new();
    for step in 0..config.steps {
        let w = normal_vec(&mut rng, dz);
        let proposal: Vec<f64> = z.iter().zip(&w).map(|(a, b)| shrink * a + config.beta * b).collect();
        let phi_new = problem.potential(&dec.decode(&proposal)?)?;
        let u: f64 = rng.random();
        if u < (phi - phi_new).exp() {
            z = proposal;
            phi = phi_new;
            accepted += 1;
        }
        if step >= config.burn_in && (step - config.burn_in) % config.thin == 0 {
            kept.push(z.clone());
        }
    }
    let rate = accepted as f64 / config.steps as f64;
    if rate < 0.01 {
        log::warn!("pCN acceptance rate {rate:.4} is below 1%; consider a smaller step size");
    }

    let refs: Vec<&[f64]> = kept.iter().map(|z| z.as_slice()).collect();
    let fields = dec.decode_many(&refs)?;
    let residuals = fields.iter().map(|f| problem.residual(f)).collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..kept.len()).collect();
    order.sort_by(|&a, &b| residuals[a].total_cmp(&residuals[b]).then(a.cmp(&b)));
    Ok(PosteriorEnsemble {
        latents: order.iter().map(|&i| kept[i].clone()).collect(),
        fields: order.iter().map(|&i| fields[i].clone()).collect(),
        residuals: order.iter().map(|&i| residuals[i]).collect(),
        sigmas: None,
        meta: SamplerMeta {
            method: "pcn".into(),
            proposals: config.steps,
            seed,
            acceptance_rate: Some(rate),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ObservationOperator;
    use crate::inversion::decoder::{Decoder, LinearDecoder};
    use crate::inversion::problem::Observation;
    use crate::tensor::Tensor;

    fn linear(dz: usize) -> LinearDecoder {
        let mut rng = stream_rng(8, 0);
        LinearDecoder::new(Tensor::matrix(6, dz, normal_vec(&mut rng, 6 * dz)).unwrap(), vec![0.5; 6], 6, 1).unwrap()
    }

    #[test]
    fn zero_information_preserves_the_prior() {
        let dec = linear(3);
        let op = ObservationOperator::new(vec![], 0, 0.1).unwrap();
        let p = InverseProblem::single(&dec, Observation::new(op, vec![]).unwrap(), NoiseMode::KnownSigma).unwrap();
        let cfg = PcnConfig {
            steps: 100_000,
            beta: 0.5,
            burn_in: 0,
            thin: 1,
        };
        let ens = pcn_sample(&p, &cfg, 1).unwrap();
        assert_eq!(ens.meta.acceptance_rate, Some(1.0));
        for k in 0..3 {
            let xs: Vec<f64> = ens.latents.iter().map(|z| z[k]).collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            let s = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
            assert!(m.abs() <= 0.05 && (0.95..=1.05).contains(&s), "dim {k}: mean {m}, std {s}");
        }
    }

    #[test]
    fn recovers_conjugate_posterior_mean() {
        let dec = linear(2);
        let truth = dec.decode(&[0.3, -0.8]).unwrap();
        let nodes = vec![0, 2, 3, 5];
        let y = nodes.iter().map(|&i| truth.get(i, 0) + 0.01).collect();
        let obs = Observation::new(ObservationOperator::new(nodes, 0, 0.3).unwrap(), y).unwrap();
        let (mean, cov) = dec.gaussian_posterior(std::slice::from_ref(&obs)).unwrap();
        let p = InverseProblem::single(&dec, obs, NoiseMode::KnownSigma).unwrap();
        let cfg = PcnConfig {
            steps: 100_000,
            beta: 0.3,
            burn_in: 1000,
            thin: 5,
        };
        let ens = pcn_sample(&p, &cfg, 2).unwrap();
        for k in 0..2 {
            let m = ens.latents.iter().map(|z| z[k]).sum::<f64>() / ens.len() as f64;
            assert!((m - mean[k]).abs() <= 0.1 * cov[k][k].sqrt(), "dim {k}: {m} vs {}", mean[k]);
        }
    }

    #[test]
    fn rejects_bad_step_size() {
        let dec = linear(2);
        let op = ObservationOperator::new(vec![0], 0, 0.1).unwrap();
        let p = InverseProblem::single(&dec, Observation::new(op, vec![0.0]).unwrap(), NoiseMode::KnownSigma).unwrap();
        for beta in [0.0, 1.5] {
            let cfg = PcnConfig { beta, ..PcnConfig::default() };
            assert!(pcn_sample(&p, &cfg, 0).is_err());
        }
    }

    #[test]
    fn beta_one_is_independence_sampling() {
        // With β = 1 the proposal ignores the current state, so consecutive
        // proposals are fresh prior draws.
        let dec = linear(2);
        let op = ObservationOperator::new(vec![], 0, 0.1).unwrap();
        let p = InverseProblem::single(&dec, Observation::new(op, vec![]).unwrap(), NoiseMode::KnownSigma).unwrap();
        let cfg = PcnConfig {
            steps: 3,
            beta: 1.0,
            burn_in: 0,
            thin: 1,
        };
        let ens = pcn_sample(&p, &cfg, 4).unwrap();
        let mut rng = stream_rng(4, 0);
        let _z0 = normal_vec(&mut rng, 2);
        let mut want = Vec::new();
        for _ in 0..3 {
            want.push(normal_vec(&mut rng, 2));
            let _u: f64 = rng.random();
        }
        let mut got = ens.latents.clone();
        got.sort_by(|a, b| a[0].total_cmp(&b[0]));
        want.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(got, want);
    }
}
