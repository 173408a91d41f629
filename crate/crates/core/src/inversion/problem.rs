//! Inverse problem definition and the noise-level prior.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::decoder::Decoder;
use crate::error::{Error, Result};
use crate::geometry::{Field, ObservationOperator};

/// Observed values `y` of one observation operator.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub operator: ObservationOperator,
    pub y: Vec<f64>,
}

impl Observation {
    pub fn new(operator: ObservationOperator, y: Vec<f64>) -> Result<Self> {
        if y.len() != operator.len() {
            return Err(Error::shape(
                "observation",
                format!("{} values for {} observed nodes", y.len(), operator.len()),
            ));
        }
        Ok(Self { operator, y })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    KnownSigma,
    InferSigma,
}

pub struct InverseProblem<'d> {
    pub decoder: &'d dyn Decoder,
    pub observations: Vec<Observation>,
    pub noise_mode: NoiseMode,
}

impl<'d> InverseProblem<'d> {
    pub fn new(decoder: &'d dyn Decoder, observations: Vec<Observation>, noise_mode: NoiseMode) -> Result<Self> {
        for obs in &observations {
            if obs.y.len() != obs.operator.len() {
                return Err(Error::shape("inverse-problem", "observation vector length"));
            }
            if noise_mode == NoiseMode::KnownSigma && !(obs.operator.sigma() > 0.0) {
                return Err(Error::invalid("known-sigma mode needs sigma > 0"));
            }
        }
        Ok(Self {
            decoder,
            observations,
            noise_mode,
        })
    }

    pub fn single(decoder: &'d dyn Decoder, observation: Observation, noise_mode: NoiseMode) -> Result<Self> {
        Self::new(decoder, vec![observation], noise_mode)
    }

    pub fn n_observed(&self) -> usize {
        self.observations.iter().map(|o| o.y.len()).sum()
    }

    /// `‖y - (H u + σ g)‖₂` over all operators, drawing `g` from `rng`.
    /// `sigma` overrides every operator's own noise level when given.
    pub(crate) fn simulated_residual<R: Rng + ?Sized>(&self, field: &Field, sigma: Option<f64>, rng: &mut R) -> Result<f64> {
        let mut sq = 0.0;
        for obs in &self.observations {
            let s = sigma.unwrap_or(obs.operator.sigma());
            let sim = obs.operator.apply_with_sigma(field, s, rng)?;
            sq += obs.y.iter().zip(&sim).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        Ok(sq.sqrt())
    }

    /// Noise-free residual `‖y - H u‖₂`.
    pub(crate) fn residual(&self, field: &Field) -> Result<f64> {
        let mut sq = 0.0;
        for obs in &self.observations {
            let sel = obs.operator.select(field)?;
            sq += obs.y.iter().zip(&sel).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        Ok(sq.sqrt())
    }

    /// Negative log-likelihood `Σ ‖y - H u‖² / (2σ²)`.
    pub(crate) fn potential(&self, field: &Field) -> Result<f64> {
        let mut phi = 0.0;
        for obs in &self.observations {
            if obs.operator.is_empty() {
                continue;
            }
            let sel = obs.operator.select(field)?;
            let s2 = obs.operator.sigma().powi(2);
            phi += obs.y.iter().zip(&sel).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (2.0 * s2);
        }
        Ok(phi)
    }
}

/// `σ = exp(ε - shift) + floor` with `ε ~ N(0, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoisePrior {
    pub shift: f64,
    pub floor: f64,
    /// Collapses the prior onto `σ(ε)` for this fixed `ε`.
    pub fixed_epsilon: Option<f64>,
}

impl Default for NoisePrior {
    fn default() -> Self {
        Self {
            shift: 4.0,
            floor: 1e-3,
            fixed_epsilon: None,
        }
    }
}

impl NoisePrior {
    pub fn point_mass(epsilon: f64) -> Self {
        Self {
            fixed_epsilon: Some(epsilon),
            ..Self::default()
        }
    }

    pub fn sigma(&self, epsilon: f64) -> f64 {
        (epsilon - self.shift).exp() + self.floor
    }

    pub fn median(&self) -> f64 {
        self.sigma(self.fixed_epsilon.unwrap_or(0.0))
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let eps = match self.fixed_epsilon {
            Some(e) => e,
            None => rng.sample(StandardNormal),
        };
        self.sigma(eps)
    }
}
