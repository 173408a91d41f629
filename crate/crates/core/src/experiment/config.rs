//! JSON experiment configuration. Unknown keys are rejected so that a typo
//! cannot silently fall back to a default.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{DirectMapConfig, GpGrid, KernelKind, MaskRule, ObservationProtocol, Supervision};
use crate::error::{Error, Result};
use crate::forward::HelmholtzDatasetConfig;
use crate::inversion::{NoiseMode, NoisePrior, PcnConfig};
use crate::neural::{Activation, TrainConfig};
use crate::optim::AdamConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Heat,
    Helmholtz,
}

impl ProblemKind {
    pub fn channels(self) -> usize {
        match self {
            ProblemKind::Heat => 1,
            ProblemKind::Helmholtz => 2,
        }
    }

    /// Reported targets and the field channel each one refers to.
    pub fn field_targets(self) -> &'static [(&'static str, usize)] {
        match self {
            ProblemKind::Heat => &[("u", 0)],
            ProblemKind::Helmholtz => &[("u", 0), ("f", 1)],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "gabi-abc")]
    GabiAbc,
    #[serde(rename = "gabi-pcn")]
    GabiPcn,
    #[serde(rename = "direct")]
    Direct,
    #[serde(rename = "gp-m12")]
    GpM12,
    #[serde(rename = "gp-m32")]
    GpM32,
    #[serde(rename = "gp-rbf")]
    GpRbf,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::GabiAbc => "gabi-abc",
            Method::GabiPcn => "gabi-pcn",
            Method::Direct => "direct",
            Method::GpM12 => "gp-m12",
            Method::GpM32 => "gp-m32",
            Method::GpRbf => "gp-rbf",
        }
    }

    pub fn parse(label: &str) -> Option<Method> {
        serde_json::from_value(serde_json::Value::String(label.to_string())).ok()
    }

    pub fn kernel(self) -> Option<KernelKind> {
        match self {
            Method::GpM12 => Some(KernelKind::Matern12),
            Method::GpM32 => Some(KernelKind::Matern32),
            Method::GpRbf => Some(KernelKind::Rbf),
            _ => None,
        }
    }

    pub fn uses_autoencoder(self) -> bool {
        matches!(self, Method::GabiAbc | Method::GabiPcn)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train_samples: usize,
    pub test_cases: usize,
    /// Heat grid resolution `[nx, ny]`.
    pub grid: [usize; 2],
    pub helmholtz: HelmholtzDatasetConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_samples: 200,
            test_cases: 100,
            grid: [33, 33],
            helmholtz: HelmholtzDatasetConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Prior draws per ABC inference.
    pub n_s: usize,
    /// Accepted draws per ABC inference.
    pub n_a: usize,
    /// Latents decoded together.
    pub batch: usize,
    pub pcn: PcnConfig,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_s: 10_000,
            n_a: 100,
            batch: 256,
            pcn: PcnConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservationConfig {
    pub count: usize,
    pub channel: usize,
    /// Noise level in known-sigma mode.
    pub sigma: f64,
    pub noise_mode: NoiseMode,
    /// Distribution of the true noise level in infer-sigma mode, also used
    /// as the inference prior.
    pub noise_prior: NoisePrior,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self {
            count: 10,
            channel: 0,
            sigma: 1e-2,
            noise_mode: NoiseMode::KnownSigma,
            noise_prior: NoisePrior::default(),
        }
    }
}

/// Direct-map training hyperparameters. The observation protocol comes from
/// the experiment's observation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DirectTrainConfig {
    pub hidden: usize,
    pub layers: usize,
    pub activation: Activation,
    pub iterations: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Defaults per problem: full fields for heat, observations only for
    /// Helmholtz, where the forcing is never shown to the direct map.
    pub supervision: Option<Supervision>,
}

impl Default for DirectTrainConfig {
    fn default() -> Self {
        let d = DirectMapConfig::default();
        Self {
            hidden: d.hidden,
            layers: d.layers,
            activation: d.activation,
            iterations: d.iterations,
            batch_size: d.batch_size,
            adam: d.adam,
            supervision: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    pub data: DataConfig,
    pub model: TrainConfig,
    pub direct: DirectTrainConfig,
    pub sampler: SamplerConfig,
    pub observation: ObservationConfig,
    pub methods: Vec<Method>,
    /// Overrides the default MML grid for the GP baselines.
    pub gp_grid: Option<GpGrid>,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    /// Training set in a `GABD` container; generated from the seed if unset.
    pub train_data: Option<PathBuf>,
    /// Pre-trained autoencoder; training is skipped when set.
    pub checkpoint: Option<PathBuf>,
    /// Pre-trained direct map; its training is skipped when set.
    pub direct_checkpoint: Option<PathBuf>,
    /// Keeps wall-clock timings out of `metrics.csv` so that repeated runs
    /// produce identical files. Timings still go to `timings.csv`.
    pub deterministic: bool,
    /// Write truth/mean/std/error containers for every case and method.
    pub dump_fields: bool,
    /// Write the raw posterior samples of the first case as CSV.
    pub export_samples: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: ProblemKind::Heat,
            data: DataConfig::default(),
            model: TrainConfig::default(),
            direct: DirectTrainConfig::default(),
            sampler: SamplerConfig::default(),
            observation: ObservationConfig::default(),
            methods: vec![Method::GabiAbc, Method::Direct, Method::GpM12, Method::GpM32, Method::GpRbf],
            gp_grid: None,
            seed: 0,
            output_dir: None,
            train_data: None,
            checkpoint: None,
            direct_checkpoint: None,
            deterministic: false,
            dump_fields: true,
            export_samples: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn nodes_per_case(&self) -> usize {
        match self.problem {
            ProblemKind::Heat => self.data.grid[0] * self.data.grid[1],
            ProblemKind::Helmholtz => self.data.helmholtz.nodes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        if self.methods.iter().collect::<BTreeSet<_>>().len() != self.methods.len() {
            return bad("methods must not repeat".into());
        }
        if self.data.test_cases == 0 {
            return bad("test_cases must be positive".into());
        }
        if self.data.train_samples == 0 && (self.needs_gabi_training() || self.needs_direct_training()) {
            return bad("train_samples must be positive".into());
        }
        if self.problem == ProblemKind::Heat && self.data.grid.iter().any(|&n| n < 3) {
            return bad("heat grid needs at least 3 vertices per side".into());
        }
        let obs = &self.observation;
        if obs.channel >= self.problem.channels() {
            return bad(format!("observed channel {} out of range", obs.channel));
        }
        if obs.count == 0 || obs.count > self.nodes_per_case() {
            return bad(format!("cannot observe {} of {} nodes", obs.count, self.nodes_per_case()));
        }
        if obs.noise_mode == NoiseMode::KnownSigma && !(obs.sigma > 0.0 && obs.sigma.is_finite()) {
            return bad("known-sigma mode needs sigma > 0".into());
        }
        if !(obs.noise_prior.floor >= 0.0) {
            return bad("noise prior floor must be >= 0".into());
        }
        let s = &self.sampler;
        if s.n_a < 2 || s.n_a > s.n_s || s.batch == 0 {
            return bad(format!("need 2 <= n_a <= n_s and batch >= 1 (n_s={}, n_a={})", s.n_s, s.n_a));
        }
        if self.methods.contains(&Method::GabiPcn) {
            if obs.noise_mode == NoiseMode::InferSigma {
                return bad("gabi-pcn supports known-sigma mode only".into());
            }
            let p = &s.pcn;
            if !(p.beta > 0.0 && p.beta <= 1.0) || p.thin == 0 || p.burn_in >= p.steps {
                return bad("pcn needs 0 < beta <= 1, thin >= 1 and burn_in < steps".into());
            }
            if (p.steps - p.burn_in).div_ceil(p.thin) < 2 {
                return bad("pcn keeps fewer than two states".into());
            }
        }
        if self.needs_gabi_training() {
            self.model.validate()?;
        }
        if self.needs_direct_training() && self.direct.batch_size == 0 {
            return bad("direct batch_size must be positive".into());
        }
        if let Some(g) = &self.gp_grid {
            let all = g.sigma_f.iter().chain(&g.lengthscale);
            if g.sigma_f.is_empty() || g.lengthscale.is_empty() || g.noise.is_empty() || all.clone().any(|v| !(*v > 0.0))
            {
                return bad("gp grid needs nonempty positive sigma_f and lengthscale lists and a noise list".into());
            }
        }
        for path in self.checkpoint.iter().chain(&self.direct_checkpoint).chain(&self.train_data) {
            if !path.is_file() {
                return bad(format!("{} does not exist", path.display()));
            }
        }
        Ok(())
    }

    pub fn needs_gabi_training(&self) -> bool {
        self.checkpoint.is_none() && self.methods.iter().any(|m| m.uses_autoencoder())
    }

    pub fn needs_direct_training(&self) -> bool {
        self.direct_checkpoint.is_none() && self.methods.contains(&Method::Direct)
    }

    pub fn direct_map_config(&self) -> DirectMapConfig {
        let obs = &self.observation;
        let sigma = match obs.noise_mode {
            NoiseMode::KnownSigma => obs.sigma,
            NoiseMode::InferSigma => obs.noise_prior.median(),
        };
        DirectMapConfig {
            hidden: self.direct.hidden,
            layers: self.direct.layers,
            activation: self.direct.activation,
            iterations: self.direct.iterations,
            batch_size: self.direct.batch_size,
            adam: self.direct.adam,
            protocol: ObservationProtocol {
                mask: MaskRule::Count(obs.count),
                channel: obs.channel,
                sigma,
            },
            supervision: self.direct.supervision.unwrap_or(match self.problem {
                ProblemKind::Heat => Supervision::Full,
                ProblemKind::Helmholtz => Supervision::Observed,
            }),
        }
    }
}
