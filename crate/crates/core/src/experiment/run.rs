//! Generate, train, infer, evaluate.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use super::config::{ExperimentConfig, Method, ProblemKind};
use super::report::{metrics_rows, write_outputs, ExperimentReport};
use crate::baselines::{
    gp_fit_mml, gp_posterior, log_space, predict_direct_map, train_direct_map, GpGrid, ObservationProtocol,
};
use crate::error::{Error, Result};
use crate::forward::dataset::sample_helmholtz_specs;
use crate::forward::{read_dataset, sample_heat_dataset, sample_helmholtz_dataset, solve_graph_helmholtz, solve_heat, Dataset, Normalization};
use crate::forward::dataset::sample_heat_specs;
use crate::geometry::{laplacian_spectrum, Field, LaplacianSpectrum, Mesh, ObservationOperator};
use crate::inversion::{
    abc_sample, abc_sample_joint_noise, mean_std, pcn_sample, posterior_stats, quantile_sorted, InverseProblem,
    MeshDecoder, NoiseMode, Observation, PosteriorEnsemble,
};
use crate::neural::{load_checkpoint, save_checkpoint, train_autoencoder, Autoencoder, Checkpoint, LossTrace};
use crate::rng::{derive_seed, stream_rng};

/// One held-out problem instance with its synthetic observation.
#[derive(Clone, Debug)]
pub struct TestCase {
    pub index: usize,
    pub mesh: Mesh,
    pub field: Field,
    /// Vertices under the source bump, for the Helmholtz problem.
    pub source_support: Option<Vec<usize>>,
    /// Noise level used to generate `y`.
    pub sigma: f64,
    pub observation: ObservationOperator,
    pub y: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SigmaEstimate {
    pub mean: f64,
    pub median: f64,
    /// Posterior spread; absent for point estimates.
    pub std: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct MethodOutcome {
    pub method: Method,
    /// Field channels covered by `mean` and `std`, in order.
    pub channels: Vec<usize>,
    pub mean: Field,
    /// Pointwise posterior standard deviation; absent for point predictors.
    pub std: Option<Field>,
    pub sigma: Option<SigmaEstimate>,
    pub seconds: f64,
    /// Kept only when sample export is requested.
    pub ensemble: Option<PosteriorEnsemble>,
}

#[derive(Clone, Debug)]
pub struct CaseResult {
    pub case: usize,
    pub outcomes: Vec<MethodOutcome>,
}

/// Trained (or loaded) models shared by all test cases.
pub struct Models {
    pub gabi: Option<Checkpoint>,
    pub gabi_trace: Option<LossTrace>,
    pub gabi_seconds: Option<f64>,
    pub direct: Option<Checkpoint>,
    pub direct_trace: Option<LossTrace>,
    pub direct_seconds: Option<f64>,
    /// Training-set statistics, used to standardise GP data.
    pub normalization: Normalization,
    autoencoder: Option<Autoencoder>,
}

impl Models {
    pub fn autoencoder(&self) -> Option<&Autoencoder> {
        self.autoencoder.as_ref()
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ Error::Stage { .. } => e,
        e => Error::Stage {
            stage: name,
            source: Box::new(e),
        },
    })
}

/// The configured training set, read from disk when a path is given.
pub fn generate_training_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    if let Some(path) = &cfg.train_data {
        let ds = read_dataset(path)?;
        if ds.channels() != cfg.problem.channels() {
            return Err(Error::Consistency(format!(
                "{} holds {}-channel fields, the problem has {}",
                path.display(),
                ds.channels(),
                cfg.problem.channels()
            )));
        }
        return Ok(ds);
    }
    let seed = derive_seed(cfg.seed, "train-data");
    match cfg.problem {
        ProblemKind::Heat => sample_heat_dataset(cfg.data.train_samples, (cfg.data.grid[0], cfg.data.grid[1]), seed),
        ProblemKind::Helmholtz => sample_helmholtz_dataset(cfg.data.train_samples, &cfg.data.helmholtz, seed),
    }
}

/// Held-out cases. Case `k` draws its observed nodes, its noise level (in
/// infer-sigma mode) and its noise from stream `k`.
pub fn generate_test_cases(cfg: &ExperimentConfig) -> Result<Vec<TestCase>> {
    let seed = derive_seed(cfg.seed, "test-data");
    let n = cfg.data.test_cases;
    let solved: Vec<(Mesh, Field, Option<Vec<usize>>)> = match cfg.problem {
        ProblemKind::Heat => sample_heat_specs(n, seed)
            .par_iter()
            .map(|s| solve_heat(s, cfg.data.grid[0], cfg.data.grid[1]).map(|(m, f)| (m, f, None)))
            .collect::<Result<_>>()?,
        ProblemKind::Helmholtz => sample_helmholtz_specs(n, &cfg.data.helmholtz, seed)?
            .par_iter()
            .map(|s| solve_graph_helmholtz(s).map(|(m, f)| (m, f, Some(s.source_support()))))
            .collect::<Result<_>>()?,
    };
    let obs = &cfg.observation;
    let obs_seed = derive_seed(cfg.seed, "observe");
    solved
        .into_iter()
        .enumerate()
        .map(|(index, (mesh, field, source_support))| {
            let mut rng = stream_rng(obs_seed, index as u64);
            let sigma = match obs.noise_mode {
                NoiseMode::KnownSigma => obs.sigma,
                NoiseMode::InferSigma => obs.noise_prior.draw(&mut rng),
            };
            let observation = ObservationOperator::random(mesh.n_nodes(), obs.count, obs.channel, sigma, &mut rng)?;
            let y = observation.apply(&field, &mut rng)?;
            Ok(TestCase {
                index,
                mesh,
                field,
                source_support,
                sigma,
                observation,
                y,
            })
        })
        .collect()
}

/// Trains whatever the configured methods need, or loads the configured
/// checkpoints. Checkpoints and loss traces are written to `out` as soon as
/// they exist.
pub fn prepare_models(cfg: &ExperimentConfig, train: &Dataset, out: Option<&Path>) -> Result<Models> {
    let wants_gabi = cfg.methods.iter().any(|m| m.uses_autoencoder());
    let (mut gabi, mut gabi_trace, mut gabi_seconds) = (None, None, None);
    if let Some(path) = &cfg.checkpoint {
        gabi = Some(load_checkpoint(path)?);
    } else if wants_gabi {
        let t = Instant::now();
        let (ckpt, trace) = train_autoencoder(train, &cfg.model, derive_seed(cfg.seed, "gabi"))?;
        gabi_seconds = Some(t.elapsed().as_secs_f64());
        if let Some(dir) = out {
            save_checkpoint(&ckpt, &dir.join("gabi.gabw"))?;
            std::fs::write(dir.join("loss_trace.csv"), trace.to_csv())?;
        }
        gabi = Some(ckpt);
        gabi_trace = Some(trace);
    }

    let (mut direct, mut direct_trace, mut direct_seconds) = (None, None, None);
    if let Some(path) = &cfg.direct_checkpoint {
        direct = Some(load_checkpoint(path)?);
    } else if cfg.methods.contains(&Method::Direct) {
        let t = Instant::now();
        let (ckpt, trace) = train_direct_map(train, &cfg.direct_map_config(), derive_seed(cfg.seed, "direct"))?;
        direct_seconds = Some(t.elapsed().as_secs_f64());
        if let Some(dir) = out {
            save_checkpoint(&ckpt, &dir.join("direct.gabw"))?;
            std::fs::write(dir.join("direct_loss_trace.csv"), trace.to_csv())?;
        }
        direct = Some(ckpt);
        direct_trace = Some(trace);
    }

    let autoencoder = match &gabi {
        Some(c) if wants_gabi => Some(c.autoencoder()?),
        _ => None,
    };
    if let Some(ae) = &autoencoder {
        if ae.arch.field_channels != cfg.problem.channels() {
            return Err(Error::Consistency(format!(
                "checkpoint decodes {} channels, the problem has {}",
                ae.arch.field_channels,
                cfg.problem.channels()
            )));
        }
    }
    Ok(Models {
        gabi,
        gabi_trace,
        gabi_seconds,
        direct,
        direct_trace,
        direct_seconds,
        normalization: train.normalization.clone(),
        autoencoder,
    })
}

fn sigma_summary(sigmas: &[f64]) -> SigmaEstimate {
    let mut sorted = sigmas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (mean, std) = mean_std(sigmas);
    SigmaEstimate {
        mean,
        median: quantile_sorted(&sorted, 0.5),
        std: Some(std),
    }
}

fn gp_grid(cfg: &ExperimentConfig) -> GpGrid {
    if let Some(g) = &cfg.gp_grid {
        return g.clone();
    }
    let obs = &cfg.observation;
    match obs.noise_mode {
        NoiseMode::KnownSigma => GpGrid::standard(obs.sigma),
        NoiseMode::InferSigma => GpGrid {
            noise: log_space(obs.noise_prior.floor.max(1e-4), 1.0, 16),
            ..GpGrid::standard(obs.sigma)
        },
    }
}

struct GpCache {
    spectrum: Option<(LaplacianSpectrum, f64)>,
}

impl GpCache {
    /// The spectrum and the time it took, charged to every GP method.
    fn get(&mut self, mesh: &Mesh) -> Result<(&LaplacianSpectrum, f64)> {
        if self.spectrum.is_none() {
            let t = Instant::now();
            let s = laplacian_spectrum(mesh)?;
            self.spectrum = Some((s, t.elapsed().as_secs_f64()));
        }
        let (s, secs) = self.spectrum.as_ref().expect("just computed");
        Ok((s, *secs))
    }
}

fn gabi_outcome(
    cfg: &ExperimentConfig,
    ae: &Autoencoder,
    case: &TestCase,
    method: Method,
    seed: u64,
    keep_ensemble: bool,
) -> Result<MethodOutcome> {
    let mode = cfg.observation.noise_mode;
    let decoder = MeshDecoder::new(ae, &case.mesh);
    let operator = match mode {
        NoiseMode::KnownSigma => case.observation.clone(),
        // The true level is unknown to the sampler.
        NoiseMode::InferSigma => case.observation.with_sigma(0.0)?,
    };
    let problem = InverseProblem::single(&decoder, Observation::new(operator, case.y.clone())?, mode)?;
    let s = &cfg.sampler;
    let ensemble = match (method, mode) {
        (Method::GabiPcn, _) => pcn_sample(&problem, &s.pcn, seed)?,
        (_, NoiseMode::KnownSigma) => abc_sample(&problem, s.n_s, s.n_a, s.batch, seed)?,
        (_, NoiseMode::InferSigma) => {
            abc_sample_joint_noise(&problem, &cfg.observation.noise_prior, s.n_s, s.n_a, s.batch, seed)?
        }
    };
    let stats = posterior_stats(&ensemble, &[])?;
    Ok(MethodOutcome {
        method,
        channels: (0..cfg.problem.channels()).collect(),
        mean: stats.mean,
        std: Some(stats.std),
        sigma: ensemble.sigmas.as_deref().map(sigma_summary),
        seconds: 0.0,
        ensemble: keep_ensemble.then_some(ensemble),
    })
}

fn gp_outcome(
    cfg: &ExperimentConfig,
    norm: &Normalization,
    cache: &mut GpCache,
    case: &TestCase,
    method: Method,
) -> Result<(MethodOutcome, f64)> {
    let kind = method.kernel().expect("gp method");
    let c = case.observation.channel();
    let (m, sd) = (norm.mean[c], norm.std[c]);
    let (spectrum, spectrum_secs) = cache.get(&case.mesh)?;
    let y: Vec<f64> = case.y.iter().map(|v| (v - m) / sd).collect();
    let mut grid = gp_grid(cfg);
    grid.noise.iter_mut().for_each(|v| *v /= sd);
    let model = gp_fit_mml(spectrum, &case.observation, &y, kind, &grid)?;
    let (mean, std) = gp_posterior(&model, spectrum, &case.observation, &y)?;
    let names = mean.channels().to_vec();
    let mean = Field::new(mean.n_nodes(), names.clone(), mean.values().iter().map(|v| v * sd + m).collect())?;
    let std = Field::new(std.n_nodes(), names, std.values().iter().map(|v| v * sd).collect())?;
    let sigma = (cfg.observation.noise_mode == NoiseMode::InferSigma).then(|| SigmaEstimate {
        mean: model.noise * sd,
        median: model.noise * sd,
        std: None,
    });
    Ok((
        MethodOutcome {
            method,
            channels: vec![c],
            mean,
            std: Some(std),
            sigma,
            seconds: 0.0,
            ensemble: None,
        },
        spectrum_secs,
    ))
}

/// Runs every configured method on one test case.
pub fn infer_case(cfg: &ExperimentConfig, models: &Models, case: &TestCase) -> Result<CaseResult> {
    infer_case_with(cfg, models, case, cfg.export_samples && case.index == 0)
}

/// As [`infer_case`], optionally keeping the posterior ensembles.
pub fn infer_case_with(cfg: &ExperimentConfig, models: &Models, case: &TestCase, keep: bool) -> Result<CaseResult> {
    let seed = derive_seed(derive_seed(cfg.seed, "infer"), &case.index.to_string());
    let mut cache = GpCache { spectrum: None };
    let mut outcomes = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let t = Instant::now();
        let (mut outcome, extra) = match method {
            Method::GabiAbc | Method::GabiPcn => {
                let ae = models
                    .autoencoder()
                    .ok_or_else(|| Error::Consistency("no autoencoder available".into()))?;
                (gabi_outcome(cfg, ae, case, method, seed, keep)?, 0.0)
            }
            Method::Direct => {
                let ckpt = models
                    .direct
                    .as_ref()
                    .ok_or_else(|| Error::Consistency("no direct map available".into()))?;
                let protocol: ObservationProtocol = cfg.direct_map_config().protocol;
                let mean = predict_direct_map(ckpt, &case.mesh, &case.observation, &case.y, Some(&protocol))?;
                let outcome = MethodOutcome {
                    method,
                    channels: (0..mean.n_channels()).collect(),
                    mean,
                    std: None,
                    sigma: None,
                    seconds: 0.0,
                    ensemble: None,
                };
                (outcome, 0.0)
            }
            Method::GpM12 | Method::GpM32 | Method::GpRbf => {
                let cached = cache.spectrum.is_some();
                let (o, secs) = gp_outcome(cfg, &models.normalization, &mut cache, case, method)?;
                // The spectrum is shared between kernels; each GP row is
                // charged for it once so that rows stand alone.
                (o, if cached { secs } else { 0.0 })
            }
        };
        outcome.seconds = t.elapsed().as_secs_f64() + extra;
        outcomes.push(outcome);
    }
    Ok(CaseResult {
        case: case.index,
        outcomes,
    })
}

/// Full pipeline. Configuration problems are reported as
/// [`Error::Config`]; failures after that are wrapped in [`Error::Stage`]
/// and leave already written artifacts in place.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let out = cfg.output_dir.as_deref();
    if let Some(dir) = out {
        stage("setup", std::fs::create_dir_all(dir).map_err(Error::from))?;
        stage("setup", cfg.to_json().and_then(|j| Ok(std::fs::write(dir.join("config.json"), j)?)))?;
    }
    let train = stage("generate", generate_training_data(cfg))?;
    let cases = stage("generate", generate_test_cases(cfg))?;
    let models = stage("train", prepare_models(cfg, &train, out))?;
    let results: Vec<CaseResult> = stage(
        "infer",
        cases.par_iter().map(|c| infer_case(cfg, &models, c)).collect::<Result<_>>(),
    )?;
    let rows = stage("evaluate", metrics_rows(cfg, &models, &cases, &results))?;
    let report = ExperimentReport {
        rows,
        cases,
        results,
        gabi: models.gabi,
        gabi_trace: models.gabi_trace,
        direct: models.direct,
        normalization: models.normalization,
    };
    if let Some(dir) = out {
        stage("write", write_outputs(cfg, &report, dir))?;
    }
    Ok(report)
}
