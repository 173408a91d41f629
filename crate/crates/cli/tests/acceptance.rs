//! Acceptance suite. Each criterion prints one `PASS` or `FAIL` line; the
//! process exits non-zero if any criterion fails.
//!
//! The desk-scale heat run is shared: criterion 4 trains and evaluates it,
//! criteria 5 and 8 reuse the trained checkpoint.

use std::error::Error as StdError;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use gabi_core::autodiff::{compare_gradients, grad_check};
use gabi_core::experiment::{
    generate_training_data, run_experiment, ExperimentConfig, ExperimentReport, Method, ProblemKind,
};
use gabi_core::forward::heat::solve_laplace_dirichlet;
use gabi_core::forward::sample_heat_dataset;
use gabi_core::geometry::random_point_cloud_mesh;
use gabi_core::inversion::{
    abc_all_residuals, abc_sample, abc_sample_joint_noise, mean_std, pcn_sample, Decoder, InverseProblem, LinearDecoder,
    MeshDecoder, NoiseMode, NoisePrior, Observation, PcnConfig,
};
use gabi_core::neural::train::{autoencoder_loss, autoencoder_loss_grad, BatchItem};
use gabi_core::neural::{
    median_bandwidth, mmd2, mmd_null_quantile, train_autoencoder, Architecture, MeshContext, Samples, TrainConfig,
};
use gabi_core::rng::{normal_vec, stream_rng};
use gabi_core::sparse::CsrMatrix;
use gabi_core::{Graph, ObservationOperator, Params, Tensor};

type Res<T> = Result<T, Box<dyn StdError>>;

/// Outcome of one criterion: whether it held, plus the measured numbers.
struct Verdict {
    passed: bool,
    detail: String,
}

impl Verdict {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

/// Settings of the desk-scale heat experiment.
const HEAT_N_S: usize = 2_000;
const HEAT_N_A: usize = 40;

struct HeatRun {
    cfg: ExperimentConfig,
    report: ExperimentReport,
    checkpoint: PathBuf,
}

fn heat_config(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.problem = ProblemKind::Heat;
    cfg.data.train_samples = 200;
    cfg.data.test_cases = 100;
    cfg.data.grid = [33, 33];
    cfg.model.hidden = 64;
    cfg.model.layers = 4;
    cfg.model.latent_dim = 32;
    cfg.model.iterations = 3000;
    cfg.observation.count = 10;
    cfg.observation.sigma = 1e-2;
    cfg.observation.noise_mode = NoiseMode::KnownSigma;
    cfg.sampler.n_s = HEAT_N_S;
    cfg.sampler.n_a = HEAT_N_A;
    cfg.methods = vec![Method::GabiAbc, Method::GpM12, Method::GpM32, Method::GpRbf];
    cfg.seed = 2024;
    cfg.dump_fields = false;
    cfg.output_dir = Some(dir.to_path_buf());
    cfg
}

fn per_dim_stats(rows: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let d = rows[0].len();
    (0..d)
        .map(|k| mean_std(&rows.iter().map(|r| r[k]).collect::<Vec<_>>()))
        .collect()
}

// ---------------------------------------------------------------------------
// 1. Samplers against the closed-form posterior of a linear decoder.

fn linear_posterior() -> Res<Verdict> {
    let (n, dz, sigma) = (12, 4, 0.1);
    let mut rng = stream_rng(101, 0);
    let a: Vec<f64> = normal_vec(&mut rng, n * dz).into_iter().map(|v| 0.1 * v).collect();
    let b = normal_vec(&mut rng, n);
    let dec = LinearDecoder::new(Tensor::matrix(n, dz, a)?, b, n, 1)?;
    let z_true = normal_vec(&mut rng, dz);
    let op = ObservationOperator::new(vec![0, 2, 4, 6, 8, 10], 0, sigma)?;
    let y = op.apply(&dec.decode(&z_true)?, &mut rng)?;
    let obs = Observation::new(op, y)?;
    let (mean, cov) = dec.gaussian_posterior(std::slice::from_ref(&obs))?;
    let sd: Vec<f64> = (0..dz).map(|i| cov[i][i].sqrt()).collect();
    let problem = InverseProblem::single(&dec, obs, NoiseMode::KnownSigma)?;

    let chain = pcn_sample(
        &problem,
        &PcnConfig {
            steps: 100_000,
            beta: 0.2,
            burn_in: 1_000,
            thin: 10,
        },
        7,
    )?;
    let pcn = per_dim_stats(&chain.latents);
    let pcn_mean_err = (0..dz).map(|k| (pcn[k].0 - mean[k]).abs() / sd[k]).fold(0.0, f64::max);
    let pcn_std_err = (0..dz).map(|k| (pcn[k].1 / sd[k] - 1.0).abs()).fold(0.0, f64::max);

    let abc = abc_sample(&problem, 200_000, 500, 1000, 8)?;
    let abc_stats = per_dim_stats(&abc.latents);
    let abc_mean_err = (0..dz).map(|k| (abc_stats[k].0 - mean[k]).abs() / sd[k]).fold(0.0, f64::max);

    let passed = pcn_mean_err <= 0.1 && pcn_std_err <= 0.1 && abc_mean_err <= 0.3;
    Ok(Verdict::new(
        passed,
        format!(
            "pCN mean err {pcn_mean_err:.3} sd (<= 0.1), pCN std rel err {pcn_std_err:.3} (<= 0.1), \
             ABC mean err {abc_mean_err:.3} sd (<= 0.3)"
        ),
    ))
}

// ---------------------------------------------------------------------------
// 2. Heat solver against separation of variables.

fn heat_solver() -> Res<Verdict> {
    let (l, w) = (1.0, 0.8);
    let pi = std::f64::consts::PI;
    let max_error = |n: usize| -> Res<f64> {
        let (mesh, field) = solve_laplace_dirichlet(l, w, n, n, |_, j, x, _| {
            if j == n - 1 {
                (pi * x / l).sin()
            } else {
                0.0
            }
        })?;
        Ok((0..mesh.n_nodes())
            .map(|i| {
                let c = mesh.coord(i);
                let exact = (pi * c[0] / l).sin() * (pi * c[1] / l).sinh() / (pi * w / l).sinh();
                (field.get(i, 0) - exact).abs()
            })
            .fold(0.0, f64::max))
    };
    let e64 = max_error(64)?;
    let errs = [max_error(17)?, max_error(33)?, max_error(65)?];
    let orders = [(errs[0] / errs[1]).log2(), (errs[1] / errs[2]).log2()];
    let passed = e64 <= 1e-3 && orders.iter().all(|&p| p >= 1.8);
    Ok(Verdict::new(
        passed,
        format!(
            "64x64 max error {e64:.2e} (<= 1e-3), orders {:.3}, {:.3} (>= 1.8)",
            orders[0], orders[1]
        ),
    ))
}

// ---------------------------------------------------------------------------
// 3. Reverse-mode gradients against central differences.

type Build = Box<dyn Fn(&mut Graph, &std::collections::BTreeMap<String, gabi_core::Var>) -> gabi_core::Result<gabi_core::Var>>;

fn gradient_suite() -> Res<Verdict> {
    const H: f64 = 1e-6;
    const TOL: f64 = 1e-5;
    let mut rng = stream_rng(303, 0);
    let mut mat = |r: usize, c: usize| Tensor::matrix(r, c, normal_vec(&mut rng, r * c)).unwrap();
    let params = |pairs: Vec<(&str, Tensor)>| -> Params { pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect() };

    let sparse = std::sync::Arc::new(CsrMatrix::from_triplets(
        4,
        3,
        vec![(0, 0, 0.5), (0, 2, -1.0), (1, 1, 2.0), (2, 0, 0.3), (3, 2, 1.5), (3, 1, -0.7)],
    )?);
    // A fixed weighting keeps each scalar loss sensitive to every output entry.
    let weight = |g: &mut Graph, v: gabi_core::Var| -> gabi_core::Result<gabi_core::Var> {
        let shape = g.value(v).shape().to_vec();
        let n: usize = shape.iter().product();
        let w = Tensor::new(shape, (0..n).map(|i| 0.3 + 0.17 * i as f64).collect())?;
        let w = g.constant(w);
        let p = g.mul(v, w)?;
        Ok(g.sum_square(p))
    };

    let mut cases: Vec<(&str, Params, Build)> = Vec::new();
    let ab = params(vec![("a", mat(3, 4)), ("b", mat(4, 2))]);
    cases.push(("matmul", ab, Box::new(move |g, v| {
        let y = g.matmul(v["a"], v["b"])?;
        weight(g, y)
    })));
    let sp = sparse.clone();
    cases.push(("sparse_matmul", params(vec![("x", mat(3, 2))]), Box::new(move |g, v| {
        let y = g.sparse_matmul(&sp, v["x"])?;
        weight(g, y)
    })));
    let two = params(vec![("a", mat(3, 2)), ("b", mat(3, 2))]);
    for (name, op) in [("add", 0), ("mul", 1), ("sub", 2)] {
        cases.push((name, two.clone(), Box::new(move |g, v| {
            let y = match op {
                0 => g.add(v["a"], v["b"])?,
                1 => g.mul(v["a"], v["b"])?,
                _ => g.sub(v["a"], v["b"])?,
            };
            weight(g, y)
        })));
    }
    cases.push(("scale", params(vec![("a", mat(2, 3))]), Box::new(move |g, v| {
        let y = g.scale(v["a"], -1.7);
        weight(g, y)
    })));
    cases.push(("tanh", params(vec![("a", mat(3, 3))]), Box::new(move |g, v| {
        let y = g.tanh(v["a"]);
        weight(g, y)
    })));
    // Keep inputs away from the kink so that finite differences are valid.
    let relu_in = Tensor::matrix(2, 3, vec![0.8, -0.6, 1.3, -1.1, 0.4, -0.25])?;
    cases.push(("relu", params(vec![("a", relu_in)]), Box::new(move |g, v| {
        let y = g.relu(v["a"]);
        weight(g, y)
    })));
    for axis in [0usize, 1] {
        cases.push(("reduce_mean", params(vec![("a", mat(3, 4))]), Box::new(move |g, v| {
            let y = g.reduce_mean(v["a"], axis)?;
            weight(g, y)
        })));
        let parts = if axis == 0 {
            params(vec![("a", mat(2, 3)), ("b", mat(1, 3))])
        } else {
            params(vec![("a", mat(2, 3)), ("b", mat(2, 1))])
        };
        cases.push(("concat", parts, Box::new(move |g, v| {
            let y = g.concat(&[v["a"], v["b"]], axis)?;
            weight(g, y)
        })));
    }
    cases.push(("broadcast_row", params(vec![("a", mat(1, 3))]), Box::new(move |g, v| {
        let y = g.broadcast_row(v["a"], 4)?;
        weight(g, y)
    })));
    cases.push(("gather_rows", params(vec![("a", mat(4, 2))]), Box::new(move |g, v| {
        let y = g.gather_rows(v["a"], &[3, 0, 3, 1])?;
        weight(g, y)
    })));
    cases.push(("sum_square", params(vec![("a", mat(3, 2))]), Box::new(move |g, v| Ok(g.sum_square(v["a"])))));

    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for (name, p, build) in &cases {
        let report = grad_check(build, p, H, TOL)?;
        worst = worst.max(report.max_rel_error);
        if !report.passed {
            failures.push(format!("{name} ({:.1e})", report.max_rel_error));
        }
    }

    // The full training loss (reconstruction plus MMD) on 5-node meshes.
    let mut crng = stream_rng(11, 0);
    let arch = Architecture::autoencoder(2, 1, 4, 2, 3);
    let theta = arch.init_params(&mut crng)?;
    let meshes: Vec<_> = (0..3)
        .map(|_| random_point_cloud_mesh(5, 2, &mut crng))
        .collect::<gabi_core::Result<_>>()?;
    let ctxs: Vec<MeshContext> = meshes.iter().map(MeshContext::new).collect();
    let targets: Vec<Tensor> = (0..3)
        .map(|_| Tensor::matrix(5, 1, normal_vec(&mut crng, 5)))
        .collect::<gabi_core::Result<_>>()?;
    let batch: Vec<BatchItem> = ctxs
        .iter()
        .zip(&targets)
        .map(|(ctx, target)| BatchItem { ctx, target })
        .collect();
    let reference = normal_vec(&mut crng, 3 * 3);
    let analytic = autoencoder_loss_grad(&arch, &theta, &batch, &reference, 1.0, 1e-3)?.grads;
    let mut numeric = Params::new();
    for (name, t) in &theta {
        let mut grad = Tensor::zeros(t.shape());
        for k in 0..t.numel() {
            let mut p = theta.clone();
            p.get_mut(name).unwrap().data_mut()[k] += H;
            let up = autoencoder_loss(&arch, &p, &batch, &reference, 1.0, 1e-3)?;
            p.get_mut(name).unwrap().data_mut()[k] -= 2.0 * H;
            let down = autoencoder_loss(&arch, &p, &batch, &reference, 1.0, 1e-3)?;
            grad.data_mut()[k] = (up - down) / (2.0 * H);
        }
        numeric.insert(name.clone(), grad);
    }
    let full = compare_gradients(&analytic, &numeric, TOL);
    if !full.passed {
        failures.push(format!("full loss ({:.1e})", full.max_rel_error));
    }
    worst = worst.max(full.max_rel_error);

    Ok(Verdict::new(
        failures.is_empty(),
        format!(
            "{} primitive checks + full loss, worst rel error {worst:.2e} (<= 1e-5){}",
            cases.len(),
            if failures.is_empty() {
                String::new()
            } else {
                format!("; failing: {}", failures.join(", "))
            }
        ),
    ))
}

// ---------------------------------------------------------------------------
// 4. Desk-scale heat benchmark.

fn heat_benchmark(dir: &Path) -> Res<(Verdict, HeatRun)> {
    let cfg = heat_config(dir);
    let report = run_experiment(&cfg)?;
    let mae = |m: Method| -> Res<f64> {
        Ok(report
            .row(m, "u")
            .ok_or_else(|| format!("no u row for {}", m.label()))?
            .mae_mean)
    };
    let (gabi, m32, rbf) = (mae(Method::GabiAbc)?, mae(Method::GpM32)?, mae(Method::GpRbf)?);
    let row = report.row(Method::GabiAbc, "u").unwrap();
    let (c1, c2) = (row.coverage_1.unwrap_or(f64::NAN), row.coverage_2.unwrap_or(f64::NAN));
    let passed = gabi < m32 && gabi < rbf && c2 >= 85.0 && (55.0..=95.0).contains(&c1);
    let verdict = Verdict::new(
        passed,
        format!(
            "MAE gabi-abc {gabi:.3e}, gp-m32 {m32:.3e}, gp-rbf {rbf:.3e}; \
             coverage 1sd {c1:.2}% (55..95), 2sd {c2:.2}% (>= 85)"
        ),
    );
    let run = HeatRun {
        cfg,
        report,
        checkpoint: dir.join("gabi.gabw"),
    };
    Ok((verdict, run))
}

// ---------------------------------------------------------------------------
// 5. Joint noise-level estimation with the trained heat prior.

fn noise_estimation(heat: &HeatRun) -> Res<Verdict> {
    let mut cfg = heat.cfg.clone();
    cfg.checkpoint = Some(heat.checkpoint.clone());
    cfg.output_dir = None;
    cfg.methods = vec![Method::GabiAbc];
    cfg.data.test_cases = 50;
    cfg.observation.count = 20;
    cfg.observation.noise_mode = NoiseMode::InferSigma;
    cfg.observation.noise_prior = NoisePrior::default();
    let report = run_experiment(&cfg)?;
    let outcomes = report.outcomes(Method::GabiAbc);
    let prior_median = cfg.observation.noise_prior.median();
    let mut within = 0usize;
    let mut baseline = 0.0;
    for (case, o) in report.cases.iter().zip(&outcomes) {
        let est = o.sigma.ok_or("missing sigma estimate")?;
        let ratio = est.median / case.sigma;
        if (1.0 / 3.0..=3.0).contains(&ratio) {
            within += 1;
        }
        baseline += (case.sigma - prior_median).abs();
    }
    let n = report.cases.len();
    baseline /= n as f64;
    let sigma_mae = report.row(Method::GabiAbc, "sigma").ok_or("no sigma row")?.mae_mean;
    let frac = within as f64 / n as f64;
    Ok(Verdict::new(
        frac >= 0.6 && sigma_mae < baseline,
        format!(
            "median within 3x in {within}/{n} cases ({:.0}%, >= 60%), sigma MAE {sigma_mae:.3e} vs prior-median \
             baseline {baseline:.3e}",
            100.0 * frac
        ),
    ))
}

// ---------------------------------------------------------------------------
// 6. ABC keeps exactly the smallest residuals.

fn abc_selection() -> Res<Verdict> {
    let mut rng = stream_rng(606, 0);
    let n = 20;
    let lin = LinearDecoder::new(Tensor::matrix(n, 3, normal_vec(&mut rng, n * 3))?, normal_vec(&mut rng, n), n, 1)?;
    let truth = lin.decode(&[0.3, -0.8, 1.1])?;

    let ds = sample_heat_dataset(16, (9, 9), 5)?;
    let tiny = TrainConfig {
        hidden: 8,
        layers: 2,
        latent_dim: 4,
        iterations: 40,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let ae = train_autoencoder(&ds, &tiny, 3)?.0.autoencoder()?;
    let heat_mesh = &ds.samples[0].mesh;
    let mesh_dec = MeshDecoder::new(&ae, heat_mesh);

    let prior = NoisePrior::default();
    let mut runs = 0usize;
    let mut bad = Vec::new();
    let decoders: [(&str, &dyn Decoder, &gabi_core::Field); 2] =
        [("linear", &lin, &truth), ("trained", &mesh_dec, &ds.samples[0].field)];
    for (label, dec, field) in decoders {
        let nodes = field.n_nodes();
        let op = ObservationOperator::random(nodes, 6, 0, 0.05, &mut rng)?;
        let y = op.apply(field, &mut rng)?;
        let known = InverseProblem::single(dec, Observation::new(op.clone(), y.clone())?, NoiseMode::KnownSigma)?;
        let joint = InverseProblem::single(dec, Observation::new(op.with_sigma(0.0)?, y)?, NoiseMode::InferSigma)?;
        for (n_s, n_a, batch, seed) in [(10_000, 100, 256, 1), (4_000, 4_000, 333, 2), (2_500, 1, 1_000, 3), (777, 50, 64, 4)] {
            for (problem, noise) in [(&known, None), (&joint, Some(&prior))] {
                let ens = match noise {
                    None => abc_sample(problem, n_s, n_a, batch, seed)?,
                    Some(p) => abc_sample_joint_noise(problem, p, n_s, n_a, batch, seed)?,
                };
                let mut all = abc_all_residuals(problem, noise, n_s, batch, seed)?;
                all.sort_by(f64::total_cmp);
                all.truncate(n_a);
                runs += 1;
                let same = all.len() == ens.residuals.len()
                    && all.iter().zip(&ens.residuals).all(|(a, b)| a.to_bits() == b.to_bits());
                if !same {
                    bad.push(format!("{label} n_s={n_s} n_a={n_a} joint={}", noise.is_some()));
                }
            }
        }
    }
    Ok(Verdict::new(
        bad.is_empty(),
        if bad.is_empty() {
            format!("{runs} runs, kept residuals equal the exact order statistics")
        } else {
            format!("mismatch in {}", bad.join("; "))
        },
    ))
}

// ---------------------------------------------------------------------------
// 7. pCN leaves the prior invariant when the data carry no information.

fn pcn_prior() -> Res<Verdict> {
    let dz = 4;
    let mut rng = stream_rng(707, 0);
    let dec = LinearDecoder::new(Tensor::matrix(6, dz, normal_vec(&mut rng, 6 * dz))?, vec![0.0; 6], 6, 1)?;
    let problem = InverseProblem::new(&dec, Vec::new(), NoiseMode::KnownSigma)?;
    let chain = pcn_sample(
        &problem,
        &PcnConfig {
            steps: 100_000,
            beta: 0.5,
            burn_in: 0,
            thin: 1,
        },
        17,
    )?;
    let stats = per_dim_stats(&chain.latents);
    let max_mean = stats.iter().map(|s| s.0.abs()).fold(0.0, f64::max);
    let std_range = stats
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), s| (lo.min(s.1), hi.max(s.1)));
    let rate = chain.meta.acceptance_rate.unwrap_or(f64::NAN);
    Ok(Verdict::new(
        max_mean <= 0.05 && std_range.0 >= 0.95 && std_range.1 <= 1.05 && rate == 1.0,
        format!(
            "{} states, max |mean| {max_mean:.4} (<= 0.05), std in [{:.4}, {:.4}] (0.95..1.05), acceptance {rate}",
            chain.latents.len(),
            std_range.0,
            std_range.1
        ),
    ))
}

// ---------------------------------------------------------------------------
// 8. The encoded training set looks like a standard normal sample.

fn latent_gaussianization(heat: &HeatRun) -> Res<Verdict> {
    let ae = heat
        .report
        .gabi
        .as_ref()
        .ok_or("heat run kept no checkpoint")?
        .autoencoder()?;
    let train = generate_training_data(&heat.cfg)?;
    let items: Vec<_> = train.samples.iter().map(|s| (&s.mesh, &s.field)).collect();
    let zs = ae.encode_batch(&items)?;
    let (m, dz) = (zs.len(), ae.latent_dim());
    let stats = per_dim_stats(&zs);
    let max_mean = stats.iter().map(|s| s.0.abs()).fold(0.0, f64::max);
    let (lo, hi) = stats
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), s| (lo.min(s.1), hi.max(s.1)));

    let flat: Vec<f64> = zs.concat();
    let fresh = normal_vec(&mut stream_rng(808, 0), m * dz);
    let (sx, sy) = (Samples::new(&flat, dz), Samples::new(&fresh, dz));
    let stat = mmd2(sx, sy, median_bandwidth(sx, sy, 1e-3))?;
    let threshold = mmd_null_quantile(m, m, dz, 0.99, 500, 809)?;

    Ok(Verdict::new(
        max_mean <= 0.2 && lo >= 0.7 && hi <= 1.3 && stat <= threshold,
        format!(
            "max |mean| {max_mean:.3} (<= 0.2), std in [{lo:.3}, {hi:.3}] (0.7..1.3), \
             mmd2 {stat:.3e} vs 99% null {threshold:.3e}"
        ),
    ))
}

// ---------------------------------------------------------------------------
// 9. Helmholtz source localisation from |u| observations.

fn helmholtz_sources(dir: &Path) -> Res<Verdict> {
    let mut cfg = ExperimentConfig::default();
    cfg.problem = ProblemKind::Helmholtz;
    cfg.data.train_samples = 500;
    cfg.data.test_cases = 25;
    cfg.data.helmholtz.nodes = 30;
    cfg.model.latent_dim = 8;
    cfg.model.iterations = 3000;
    cfg.direct.iterations = 3000;
    cfg.observation.count = 10;
    cfg.observation.channel = 0;
    cfg.observation.sigma = 1e-2;
    cfg.sampler.n_s = 20_000;
    cfg.sampler.n_a = 100;
    cfg.methods = vec![Method::GabiAbc, Method::Direct];
    cfg.seed = 99;
    cfg.dump_fields = false;
    cfg.output_dir = Some(dir.to_path_buf());
    let report = run_experiment(&cfg)?;

    let mut hits = 0usize;
    for (case, o) in report.cases.iter().zip(report.outcomes(Method::GabiAbc)) {
        let slot = o.channels.iter().position(|&c| c == 1).ok_or("posterior lacks the forcing channel")?;
        let f = o.mean.channel(slot);
        let argmax = (0..f.len()).max_by(|&a, &b| f[a].total_cmp(&f[b])).unwrap();
        if case.source_support.as_ref().ok_or("missing source support")?.contains(&argmax) {
            hits += 1;
        }
    }
    let n = report.cases.len();
    let gabi_f = report.row(Method::GabiAbc, "f").ok_or("no gabi f row")?.mae_mean;
    let direct_f = report.row(Method::Direct, "f").ok_or("no direct f row")?.mae_mean;
    let frac = hits as f64 / n as f64;
    Ok(Verdict::new(
        frac >= 0.8 && gabi_f < direct_f,
        format!(
            "argmax in support {hits}/{n} ({:.0}%, >= 80%), f MAE gabi-abc {gabi_f:.3e} vs direct {direct_f:.3e}",
            100.0 * frac
        ),
    ))
}

// ---------------------------------------------------------------------------
// 10. Single-threaded `eval` is byte-for-byte reproducible.

const DETERMINISM_CONFIG: &str = r#"{
  "problem": "heat",
  "data": {"train_samples": 30, "test_cases": 5, "grid": [9, 9]},
  "model": {"hidden": 16, "layers": 2, "latent_dim": 4, "iterations": 100, "batch_size": 8},
  "direct": {"hidden": 16, "layers": 2, "iterations": 100, "batch_size": 8},
  "sampler": {"n_s": 2000, "n_a": 50, "batch": 256,
              "pcn": {"steps": 2000, "beta": 0.2, "burn_in": 200, "thin": 5}},
  "observation": {"count": 6, "sigma": 0.01},
  "methods": ["gabi-abc", "gabi-pcn", "direct", "gp-m12", "gp-m32", "gp-rbf"],
  "seed": 12,
  "dump_fields": false
}"#;

fn determinism(dir: &Path) -> Res<Verdict> {
    let config = dir.join("config.json");
    std::fs::write(&config, DETERMINISM_CONFIG)?;
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_gabi"))
            .args(["eval", "--threads", "1", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .env("RUST_LOG", "error")
            .status()?;
        if !status.success() {
            return Ok(Verdict::new(false, format!("eval run {run} exited with {status}")));
        }
        outputs.push(std::fs::read(out.join("metrics.csv"))?);
    }
    let rows = String::from_utf8_lossy(&outputs[0]).lines().count().saturating_sub(1);
    Ok(Verdict::new(
        outputs[0] == outputs[1] && rows > 0,
        format!("two runs, {} bytes each, {rows} metric rows, identical: {}", outputs[0].len(), outputs[0] == outputs[1]),
    ))
}

// ---------------------------------------------------------------------------

fn guarded<T>(f: impl FnOnce() -> Res<T>) -> Result<T, String> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => Ok(v),
        Ok(Err(e)) => Err(format!("error: {e}")),
        Err(p) => Err(format!(
            "panic: {}",
            p.downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default()
        )),
    }
}

fn report(id: u32, title: &str, started: Instant, outcome: Result<Verdict, String>) -> bool {
    let secs = started.elapsed().as_secs_f64();
    let (passed, detail) = match outcome {
        Ok(v) => (v.passed, v.detail),
        Err(e) => (false, e),
    };
    println!(
        "{} criterion {id:>2} {title}: {detail} [{secs:.1}s]",
        if passed { "PASS" } else { "FAIL" }
    );
    passed
}

/// Criteria named on the command line (`cargo test --test acceptance -- 1 7`),
/// or all of them. Criteria 5 and 8 pull in the heat run of criterion 4.
fn selection() -> Vec<u32> {
    let picked: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if picked.is_empty() {
        (1..=10).collect()
    } else {
        picked
    }
}

fn main() {
    let picked = selection();
    let want = |id: u32| picked.contains(&id);
    let scratch = tempfile::tempdir().expect("temporary directory");
    let sub = |name: &str| {
        let p = scratch.path().join(name);
        std::fs::create_dir_all(&p).expect("create scratch directory");
        p
    };
    let mut all = true;
    let mut run = |id: u32, title: &str, f: &mut dyn FnMut() -> Result<Verdict, String>| {
        if want(id) {
            let t = Instant::now();
            all &= report(id, title, t, f());
        }
    };

    run(1, "linear-decoder posterior", &mut || guarded(linear_posterior));
    run(2, "heat solver accuracy", &mut || guarded(heat_solver));
    run(3, "gradient checks", &mut || guarded(gradient_suite));

    let mut heat = None;
    let heat_dir = sub("heat");
    let needs_heat = want(4) || want(5) || want(8);
    run(4, "desk-scale heat benchmark", &mut || {
        if !needs_heat {
            return Err("not selected".into());
        }
        guarded(|| heat_benchmark(&heat_dir)).map(|(verdict, h)| {
            heat = Some(h);
            verdict
        })
    });
    if needs_heat && !want(4) {
        heat = guarded(|| heat_benchmark(&heat_dir)).ok().map(|(_, h)| h);
    }
    let with_heat = |f: fn(&HeatRun) -> Res<Verdict>| match &heat {
        Some(h) => guarded(|| f(h)),
        None => Err("heat benchmark did not produce a model".to_string()),
    };

    run(5, "noise-level estimation", &mut || with_heat(noise_estimation));
    run(6, "ABC selection", &mut || guarded(abc_selection));
    run(7, "pCN prior invariance", &mut || guarded(pcn_prior));
    run(8, "latent Gaussianization", &mut || with_heat(latent_gaussianization));
    let helm_dir = sub("helmholtz");
    run(9, "Helmholtz source localisation", &mut || guarded(|| helmholtz_sources(&helm_dir)));
    let det_dir = sub("determinism");
    run(10, "single-threaded determinism", &mut || guarded(|| determinism(&det_dir)));

    if !all {
        std::process::exit(1);
    }
}
