use gabi_core::experiment::{run_experiment, ExperimentConfig, Method, ProblemKind, METRICS_HEADER};
use gabi_core::inversion::{NoiseMode, PcnConfig};
use gabi_core::Error;

fn tiny(problem: ProblemKind, out: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        problem,
        methods: vec![Method::GabiAbc, Method::GabiPcn, Method::Direct, Method::GpM12, Method::GpRbf],
        seed: 11,
        output_dir: Some(out.to_path_buf()),
        deterministic: true,
        export_samples: true,
        ..ExperimentConfig::default()
    };
    cfg.data.train_samples = 12;
    cfg.data.test_cases = 3;
    cfg.data.grid = [6, 5];
    cfg.data.helmholtz.nodes = 15;
    cfg.model.hidden = 8;
    cfg.model.layers = 2;
    cfg.model.latent_dim = 3;
    cfg.model.iterations = 15;
    cfg.model.batch_size = 4;
    cfg.direct.hidden = 8;
    cfg.direct.layers = 2;
    cfg.direct.iterations = 15;
    cfg.direct.batch_size = 4;
    cfg.sampler.n_s = 300;
    cfg.sampler.n_a = 20;
    cfg.sampler.batch = 64;
    cfg.sampler.pcn = PcnConfig {
        steps: 400,
        beta: 0.3,
        burn_in: 100,
        thin: 5,
    };
    cfg.observation.count = 5;
    cfg
}

#[test]
fn heat_pipeline_writes_stable_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_experiment(&tiny(ProblemKind::Heat, a.path())).unwrap();
    run_experiment(&tiny(ProblemKind::Heat, b.path())).unwrap();

    let ma = std::fs::read_to_string(a.path().join("metrics.csv")).unwrap();
    let mb = std::fs::read_to_string(b.path().join("metrics.csv")).unwrap();
    assert_eq!(ma, mb);
    assert_eq!(ma.lines().next().unwrap(), METRICS_HEADER);
    assert_eq!(ma.lines().count(), 1 + 5);

    for name in ["loss_trace.csv", "direct_loss_trace.csv", "gabi.gabw", "direct.gabw", "timings.csv", "config.json"] {
        assert!(a.path().join(name).is_file(), "{name}");
    }
    assert!(a.path().join("fields/case0002_gp-rbf.gabd").is_file());
    assert!(a.path().join("samples_case0000_gabi-abc.csv").is_file());

    let abc = ra.row(Method::GabiAbc, "u").unwrap();
    assert_eq!(abc.cases, 3);
    assert!(abc.coverage_1.unwrap() <= abc.coverage_2.unwrap());
    assert!(ra.row(Method::Direct, "u").unwrap().coverage_1.is_none());
}

#[test]
fn pretrained_checkpoint_skips_training() {
    let first = tempfile::tempdir().unwrap();
    let mut cfg = tiny(ProblemKind::Heat, first.path());
    cfg.methods = vec![Method::GabiAbc];
    run_experiment(&cfg).unwrap();

    let second = tempfile::tempdir().unwrap();
    cfg.output_dir = Some(second.path().to_path_buf());
    cfg.checkpoint = Some(first.path().join("gabi.gabw"));
    cfg.deterministic = false;
    let report = run_experiment(&cfg).unwrap();
    let row = report.row(Method::GabiAbc, "u").unwrap();
    assert_eq!(row.train_seconds, None);
    assert!(row.pred_seconds.unwrap() > 0.0);
    assert!(!second.path().join("loss_trace.csv").exists());
    let line = std::fs::read_to_string(second.path().join("metrics.csv")).unwrap();
    let fields: Vec<&str> = line.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(fields[7], "NA");
    assert_ne!(fields[8], "NA");
}

#[test]
fn helmholtz_noise_inference_reports_sigma() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(ProblemKind::Helmholtz, dir.path());
    cfg.methods = vec![Method::GabiAbc, Method::Direct, Method::GpM32];
    cfg.observation.noise_mode = NoiseMode::InferSigma;
    let report = run_experiment(&cfg).unwrap();
    for target in ["u", "f", "sigma"] {
        assert!(report.row(Method::GabiAbc, target).is_some(), "{target}");
    }
    assert!(report.row(Method::Direct, "f").is_some());
    // The GP sees the observed channel only and gives a point estimate of σ.
    assert!(report.row(Method::GpM32, "f").is_none());
    assert!(report.row(Method::GpM32, "sigma").unwrap().coverage_1.is_none());
    for case in &report.cases {
        assert!(case.source_support.as_ref().is_some_and(|s| !s.is_empty()));
    }
}

#[test]
fn configuration_errors_are_not_stage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(ProblemKind::Heat, dir.path());
    cfg.sampler.n_a = cfg.sampler.n_s + 1;
    assert!(matches!(run_experiment(&cfg), Err(Error::Config(_))));
}
