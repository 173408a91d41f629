//! `gabi`: generate data, train, infer and evaluate from a JSON config.
//!
//! Exit status is 0 on success, 1 when a pipeline stage fails and 2 for
//! configuration or usage errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gabi_core::experiment::{
    generate_test_cases, generate_training_data, infer_case_with, metrics_csv, metrics_rows, prepare_models,
    run_experiment, ExperimentConfig, Method,
};
use gabi_core::forward::{read_dataset, write_dataset};
use gabi_core::inversion::write_ensemble;
use gabi_core::neural::{save_checkpoint, train_autoencoder};
use gabi_core::rng::derive_seed;
use gabi_core::Error;

#[derive(Parser)]
#[command(name = "gabi", version, about = "Autoencoder priors for Bayesian inversion on meshes")]
struct Cli {
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads. `1` also makes `metrics.csv` reproducible byte for byte.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineKind {
    Direct,
    GpM12,
    GpM32,
    GpRbf,
}

impl BaselineKind {
    fn method(self) -> Method {
        match self {
            BaselineKind::Direct => Method::Direct,
            BaselineKind::GpM12 => Method::GpM12,
            BaselineKind::GpM32 => Method::GpM32,
            BaselineKind::GpRbf => Method::GpRbf,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the training set and write it as a GABD container.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the autoencoder on a GABD training set.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the loss trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Sample the posterior for one held-out case.
    Infer {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        case_id: usize,
        /// Directory for the posterior ensemble files.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one baseline over the held-out cases.
    Baseline {
        #[arg(long, value_enum)]
        kind: BaselineKind,
        #[arg(long)]
        config: PathBuf,
        /// Training set for the direct map.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the configured experiment end to end.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Number of held-out test cases.
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Stage { source, .. } => exit_code(source),
        _ => 1,
    }
}

fn load_config(path: &Path, cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.threads == Some(1) {
        cfg.deterministic = true;
    }
    Ok(cfg)
}

fn print_table(format: Format, csv: &str) {
    match format {
        Format::Csv => print!("{csv}"),
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Gen { config, out } => {
            let cfg = load_config(config, cli)?;
            cfg.validate()?;
            let ds = generate_training_data(&cfg)?;
            write_dataset(&ds, out)?;
            log::info!("wrote {} samples to {}", ds.len(), out.display());
        }
        Command::Train {
            config,
            data,
            out,
            trace,
        } => {
            let cfg = load_config(config, cli)?;
            cfg.model.validate()?;
            let ds = read_dataset(data).map_err(|e| Error::Config(format!("{}: {e}", data.display())))?;
            let (ckpt, losses) = train_autoencoder(&ds, &cfg.model, derive_seed(cfg.seed, "gabi"))?;
            save_checkpoint(&ckpt, out)?;
            if let Some(path) = trace {
                std::fs::write(path, losses.to_csv())?;
            }
            if let Some(last) = losses.records.last() {
                log::info!("final loss {:.4e} (recon {:.4e}, mmd {:.4e})", last.loss, last.recon, last.mmd);
            }
        }
        Command::Infer {
            config,
            ckpt,
            case_id,
            out,
        } => {
            let mut cfg = load_config(config, cli)?;
            cfg.checkpoint = Some(ckpt.clone());
            cfg.methods.retain(|m| m.uses_autoencoder());
            if cfg.methods.is_empty() {
                cfg.methods.push(Method::GabiAbc);
            }
            if *case_id >= cfg.data.test_cases {
                return Err(Error::Config(format!(
                    "case {case_id} out of range for {} test cases",
                    cfg.data.test_cases
                )));
            }
            cfg.validate()?;
            let train = generate_training_data(&cfg)?;
            let models = prepare_models(&cfg, &train, None)?;
            let case = generate_test_cases(&cfg)?.swap_remove(*case_id);
            let result = infer_case_with(&cfg, &models, &case, out.is_some())?;
            if let Some(dir) = out {
                std::fs::create_dir_all(dir)?;
                for o in &result.outcomes {
                    if let Some(ens) = &o.ensemble {
                        let stem = format!("case{case_id:04}_{}", o.method.label());
                        write_ensemble(
                            ens,
                            &case.mesh,
                            &dir.join(format!("{stem}.gabd")),
                            &dir.join(format!("{stem}.json")),
                        )?;
                    }
                }
            }
            let rows = metrics_rows(&cfg, &models, std::slice::from_ref(&case), std::slice::from_ref(&result))?;
            print_table(cli.format, &metrics_csv(&rows, !cfg.deterministic));
        }
        Command::Baseline {
            kind,
            config,
            data,
            out,
        } => {
            let mut cfg = load_config(config, cli)?;
            cfg.methods = vec![kind.method()];
            if data.is_some() {
                cfg.train_data = data.clone();
            }
            if out.is_some() {
                cfg.output_dir = out.clone();
            }
            let report = run_experiment(&cfg)?;
            print_table(cli.format, &metrics_csv(&report.rows, !cfg.deterministic));
        }
        Command::Eval { config, runs, out } => {
            let mut cfg = load_config(config, cli)?;
            if let Some(n) = runs {
                cfg.data.test_cases = *n;
            }
            if out.is_some() {
                cfg.output_dir = out.clone();
            }
            let report = run_experiment(&cfg)?;
            print_table(cli.format, &metrics_csv(&report.rows, !cfg.deterministic));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure the thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
