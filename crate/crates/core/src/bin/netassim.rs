use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use netassim::error::Error;
use netassim::harness::{load_config, run_experiment, ExperimentConfig, ExperimentKind, ModelChoice};

#[derive(Parser)]
#[command(name = "netassim", version, about = "Hyperparameter estimation experiments for network dynamical systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Identifiability sweep over perturbation amplitudes.
    Sweep(Common),
    /// EnKF estimation error against population size.
    Scale(Common),
    /// Fitted convergence rates.
    Rate(Common),
    /// Forward simulation at the truth.
    Simulate(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Sis,
    Snn,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON). Optional for `simulate`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed, overriding the config's `base_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 picks one per core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Model, overriding the config's `model`.
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
}

fn prepare(kind: ExperimentKind, args: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &args.config {
        Some(path) if !path.is_file() => {
            return Err(Error::InvalidConfig(format!("--config {}: no such file", path.display())));
        }
        Some(path) => load_config(path)?,
        None if kind == ExperimentKind::Simulate => {
            let model = match args.model {
                Some(ModelArg::Snn) => ModelChoice::Snn,
                _ => ModelChoice::Sis,
            };
            ExperimentConfig::default_simulation(model)
        }
        None => return Err(Error::InvalidConfig("missing required flag --config <path>".into())),
    };
    if cfg.kind != kind {
        return Err(Error::InvalidConfig(format!(
            "config {} declares kind `{}`, not `{}`",
            args.config.as_deref().map(|p| p.display().to_string()).unwrap_or_default(),
            cfg.kind.name(),
            kind.name()
        )));
    }
    if let Some(seed) = args.seed {
        cfg.base_seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(model) = args.model {
        let new = match model {
            ModelArg::Sis => ModelChoice::Sis,
            ModelArg::Snn => ModelChoice::Snn,
        };
        cfg.model = new;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(kind: ExperimentKind, args: &Common) -> Result<(), Error> {
    let cfg = prepare(kind, args)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start {} threads: {e}", args.threads)))?;
    let progress = |msg: &str| eprintln!("[netassim] {msg}");
    let output = pool.install(|| run_experiment(&cfg, &progress))?;
    for path in output.persist(&cfg.output_dir)? {
        eprintln!("[netassim] wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (kind, args) = match &cli.command {
        Command::Sweep(a) => (ExperimentKind::Identifiability, a),
        Command::Scale(a) => (ExperimentKind::Scaling, a),
        Command::Rate(a) => (ExperimentKind::Rate, a),
        Command::Simulate(a) => (ExperimentKind::Simulate, a),
    };
    match execute(kind, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("netassim: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
