//! Command-line entry point: argument parsing, config assembly, study
//! dispatch, and output writing.
//!
//! Exit codes: 0 on success, 2 for configuration or usage errors, 3 when a
//! run blows up numerically, 1 for anything else.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use clap::{Args, Parser, Subcommand};
use ndarray::ArrayView2;

use crate::error::{Error, Result};

use super::io::{rows_to_csv, save_reference, write_csv, write_manifest};
use super::studies::observation_interval;
use super::{
    generate_reference, generate_twin_data, run_consistency_study, run_cost_accuracy_study,
    run_variance_decay_study, ExperimentConfig, StudyResult,
};

#[derive(Debug, Parser)]
#[command(
    name = "mletpf",
    version,
    about = "Multilevel ensemble transform particle filter experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score seamless coupling against an exact Gaussian posterior
    Consistency(StudyArgs),
    /// Measure coarse/fine difference variance decay across levels
    VarianceDecay(StudyArgs),
    /// Measure forward-model cost (and RMSE) against accuracy targets
    CostAccuracy(StudyArgs),
    /// Generate and cache a high-accuracy reference run
    Reference(StudyArgs),
    /// Generate twin-experiment truth and observations
    Twin(StudyArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Consistency(_) => "consistency",
            Command::VarianceDecay(_) => "variance-decay",
            Command::CostAccuracy(_) => "cost-accuracy",
            Command::Reference(_) => "reference",
            Command::Twin(_) => "twin",
        }
    }

    fn args(&self) -> &StudyArgs {
        match self {
            Command::Consistency(a)
            | Command::VarianceDecay(a)
            | Command::CostAccuracy(a)
            | Command::Reference(a)
            | Command::Twin(a) => a,
        }
    }
}

#[derive(Debug, Args)]
struct StudyArgs {
    /// Forward model: lorenz63, lorenz96, or linear
    #[arg(long)]
    model: Option<String>,

    /// Accuracy target in (0, 1); repeat the flag for several
    #[arg(long = "epsilon")]
    epsilons: Vec<f64>,

    /// Estimator variant: seamless, standard, or single; repeatable
    #[arg(long = "mode")]
    modes: Vec<String>,

    /// Localisation radius in grid points (omit for global couplings)
    #[arg(long)]
    rloc: Option<usize>,

    /// Number of assimilation steps
    #[arg(long)]
    steps: Option<usize>,

    /// Independent repetitions per configuration point
    #[arg(long)]
    reps: Option<usize>,

    /// Master seed; every random stream in the run derives from it
    #[arg(long)]
    seed: Option<u64>,

    /// JSON configuration file; command-line flags override its fields
    #[arg(long)]
    config: Option<std::path::PathBuf>,

    /// Output directory for results.csv and manifest.json
    #[arg(long)]
    out: Option<std::path::PathBuf>,
}

fn build_config(name: &str, args: &StudyArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            serde_json::from_str::<ExperimentConfig>(&text)
                .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    cfg.experiment = name.into();
    if let Some(model) = &args.model {
        cfg.model = model.clone();
    }
    if !args.epsilons.is_empty() {
        cfg.epsilons = args.epsilons.clone();
    }
    if !args.modes.is_empty() {
        cfg.modes = args.modes.clone();
    }
    if args.rloc.is_some() {
        cfg.rloc = args.rloc;
    }
    if let Some(steps) = args.steps {
        cfg.steps = steps;
    }
    if let Some(reps) = args.reps {
        cfg.reps = reps;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.out.is_some() {
        cfg.out = args.out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn init_threads() {
    if let Ok(value) = std::env::var("MLETPF_THREADS") {
        if let Ok(n) = value.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn write_study_outputs(cfg: &ExperimentConfig, result: &StudyResult) -> Result<()> {
    match &cfg.out {
        Some(dir) => {
            write_csv(&dir.join("results.csv"), &result.rows)?;
            write_manifest(&dir.join("manifest.json"), cfg)?;
            println!(
                "wrote {} rows to {}",
                result.rows.len(),
                dir.join("results.csv").display()
            );
        }
        None => print!("{}", rows_to_csv(&result.rows)),
    }
    Ok(())
}

fn write_states_csv(path: &Path, dt: f64, states: ArrayView2<'_, f64>) -> Result<()> {
    let mut text = String::from("time");
    for k in 0..states.ncols() {
        text.push_str(&format!(",x{k}"));
    }
    text.push('\n');
    for (n, row) in states.rows().into_iter().enumerate() {
        text.push_str(&format!("{}", (n + 1) as f64 * dt));
        for v in row {
            text.push_str(&format!(",{v}"));
        }
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

fn run_command(command: &Command) -> Result<()> {
    let cfg = build_config(command.name(), command.args())?;
    match command {
        Command::Consistency(_) => write_study_outputs(&cfg, &run_consistency_study(&cfg)?),
        Command::VarianceDecay(_) => write_study_outputs(&cfg, &run_variance_decay_study(&cfg)?),
        Command::CostAccuracy(_) => write_study_outputs(&cfg, &run_cost_accuracy_study(&cfg)?),
        Command::Reference(_) => {
            let dir = cfg.out.clone().ok_or_else(|| {
                Error::Config("the reference command needs --out for the cache".into())
            })?;
            let reference = generate_reference(&cfg)?;
            let path = save_reference(&dir, &reference)?;
            write_manifest(&dir.join("manifest.json"), &cfg)?;
            println!("wrote reference {} to {}", reference.config_hash, path.display());
            Ok(())
        }
        Command::Twin(_) => {
            let dir = cfg.out.clone().ok_or_else(|| {
                Error::Config("the twin command needs --out for the data files".into())
            })?;
            let spec = cfg.model_spec()?;
            let dt = observation_interval(&spec);
            let r = ndarray::Array2::eye(spec.dim()) * 0.25;
            let (truth, obs) =
                generate_twin_data(&spec, cfg.reference_level, dt, cfg.steps, &r, cfg.seed)?;
            fs::create_dir_all(&dir)?;
            write_states_csv(&dir.join("truth.csv"), dt, truth.view())?;
            write_states_csv(&dir.join("observations.csv"), dt, obs.observations())?;
            write_manifest(&dir.join("manifest.json"), &cfg)?;
            println!("wrote {} truth/observation pairs to {}", obs.len(), dir.display());
            Ok(())
        }
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::InvalidInput(_)
        | Error::DimensionMismatch(_)
        | Error::InvalidMarginal(_) => 2,
        Error::NumericalBlowup { .. } => 3,
        _ => 1,
    }
}

/// Parses arguments, runs the requested study, and returns the process exit
/// code.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 2 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    init_threads();
    match run_command(&cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}
