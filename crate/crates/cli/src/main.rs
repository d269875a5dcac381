use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use rscm::harness::{
    self, ClassificationConfig, Classifier, ExperimentConfig, SetupChoice, SyntheticTask,
};
use rscm::shrink::Method;
use rscm::synth::Setup;
use rscm::{data, RscmError};

#[derive(Parser)]
#[command(
    name = "rscm",
    version,
    about = "Coupled shrinkage covariance estimation and experiments"
)]
struct Cli {
    /// Worker threads for Monte Carlo trials (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo NMSE of the estimators on a simulation setup.
    Simulate(SimulateArgs),
    /// Train/test classification benchmark with regularized discriminant analysis.
    Classify(ClassifyArgs),
    /// Theoretical NMSE surface of one class on a grid.
    Surface(SurfaceArgs),
    /// Regularized covariance estimates of a labeled CSV as JSON.
    Estimate(EstimateArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// A, B, C, D or a JSON file describing custom populations.
    #[arg(long)]
    setup: String,
    #[arg(long, default_value_t = 200)]
    p: usize,
    #[arg(long, conflicts_with = "full_scale")]
    trials: Option<usize>,
    /// Use the full trial count instead of the desk-scale default.
    #[arg(long)]
    full_scale: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "SCM,POOL,POLY,POLYs")]
    methods: Vec<String>,
    /// Add a mean wall time column (makes output non-reproducible).
    #[arg(long)]
    wall_time: bool,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Labeled CSV; a synthetic two-class task is used when omitted.
    #[arg(long, requires = "label_col")]
    data: Option<PathBuf>,
    #[arg(long)]
    label_col: Option<String>,
    #[arg(long, default_value_t = 0.5)]
    split: f64,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "POLY,POLY-Ave,POLYs-Ave,10-CV"
    )]
    methods: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SurfaceArgs {
    /// A, B, C or a JSON file describing custom populations.
    #[arg(long)]
    setup: String,
    /// 1-based class index.
    #[arg(long)]
    class: usize,
    #[arg(long, default_value_t = 0.05)]
    step: f64,
    #[arg(long, default_value_t = 200)]
    p: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    label_col: String,
    #[arg(long, default_value = "POLY")]
    method: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, RscmError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn setup_choice(name: &str, p: usize) -> Result<SetupChoice, RscmError> {
    match name.parse::<Setup>() {
        Ok(s) => Ok(SetupChoice::Preset(s)),
        Err(_) if Path::new(name).is_file() => {
            let (name, populations) = harness::load_custom_setup(name, p)?;
            Ok(SetupChoice::Custom { name, populations })
        }
        Err(e) => Err(e),
    }
}

fn parse_all<T: std::str::FromStr<Err = RscmError>>(items: &[String]) -> Result<Vec<T>, RscmError> {
    items
        .iter()
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse())
        .collect()
}

fn simulate(args: SimulateArgs) -> Result<(), RscmError> {
    let trials = match (args.trials, args.full_scale) {
        (Some(t), _) => t,
        (None, true) => harness::FULL_TRIALS,
        (None, false) => harness::DESK_TRIALS,
    };
    let cfg = ExperimentConfig {
        setup: setup_choice(&args.setup, args.p)?,
        p: args.p,
        trials,
        seed: args.seed,
        methods: parse_all(&args.methods)?,
        wall_time: args.wall_time,
    };
    let rows = harness::run_simulation(&cfg)?;
    for r in &rows {
        info!(
            "{} {} class {}: {:.4} ({:.4})",
            r.setup, r.method, r.class, r.nmse_mean, r.nmse_std
        );
    }
    let mut out = output(args.out.as_deref())?;
    harness::write_simulation_csv(&rows, &mut out)?;
    out.flush()?;
    Ok(())
}

fn classify(args: ClassifyArgs) -> Result<(), RscmError> {
    let dataset = match (&args.data, &args.label_col) {
        (Some(path), Some(label)) => data::load_csv(path, label)?,
        _ => SyntheticTask::default().generate(args.seed)?,
    };
    let cfg = ClassificationConfig {
        classifiers: parse_all::<Classifier>(&args.methods)?,
        split: args.split,
        reps: args.reps,
        seed: args.seed,
    };
    let report = harness::run_classification(&dataset, &cfg)?;
    for r in &report.rows {
        info!(
            "{}: accuracy {:.4}, median time {:.3e}s",
            r.method, r.mean_accuracy, r.median_wall_time
        );
    }
    let mut out = output(args.out.as_deref())?;
    harness::write_classification_csv(&report.rows, &mut out)?;
    out.flush()?;
    Ok(())
}

fn surface(args: SurfaceArgs) -> Result<(), RscmError> {
    if args.class == 0 {
        return Err(RscmError::Input("class index is 1-based".into()));
    }
    let dump = match setup_choice(&args.setup, args.p)? {
        SetupChoice::Preset(s) => harness::dump_surface(s, args.class - 1, args.step, args.p)?,
        SetupChoice::Custom { populations, .. } => {
            harness::surface_from_populations(&populations, args.class - 1, args.step)?
        }
    };
    info!(
        "optimum alpha {:.7} beta {:.7} nmse {:.7}",
        dump.optimum.alpha,
        dump.optimum.beta,
        dump.optimum_nmse()
    );
    let mut out = output(args.out.as_deref())?;
    harness::write_surface_csv(&dump, &mut out)?;
    out.flush()?;
    Ok(())
}

fn estimate(args: EstimateArgs) -> Result<(), RscmError> {
    let dataset = data::load_csv(&args.data, &args.label_col)?;
    let method: Method = args.method.parse()?;
    let report = harness::estimate_dataset(&dataset, method)?;
    let mut out = output(args.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &report)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Classify(a) => classify(a),
        Command::Surface(a) => surface(a),
        Command::Estimate(a) => estimate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
