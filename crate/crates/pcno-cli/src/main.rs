//! Command-line orchestration: generate, preprocess, train, evaluate,
//! gradient-check, benchmark, inspect.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod commands;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "pcno", version, about = "Point-cloud neural operator toolkit")]
struct Cli {
    /// Worker threads (default: PCNO_THREADS env var, else all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProblemArg {
    Advdiff,
    Darcy,
    Burgers,
}

#[derive(Clone, Copy, ValueEnum)]
enum DensityArg {
    Uniform,
    Pointcloud,
}

impl DensityArg {
    fn to_mode(self) -> pcno_core::geometry::DensityMode {
        match self {
            DensityArg::Uniform => pcno_core::geometry::DensityMode::Uniform,
            DensityArg::Pointcloud => pcno_core::geometry::DensityMode::PointCloud,
        }
    }
}

#[derive(Args)]
struct GenArgs {
    /// Which generator to run.
    #[arg(long, value_enum)]
    problem: ProblemArg,
    /// Number of samples.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset directory.
    #[arg(long)]
    out: std::path::PathBuf,
    /// Grid points per side (darcy only).
    #[arg(long, default_value_t = 65)]
    grid_n: usize,
    /// Spatial resolution (burgers only).
    #[arg(long, default_value_t = 256)]
    resolution: usize,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Dataset directory to augment.
    #[arg(long)]
    data: std::path::PathBuf,
    #[arg(long, value_enum, default_value = "uniform")]
    density_mode: DensityArg,
    /// Intrinsic dimension d' for the gradient stencils.
    #[arg(long)]
    d_prime: usize,
    /// Relative singular-value cutoff.
    #[arg(long, default_value_t = 1e-8)]
    sv_rel_tol: f64,
    /// Output directory (default: rewrite in place).
    #[arg(long)]
    out: Option<std::path::PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training configuration (JSON).
    #[arg(long)]
    config: std::path::PathBuf,
    /// Preprocessed training dataset.
    #[arg(long)]
    data: std::path::PathBuf,
    /// Preprocessed test dataset (default: split off --test-frac).
    #[arg(long)]
    test_data: Option<std::path::PathBuf>,
    /// Held-out fraction when no test set is given.
    #[arg(long, default_value_t = 0.2)]
    test_frac: f64,
    #[arg(long)]
    out: std::path::PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted-path config overrides, e.g. model.width=64 (repeatable).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: std::path::PathBuf,
    /// Preprocessed dataset to evaluate on.
    #[arg(long)]
    data: std::path::PathBuf,
    #[arg(long)]
    out: std::path::PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 5)]
    seed: u64,
    /// Optional directory for the JSON report.
    #[arg(long)]
    out: Option<std::path::PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated cloud sizes.
    #[arg(long, default_value = "2000,4000,8000,16000")]
    sizes: String,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long, default_value_t = 8)]
    k_max: usize,
    /// Timed repetitions per size.
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<std::path::PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    /// Dataset directory or checkpoint file.
    #[arg(long)]
    path: std::path::PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset with one of the built-in problem generators.
    Gen(GenArgs),
    /// Attach quadrature features and gradient weights to a dataset.
    Preprocess(PreprocessArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Finite-difference audit of the backward rules.
    Gradcheck(GradcheckArgs),
    /// Inference wall-time scaling across cloud sizes.
    Bench(BenchArgs),
    /// Print a dataset manifest or checkpoint summary.
    Inspect(InspectArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let threads = cli.threads.or_else(|| {
        std::env::var("PCNO_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }

    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Bench(a) => commands::bench(a),
        Command::Inspect(a) => commands::inspect(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
