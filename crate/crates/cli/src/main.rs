use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use aqc_cli::{parse_config, run_experiment, Mode, RunOptions};
use clap::{Args, Parser, Subcommand};
use log::{error, info};

#[derive(Parser)]
#[command(name = "aqc", version, about = "Approximate quantum compiling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile a target state with the layered ansatz.
    CompileState(RunArgs),
    /// Compile a target unitary (Haar, file, or spin-chain evolution).
    CompileUnitary(RunArgs),
    /// Sample gradient variance of the product ansatz over a range of widths.
    VarianceScan(RunArgs),
    /// Compile spin-chain evolution with several truncation orders and seeds.
    TrotterBenchmark(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment description.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `[output] dir`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Worker threads; 1 gives bitwise-reproducible output.
    #[arg(long, env = "AQC_THREADS")]
    threads: Option<usize>,
    /// Directory with checkpoints from an earlier invocation.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Checkpoint every N iterations (0 disables).
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Stop each run after N logged iterations, leaving checkpoints behind.
    #[arg(long, hide = true)]
    stop_after: Option<u64>,
}

fn run(mode: Mode, args: RunArgs) -> anyhow::Result<()> {
    if let Some(t) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let mut config = parse_config(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    if config.mode != mode {
        bail!(
            "config mode is `{}` but the `{}` subcommand was used",
            config.mode.as_str(),
            mode.as_str()
        );
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let opts = RunOptions {
        out_dir: args.out_dir,
        resume: args.resume,
        checkpoint_every: args.checkpoint_every,
        stop_after: args.stop_after,
    };
    let outcome = run_experiment(&config, &opts)?;
    if outcome.interrupted {
        info!("stopped early; resume with --resume {}", outcome.out_dir.display());
    }
    for s in &outcome.summaries {
        println!(
            "{}: iterations={} best_cost={:e} fidelity={} converged={} stalled={}",
            s.label,
            s.iterations,
            s.best_cost,
            s.final_fidelity.map_or("-".into(), |f| f.to_string()),
            s.converged,
            s.stalled
        );
    }
    if let Some(b) = &outcome.trotter_baseline_fidelity {
        println!("trotter_baseline_fidelity={b}");
    }
    for p in &outcome.variance {
        println!(
            "n={} {} k={} variance={:e} stderr={:e}",
            p.n, p.cost_kind, p.k, p.variance, p.stderr
        );
    }
    println!("artifacts in {} (config {})", outcome.out_dir.display(), outcome.config_hash);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (mode, args) = match cli.command {
        Command::CompileState(a) => (Mode::CompileState, a),
        Command::CompileUnitary(a) => (Mode::CompileUnitary, a),
        Command::VarianceScan(a) => (Mode::VarianceScan, a),
        Command::TrotterBenchmark(a) => (Mode::TrotterBenchmark, a),
    };
    match run(mode, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
