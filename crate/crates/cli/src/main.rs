use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qpat_core::config::{ExperimentConfig, ExperimentKind};
use qpat_core::experiment::{run_experiment, sha256_hex};
use qpat_core::Error;

/// Output directory override, used when `--out` is not given.
const OUT_DIR_ENV: &str = "QPAT_OUT_DIR";

#[derive(Parser)]
#[command(name = "qpat", version, about = "Optical inversion experiments for photoacoustic tomography")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment named in the config.
    Run(RunArgs),
    /// Simulate data for the config's phantom and sources.
    Forward(RunArgs),
    /// Compare adjoint gradients with finite differences.
    Gradcheck(RunArgs),
    /// Tikhonov reconstructions over a decreasing noise sequence.
    Convergence(RunArgs),
    /// Print a summary of the config without running it.
    Info {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: `QPAT_OUT_DIR`, then `output_dir`, then `out/<kind>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `[experiment] seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn out_dir(args: &RunArgs, cfg: &ExperimentConfig) -> PathBuf {
    if let Some(o) = &args.out {
        return o.clone();
    }
    if let Some(o) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(o);
    }
    match &cfg.experiment.output_dir {
        Some(o) => PathBuf::from(o),
        None => Path::new("out").join(cfg.kind().name()),
    }
}

fn execute(args: &RunArgs, force: Option<ExperimentKind>) -> Result<(), Error> {
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("--threads: {e}")))?;
    }
    let (mut cfg, text) = ExperimentConfig::load(&args.config)?;
    if let Some(kind) = force {
        if cfg.kind() != kind {
            cfg.experiment.kind = kind;
            cfg.validate()
                .map_err(|e| Error::Config(format!("{}: {e}", args.config.display())))?;
        }
    }
    if let Some(s) = args.seed {
        cfg.experiment.seed = s;
    }
    let dir = out_dir(args, &cfg);
    let outcome = run_experiment(&cfg, &text, &dir)?;
    println!("{} -> {}", cfg.kind().name(), dir.display());
    for (k, v) in &outcome.metrics {
        println!("  {k} = {v:e}");
    }
    Ok(())
}

fn info(path: &Path) -> Result<(), Error> {
    let (cfg, text) = ExperimentConfig::load(path)?;
    let g = &cfg.grid;
    println!("config      {}", path.display());
    println!("sha256      {}", sha256_hex(text.as_bytes()));
    println!("kind        {}", cfg.kind().name());
    if let Some(s) = cfg.experiment.scheme {
        println!("scheme      {s:?}");
    }
    println!("seed        {}", cfg.experiment.seed);
    println!("grid        {}x{} on {}x{}", g.nx, g.ny, g.lx, g.ly);
    println!("ordinates   {} (g = {})", cfg.quadrature.ns, cfg.quadrature.g);
    println!(
        "unknowns    {} radiance, {} coefficients",
        g.nx * g.ny * cfg.quadrature.ns,
        2 * g.nx * g.ny
    );
    println!("bounds      [{}, {}]", cfg.bounds.mu_lo, cfg.bounds.mu_hi);
    println!("sources     {}", cfg.sources.len());
    if let Some(n) = cfg.noise {
        println!("noise level {}", n.level);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => execute(a, None),
        Command::Forward(a) => execute(a, Some(ExperimentKind::Forward)),
        Command::Gradcheck(a) => execute(a, Some(ExperimentKind::Gradcheck)),
        Command::Convergence(a) => execute(a, Some(ExperimentKind::Convergence)),
        Command::Info { config } => info(config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
