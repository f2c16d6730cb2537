use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use stlab::{run, Command, ExperimentConfig, RunError};

#[derive(Parser)]
#[command(name = "stlab", version, about = "Optimal-potential and turnpike experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// JSON experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    /// Worker threads; defaults to the number of available cores.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Multistart optimization and registry of optima.
    Optimize,
    /// Shell sampling of the spectral gap around the optima.
    Stability,
    /// Quantitative bathtub ratios for the optimal eigenfunction.
    BathtubCheck,
    /// Finite-difference shape derivatives at the optimum and an off-center ball.
    ShapeCheck,
    /// Optimal control at the longest configured horizon.
    Control,
    /// Optimal control over every configured horizon.
    TurnpikeSweep,
    /// Everything above, sharing one registry.
    All,
    /// Check the config and print diagnostics.
    Validate,
}

fn load(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let path = cli.config.as_ref().context("--config is required")?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg = ExperimentConfig::from_json(&text).map_err(|d| anyhow::anyhow!("{d}"))?;
    if let Some(o) = &cli.output {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let command = match cli.command {
        Cmd::Validate => {
            let diags = cfg.validate();
            for d in &diags {
                eprintln!("{d}");
            }
            return ExitCode::from(if diags.is_empty() { 0 } else { 1 });
        }
        Cmd::Optimize => Command::Optimize,
        Cmd::Stability => Command::Stability,
        Cmd::BathtubCheck => Command::BathtubCheck,
        Cmd::ShapeCheck => Command::ShapeCheck,
        Cmd::Control => Command::Control,
        Cmd::TurnpikeSweep => Command::TurnpikeSweep,
        Cmd::All => Command::All,
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| run(command, &cfg)) {
        Ok(out) => {
            for line in &out.summary {
                println!("{line}");
            }
            println!("wrote {} files and {}", out.files.len(), out.manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            match &e {
                RunError::Invalid(diags) => {
                    for d in diags {
                        eprintln!("invalid config: {d}");
                    }
                }
                RunError::Numerical(err) => eprintln!("numerical failure: {err:#}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
