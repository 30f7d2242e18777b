mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "lls-lab",
    version,
    about = "Simulation lab for linear latent structure mixtures"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "LLS_LAB_JOBS")]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Pairwise orthogonality verdicts over a grid of latent points.
    Diagnose,
    /// Posterior means for each outcome sequence in a CSV file.
    Estimate {
        #[arg(long)]
        outcomes: Option<PathBuf>,
    },
    /// Convergence curve of the pushforward estimator.
    Converge,
    /// Covariance block and rank test.
    Identify,
    /// Built-in scenarios.
    Scenario {
        #[command(subcommand)]
        action: ScenarioAction,
    },
}

#[derive(Subcommand)]
enum ScenarioAction {
    List,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    if let Command::Scenario {
        action: ScenarioAction::List,
    } = cli.command
    {
        for (id, desc) in lls_core::scenarios::catalog() {
            println!("{id}\t{desc}");
        }
        return Ok(0);
    }
    let Some(path) = cli.config.as_deref() else {
        anyhow::bail!("--config is required for this subcommand");
    };
    let cfg = config::ExperimentConfig::load(path)?;
    let base = path.parent().map(PathBuf::from).unwrap_or_default();
    let ctx = commands::Context {
        seed: cli.seed.or(cfg.seed).unwrap_or(0),
        out: cli
            .out
            .clone()
            .or_else(|| cfg.out.as_ref().map(|o| config::resolve(&base, o)))
            .unwrap_or_else(|| PathBuf::from(".")),
        base,
    };
    std::fs::create_dir_all(&ctx.out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.unwrap_or(0))
        .build()?;
    pool.install(|| match cli.command {
        Command::Diagnose => commands::diagnose(&cfg, &ctx),
        Command::Estimate { outcomes } => commands::estimate(&cfg, &ctx, outcomes),
        Command::Converge => commands::converge(&cfg, &ctx),
        Command::Identify => commands::identify(&cfg, &ctx),
        Command::Scenario { .. } => unreachable!(),
    })
}
