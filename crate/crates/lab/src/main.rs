use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rwre_lab::run::{run, Command, RunOptions};
use rwre_lab::ExperimentConfig;

#[derive(Parser)]
#[command(name = "rwre", version, about = "Random walks in random environments: simulation laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Experiment config file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores); outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Built-in model name or model file; overrides the config.
    #[arg(long, global = true)]
    model: Option<String>,
    /// Exit nonzero when an acceptance threshold is violated.
    #[arg(long, global = true)]
    check: bool,
    /// Run even if the model fails its hypotheses.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Check the model's hypotheses and list witnesses.
    Hypotheses,
    /// Simulate one quenched path.
    Simulate,
    /// Regeneration times, slabs and the first-regeneration tail.
    Regen,
    /// Velocity and diffusion matrix from regeneration slabs.
    Estimate,
    /// Common regenerations of a walk pair and the joint-regeneration tail.
    Pair,
    /// Difference chain: transitions, symmetry, support inclusion and coupling decay.
    Ychain,
    /// Half-line Green function and forward recurrence times.
    Green,
    /// Variance of the quenched mean across environments.
    Variance,
    /// Intersection counts of two walks in one environment.
    Intersections,
    /// Quenched central limit diagnostic.
    Clt,
    /// Occupation sums and box exit times of the difference chain.
    Occupation,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Hypotheses => Command::Hypotheses,
            Cmd::Simulate => Command::Simulate,
            Cmd::Regen => Command::Regen,
            Cmd::Estimate => Command::Estimate,
            Cmd::Pair => Command::Pair,
            Cmd::Ychain => Command::Ychain,
            Cmd::Green => Command::Green,
            Cmd::Variance => Command::Variance,
            Cmd::Intersections => Command::Intersections,
            Cmd::Clt => Command::Clt,
            Cmd::Occupation => Command::Occupation,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(p) => match ExperimentConfig::load(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(m) = &cli.model {
        cfg.model = m.clone();
    }
    let cmd = Command::from(cli.command);
    match run(cmd, &cfg, RunOptions { check: cli.check, force: cli.force }) {
        Ok(report) => {
            for c in &report.checks {
                println!("{} {}: {}", if c.pass { "ok  " } else { "FAIL" }, c.name, c.detail);
            }
            println!("wrote {} files to {}", report.written.len(), cfg.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
