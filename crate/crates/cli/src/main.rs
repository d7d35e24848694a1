use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use cogradar::harness::{export_results, run_monte_carlo, Experiment, ExperimentConfig};
use cogradar::policies::PolicyKind;

#[derive(Parser)]
#[command(name = "cogradar", version, about = "Cognitive MIMO radar tracking experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a configuration file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Parse and check a configuration file without running it.
    ValidateConfig {
        path: PathBuf,
    },
    /// Study case 1: manoeuvring target at -45 degrees.
    Case1(PresetArgs),
    /// Study case 2: faster, steadier target moving away.
    Case2(PresetArgs),
}

#[derive(Args)]
struct PresetArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long)]
    dump_config: bool,
}

#[derive(Args, Default)]
struct Overrides {
    /// Policies to run (repeatable): pomcp, particle_filter, oracle, orthogonal.
    #[arg(long = "policy")]
    policies: Vec<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// 25 trials with 2000 simulations and particles.
    #[arg(long)]
    desk: bool,
    #[arg(long)]
    t_max: Option<usize>,
    #[arg(long)]
    n_sim: Option<usize>,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
}

impl Overrides {
    fn apply(&self, mut cfg: ExperimentConfig) -> Result<ExperimentConfig> {
        if self.desk {
            cfg = cfg.desk();
        }
        if !self.policies.is_empty() {
            cfg.policies = self
                .policies
                .iter()
                .flat_map(|p| p.split(','))
                .map(|p| p.parse::<PolicyKind>())
                .collect::<Result<_, _>>()?;
        }
        if let Some(n) = self.trials {
            cfg.n_trials = n;
        }
        if let Some(s) = self.seed {
            cfg.base_seed = s;
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        if let Some(out) = &self.out {
            cfg.output = out.clone();
        }
        if let Some(t) = self.t_max {
            cfg.t_max = t;
        }
        if let Some(n) = self.n_sim {
            cfg.pomcp.n_sim = n;
        }
        if let Some(n) = self.particles {
            cfg.pomcp.n_particles = n;
        }
        if let Some(d) = self.max_depth {
            cfg.pomcp.max_depth = Some(d);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cfg: ExperimentConfig) -> Result<()> {
    let out = cfg.output.clone();
    let started = Instant::now();
    let exp = Experiment::new(cfg)?;
    let result = run_monte_carlo(&exp)?;
    export_results(&out, &exp, &result)
        .with_context(|| format!("exporting results to {}", out.display()))?;
    let t_max = exp.config.t_max;
    println!(
        "{}: {} trials, {} steps, {:.1} s -> {}",
        exp.config.name,
        exp.config.n_trials,
        t_max,
        started.elapsed().as_secs_f64(),
        out.display()
    );
    println!("{:<16} {:>8} {:>8} {:>12}", "policy", "mean_pd", "last50", "rmse_pos@T");
    for m in &result.metrics {
        let last = m.rows.last().and_then(|r| r.rmse_pos);
        println!(
            "{:<16} {:>8.3} {:>8.3} {:>12}",
            m.policy.name(),
            m.mean_pd(1..=t_max),
            m.mean_pd(t_max.saturating_sub(49).max(1)..=t_max),
            last.map_or_else(|| "-".to_string(), |v| format!("{v:.3}")),
        );
    }
    Ok(())
}

fn validate(path: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(path)?;
    println!(
        "{}: ok ({} trials x {} steps, policies: {})",
        path.display(),
        cfg.n_trials,
        cfg.t_max,
        cfg.policies
            .iter()
            .map(|p| p.name())
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(())
}

fn preset(base: ExperimentConfig, args: &PresetArgs) -> Result<()> {
    let cfg = args.overrides.apply(base)?;
    if args.dump_config {
        print!("{}", cfg.to_toml_string());
        return Ok(());
    }
    run(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run { config, overrides } => ExperimentConfig::load(config)
            .map_err(anyhow::Error::from)
            .and_then(|cfg| overrides.apply(cfg))
            .and_then(run),
        Command::ValidateConfig { path } => validate(path),
        Command::Case1(args) => preset(ExperimentConfig::case1(), args),
        Command::Case2(args) => preset(ExperimentConfig::case2(), args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
