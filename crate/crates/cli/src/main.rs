use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use nbbm_core::density::{DensityShape, DensitySpec};
use nbbm_core::harness::{run_experiment, ExperimentConfig, ExperimentRegistry, Report};

#[derive(Parser)]
#[command(version, about = "Branching Brownian motion with selection: barriers, free boundaries and experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for tables and summary.json, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Initial density, JSON spec or `x,value` CSV, overriding the config.
    #[arg(long)]
    density: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the N-BBM or plain BBM family laws.
    Simulate(Common),
    /// Evolve deterministic and stochastic barriers, or check operator properties.
    Barriers(Common),
    /// Squeeze the hydrodynamic limit between the barriers (also gap, monotone, sandwich, hydro).
    Squeeze(Common),
    /// Coupled lower barrier, N-BBM and upper barrier.
    Couple(Common),
    /// Traveling-wave profiles.
    Wave(Common),
    /// Hitting-time identity against a moving boundary.
    Hitting(Common),
    /// Front speed of the N-BBM.
    Speed(Common),
    /// Run whatever experiment the config names.
    Run(Common),
    /// List the registered experiments.
    List,
}

impl Command {
    /// Experiment kinds the subcommand accepts; the first is its default.
    fn kinds(&self) -> &'static [&'static str] {
        match self {
            Command::Simulate(_) => &["simulate", "family"],
            Command::Barriers(_) => &["barriers", "operators"],
            Command::Squeeze(_) => &["squeeze", "gap", "monotone", "sandwich", "hydro"],
            Command::Couple(_) => &["couple"],
            Command::Wave(_) => &["wave"],
            Command::Hitting(_) => &["hitting"],
            Command::Speed(_) => &["speed"],
            Command::Run(_) | Command::List => &[],
        }
    }

    fn common(&self) -> Option<&Common> {
        match self {
            Command::Simulate(c)
            | Command::Barriers(c)
            | Command::Squeeze(c)
            | Command::Couple(c)
            | Command::Wave(c)
            | Command::Hitting(c)
            | Command::Speed(c)
            | Command::Run(c) => Some(c),
            Command::List => None,
        }
    }
}

fn load_density(path: &Path) -> Result<DensitySpec> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        return Ok(DensitySpec::new(DensityShape::File {
            path: path.to_path_buf(),
        }));
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing density spec {}", path.display()))
}

fn load_config(cmd: &Command, common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)
        .with_context(|| format!("loading config {}", common.config.display()))?;
    // density files in a config are relative to the config itself
    if let DensityShape::File { path } = &mut cfg.density.shape {
        if path.is_relative() {
            if let Some(dir) = common.config.parent() {
                *path = dir.join(&*path);
            }
        }
    }
    if let Some(d) = &common.density {
        cfg.density = load_density(d)?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = Some(o.clone());
    }
    let kinds = cmd.kinds();
    if !kinds.is_empty() {
        if cfg.kind.is_empty() {
            cfg.kind = kinds[0].to_string();
        } else if !kinds.contains(&cfg.kind.as_str()) {
            bail!("config kind '{}' does not belong to this subcommand (expected one of {kinds:?})", cfg.kind);
        }
    } else if cfg.kind.is_empty() {
        bail!("config has no experiment kind");
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_report(report: &Report) {
    for c in &report.criteria {
        let status = match (c.passed, c.soft) {
            (true, _) => "PASS",
            (false, true) => "SOFT-FAIL",
            (false, false) => "FAIL",
        };
        println!("{status:9} {}/{}: value {:.6e}, bound {:.6e} ({})", report.kind, c.name, c.value, c.bound, c.detail);
    }
    for t in &report.tables {
        if let Some(p) = &t.path {
            println!("table {} ({} rows): {}", t.name, t.rows, p.display());
        }
    }
    println!("{} finished in {:.2} s", report.kind, report.runtime_seconds);
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let Some(common) = cli.command.common() else {
        for e in ExperimentRegistry::builtin().iter() {
            println!("{:10} {}", e.name(), e.summary());
        }
        return ExitCode::SUCCESS;
    };
    let outcome = load_config(&cli.command, common).and_then(|cfg| {
        info!("running {} with seed {}", cfg.kind, cfg.seed);
        Ok(run_experiment(&cfg)?)
    });
    match outcome {
        Ok(report) => {
            print_report(&report);
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
