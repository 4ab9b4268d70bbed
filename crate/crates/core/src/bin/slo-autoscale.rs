use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use slo_autoscale::harness::{report, run_experiment, ControlPlane, ExperimentConfig, Trace};
use slo_autoscale::solver::{oracle_solve_truth, OracleCoarsening};
use slo_autoscale::store::MetricStore;

#[derive(Debug, Parser)]
#[command(version, about = "SLO-driven multi-dimensional autoscaling simulator")]
struct Cli {
    /// JSON experiment config; every field is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the explore/exploit experiment and write trace, metrics and report.
    Run {
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Skip the brute-force oracle in the summary.
        #[arg(long)]
        no_oracle: bool,
    },
    /// Print the brute-force optimum for the config.
    Oracle,
    /// Recompute the report from a trace file.
    Replay {
        trace: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        no_oracle: bool,
    },
    /// Serve the HTTP control plane.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Simulation period in milliseconds; 0 steps only on POST /step.
        #[arg(long, default_value_t = 0)]
        tick_ms: u64,
    },
}

fn config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn oracle_value(cfg: &ExperimentConfig) -> Result<f64> {
    let r = oracle_solve_truth(
        &cfg.services,
        &cfg.truth,
        cfg.budget,
        &OracleCoarsening::default(),
    )?;
    Ok(r.value)
}

fn write_report(trace: &Trace, oracle: Option<f64>, out: &Path) -> Result<String> {
    let r = report(trace, oracle)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("report.csv"), &r.csv)?;
    let text = r.summary.to_string();
    fs::write(out.join("summary.txt"), &text)?;
    Ok(text)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = config(&cli)?;
    match &cli.command {
        Command::Run { out, no_oracle } => {
            let cfg = ExperimentConfig {
                output: Some(out.clone()),
                ..cfg
            };
            let x = run_experiment(&cfg)?;
            let oracle = if *no_oracle {
                None
            } else {
                Some(oracle_value(&cfg)?)
            };
            print!("{}", write_report(&x.trace, oracle, out)?);
        }
        Command::Oracle => {
            let r = oracle_solve_truth(
                &cfg.services,
                &cfg.truth,
                cfg.budget,
                &OracleCoarsening::default(),
            )?;
            println!(
                "{}",
                serde_json::to_string_pretty(&serde_json::json!({
                    "value": r.value,
                    "assignment": r.assignment,
                }))?
            );
        }
        Command::Replay {
            trace,
            out,
            no_oracle,
        } => {
            let t = Trace::load(trace).with_context(|| format!("loading {}", trace.display()))?;
            let oracle = if *no_oracle {
                None
            } else {
                Some(oracle_value(&cfg)?)
            };
            match out {
                Some(dir) => print!("{}", write_report(&t, oracle, dir)?),
                None => print!("{}", report(&t, oracle)?.summary),
            }
        }
        Command::Serve { port, tick_ms } => {
            let plane = Arc::new(ControlPlane::new(cfg.environment()?, MetricStore::new()));
            let addr = SocketAddr::from(([127, 0, 0, 1], *port));
            let tick = (*tick_ms > 0).then(|| Duration::from_millis(*tick_ms));
            eprintln!("listening on http://{addr}");
            tokio::runtime::Runtime::new()?
                .block_on(slo_autoscale::harness::serve(plane, addr, tick))?;
        }
    }
    Ok(())
}
