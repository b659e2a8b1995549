//! Subcommands. Every command writes its outputs and a `manifest.json`
//! under `--out-dir`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use bets_core::engine::{self, write_comparison, write_run, RunManifest, RunOptions};
use bets_core::latency::{sweep, SweepParam};
use bets_core::scenario::{load_scenario_file, BehaviorPolicy, CostRates, ScenarioConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::costs::{
    count_events, default_gas_table, default_mapping, estimate_costs, parse_mapping, read_gas_table, run_costs,
    write_cost_csv,
};
use crate::plots::{emit_plot, PlotKind};

#[derive(Debug, Parser)]
#[command(name = "bets", version, about = "Vehicle emissions cap-and-trade simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Scenario TOML; the built-in default scenario when omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolicyArg {
    Baseline,
    DltControlled,
}

impl From<PolicyArg> for BehaviorPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Baseline => BehaviorPolicy::Baseline,
            PolicyArg::DltControlled => BehaviorPolicy::DltControlled,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one scenario.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        policy: Option<PolicyArg>,
        /// Also write per-tick vehicle positions.
        #[arg(long)]
        trajectory: bool,
        /// Skip the chain export.
        #[arg(long)]
        no_chain: bool,
    },
    /// Run baseline and dlt-controlled on the same seed.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        no_chain: bool,
    },
    /// Success probability and latency terms over a parameter grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// rel_speed, block_size, miner_count or data_rate.
        #[arg(long)]
        param: String,
        /// Comma-separated values, or `start:stop:step`.
        #[arg(long)]
        grid: String,
        /// Also render the sweep as SVG.
        #[arg(long)]
        plot: bool,
    },
    /// Smart-contract execution costs, optionally totalled over an event log.
    Costs {
        #[command(flatten)]
        common: Common,
        /// Event log CSV from `run`.
        #[arg(long)]
        events: Option<PathBuf>,
        /// JSON object mapping contract keys to event kinds.
        #[arg(long)]
        mapping: Option<PathBuf>,
        /// CSV `contract_name,gas` replacing the built-in table.
        #[arg(long)]
        gas_table: Option<PathBuf>,
        #[arg(long)]
        gas_price_gwei: Option<f64>,
        #[arg(long)]
        gwei_per_usd: Option<f64>,
    },
    /// Render a chart from a sweep or comparison table.
    Plot {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        kind: PlotKind,
        #[arg(long)]
        input: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Run { .. } => "run",
            Command::Compare { .. } => "compare",
            Command::Sweep { .. } => "sweep",
            Command::Costs { .. } => "costs",
            Command::Plot { .. } => "plot",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Run { common, .. }
            | Command::Compare { common, .. }
            | Command::Sweep { common, .. }
            | Command::Costs { common, .. }
            | Command::Plot { common, .. } => common,
        }
    }
}

fn load(common: &Common) -> Result<ScenarioConfig> {
    let cfg = match &common.scenario {
        Some(p) => load_scenario_file(p)?,
        None => ScenarioConfig::default(),
    };
    Ok(match common.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

pub fn parse_grid(grid: &str) -> Result<Vec<f64>> {
    let grid = grid.trim();
    if let Some((a, rest)) = grid.split_once(':') {
        let (b, step) = rest.split_once(':').context("range grid must be start:stop:step")?;
        let (a, b, step): (f64, f64, f64) = (a.trim().parse()?, b.trim().parse()?, step.trim().parse()?);
        ensure!(step > 0.0 && b >= a, "range grid needs step > 0 and stop >= start");
        let n = ((b - a) / step + 1e-9).floor() as u64;
        ensure!(n < 1_000_000, "range grid too large");
        return Ok((0..=n).map(|k| a + k as f64 * step).collect());
    }
    let values = grid
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("bad grid value {s:?}")))
        .collect::<Result<Vec<_>>>()?;
    ensure!(!values.is_empty(), "grid is empty");
    Ok(values)
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cmd = &cli.command;
    let common = cmd.common();
    let cfg = load(common)?;
    let out = &common.out_dir;
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    match cmd {
        Command::Run {
            policy,
            trajectory,
            no_chain,
            ..
        } => {
            let cfg = match policy {
                Some(p) => cfg.with_policy((*p).into())?,
                None => cfg,
            };
            let opts = RunOptions {
                record_trajectory: *trajectory,
                ..RunOptions::default()
            };
            let result = engine::run_with(&cfg, opts)?;
            write_run(&result, out, !no_chain)?;
            write_scenario(&cfg, out)?;
            RunManifest::new("run", &cfg).write(out)?;
        }
        Command::Compare { no_chain, .. } => {
            let c = engine::compare(&cfg)?;
            write_comparison(&c, out, !no_chain)?;
            write_scenario(&cfg, out)?;
            RunManifest::new("compare", &cfg).write(out)?;
        }
        Command::Sweep { param, grid, plot, .. } => {
            let param: SweepParam = param.parse()?;
            let table = sweep(param, &parse_grid(grid)?, &cfg)?;
            let path = out.join("sweep.csv");
            table.write_csv(fs::File::create(&path)?)?;
            if *plot {
                emit_plot(PlotKind::SuccessSweep, &path, out)?;
                if param == SweepParam::RelSpeed {
                    emit_plot(PlotKind::LatencyBound, &path, out)?;
                }
            }
            write_scenario(&cfg, out)?;
            RunManifest::new("sweep", &cfg).write(out)?;
        }
        Command::Costs {
            events,
            mapping,
            gas_table,
            gas_price_gwei,
            gwei_per_usd,
            ..
        } => {
            let base = cfg.cost_rates();
            let rates = CostRates {
                gas_price_gwei: gas_price_gwei.unwrap_or(base.gas_price_gwei),
                gwei_per_usd: gwei_per_usd.unwrap_or(base.gwei_per_usd),
            };
            let table = match gas_table {
                Some(p) => read_gas_table(open(p)?)?,
                None => default_gas_table(),
            };
            let mut report = estimate_costs(&table, &rates)?;
            if let Some(ev) = events {
                let map = match mapping {
                    Some(p) => parse_mapping(&fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?)?,
                    None => default_mapping(),
                };
                let counts = count_events(open(ev)?)?;
                report.run = Some(run_costs(&report, &map, &counts, cfg.n_vehicles() as u64)?);
            } else if mapping.is_some() {
                bail!("--mapping requires --events");
            }
            write_cost_csv(&report, fs::File::create(out.join("costs.csv"))?)?;
            let json = serde_json::to_string_pretty(&report)?;
            fs::write(out.join("costs.json"), json + "\n")?;
            RunManifest::new("costs", &cfg).write(out)?;
        }
        Command::Plot { kind, input, .. } => {
            emit_plot(*kind, input, out)?;
            RunManifest::new("plot", &cfg).write(out)?;
        }
    }
    Ok(())
}

fn open(p: &Path) -> Result<fs::File> {
    fs::File::open(p).with_context(|| format!("cannot open {}", p.display()))
}

fn write_scenario(cfg: &ScenarioConfig, out: &Path) -> Result<()> {
    fs::write(out.join("scenario.toml"), cfg.to_toml())?;
    Ok(())
}

/// One-line JSON error record for stderr.
pub fn error_record(command: &str, err: &anyhow::Error) -> String {
    serde_json::json!({
        "status": "error",
        "command": command,
        "error": format!("{err:#}"),
    })
    .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_forms() {
        assert_eq!(parse_grid("1, 2,3").unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(parse_grid("10:40:10").unwrap(), vec![10.0, 20.0, 30.0, 40.0]);
        assert!(parse_grid("").is_err());
        assert!(parse_grid("5:1:1").is_err());
        assert!(parse_grid("a,b").is_err());
    }

    #[test]
    fn error_record_is_json() {
        let rec = error_record("run", &anyhow::anyhow!("boom"));
        let v: serde_json::Value = serde_json::from_str(&rec).unwrap();
        assert_eq!(v["status"], "error");
        assert_eq!(v["error"], "boom");
    }
}
