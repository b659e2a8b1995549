//! Run artifacts on disk. Nothing written here depends on wall-clock time or
//! absolute paths, so identical runs give identical files.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{events::write_events_csv, Comparison, RunOutput};
use crate::allowance::{replay, AllowanceError};
use crate::credits::Credits;
use crate::emissions::write_samples_csv;
use crate::ledger::{export_chain, import_chain, LedgerError, DIGEST_ALGORITHM};
use crate::mobility::WindowLength;
use crate::scenario::ScenarioConfig;

pub const SUMMARY_FILE: &str = "summary.json";
pub const EVENTS_FILE: &str = "events.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHAIN_DIR: &str = "chain";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub code_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub digest_algorithm: String,
    /// The full scenario, sufficient to rerun.
    pub scenario: String,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &ScenarioConfig) -> Self {
        RunManifest {
            command: command.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: cfg.config_hash(),
            seed: cfg.seed(),
            digest_algorithm: DIGEST_ALGORITHM.to_string(),
            scenario: cfg.to_toml(),
        }
    }

    pub fn write(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        write_json(&dir.join(MANIFEST_FILE), self)
    }
}

fn writer(path: &Path) -> io::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut w = writer(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()
}

fn window_cell(w: WindowLength) -> String {
    match w {
        WindowLength::Finite(l) => l.to_string(),
        WindowLength::OpenEnded => "open_ended".into(),
    }
}

/// Writes a run's summary, logs and (optionally) chain export under `dir`.
pub fn write_run(out: &RunOutput, dir: &Path, export: bool) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join(SUMMARY_FILE), &out.summary)?;
    write_events_csv(writer(&dir.join(EVENTS_FILE))?, &out.events)?;
    write_samples_csv(writer(&dir.join("samples.csv"))?, &out.samples)?;
    out.exchange.write_trail_csv(writer(&dir.join("accounts.csv"))?)?;
    out.exchange.write_alerts_csv(writer(&dir.join("alerts.csv"))?)?;

    let mut w = csv::Writer::from_writer(writer(&dir.join(TRACE_FILE))?);
    w.write_record(["t", "co2_g", "nox_g"])?;
    for r in &out.trace {
        w.write_record([r.t.to_string(), r.co2_g.to_string(), r.nox_g.to_string()])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(writer(&dir.join("windows.csv"))?);
    w.write_record([
        "order", "buyer", "seller", "start_t", "l_total", "bound_lprime", "l_trans", "l_comp", "succeeded",
    ])?;
    for log in &out.windows {
        let win = &log.window;
        w.write_record([
            log.order.to_string(),
            win.pair.0.to_string(),
            win.pair.1.to_string(),
            win.start_t.to_string(),
            window_cell(win.l_total),
            win.bound_lprime.map_or_else(String::new, |b| b.to_string()),
            log.attempt.l_trans.to_string(),
            log.attempt.l_comp_draw.map_or_else(String::new, |c| c.to_string()),
            log.attempt.succeeded.to_string(),
        ])?;
    }
    w.flush()?;

    if !out.trajectory.is_empty() {
        let mut w = csv::Writer::from_writer(writer(&dir.join("trajectory.csv"))?);
        w.write_record(["t", "id", "x", "y", "speed"])?;
        for r in &out.trajectory {
            w.write_record([
                r.t.to_string(),
                r.vehicle_id.to_string(),
                r.x.to_string(),
                r.y.to_string(),
                r.speed_kmh.to_string(),
            ])?;
        }
        w.flush()?;
    }

    if export {
        export_chain(&out.ledger, &dir.join(CHAIN_DIR)).map_err(io::Error::other)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub t: f64,
    pub baseline_co2_g: f64,
    pub dlt_co2_g: f64,
    pub baseline_nox_g: f64,
    pub dlt_nox_g: f64,
}

/// `comparison.json`, the paired per-tick `emissions_compare.csv`, and each
/// arm's run directory.
pub fn write_comparison(c: &Comparison, dir: &Path, export: bool) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("comparison.json"), &c.report)?;
    let mut w = csv::Writer::from_writer(writer(&dir.join("emissions_compare.csv"))?);
    w.write_record(["t", "baseline_co2_g", "dlt_co2_g", "baseline_nox_g", "dlt_nox_g"])?;
    for (b, d) in c.baseline.trace.iter().zip(&c.dlt.trace) {
        w.write_record([b.t, b.co2_g, d.co2_g, b.nox_g, d.nox_g].map(|x| x.to_string()))?;
    }
    w.flush()?;
    write_run(&c.baseline, &dir.join("baseline"), export)?;
    write_run(&c.dlt, &dir.join("dlt"), export)
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayExportError {
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Allowance(#[from] AllowanceError),
}

/// Imports a chain export and replays it through the allowance state
/// machine. Returns final balances in vehicle order.
pub fn replay_export(chain_dir: &Path) -> Result<Vec<Credits>, ReplayExportError> {
    let chain = import_chain(chain_dir)?;
    Ok(replay(&chain.transactions)?.into_values().collect())
}
