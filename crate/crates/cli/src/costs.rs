//! Smart-contract execution cost estimates.
//!
//! Gas per contract call is fixed; currency figures follow from a gas price
//! in Gwei and an exchange rate in Gwei per USD. A contract name appearing
//! more than once in a gas table is addressed as `Name#2`, `Name#3`, ...

use std::collections::BTreeMap;
use std::io::{Read, Write};

use anyhow::{bail, ensure, Context, Result};
use bets_core::engine::EventKind;
use bets_core::scenario::CostRates;
use serde::{Deserialize, Serialize};

pub const GWEI_PER_ETH: f64 = 1e9;

/// Measured gas for each contract call.
pub const DEFAULT_GAS_TABLE: [(&str, u64); 6] = [
    ("UserAuthority", 159_430),
    ("RecordData", 152_443),
    ("AlertControl", 213_924),
    ("Incentive", 224_934),
    ("RecordData", 276_394),
    ("EABTransfer", 246_374),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GasTableEntry {
    pub contract_name: String,
    pub gas: u64,
}

pub fn default_gas_table() -> Vec<GasTableEntry> {
    DEFAULT_GAS_TABLE
        .iter()
        .map(|&(name, gas)| GasTableEntry {
            contract_name: name.to_string(),
            gas,
        })
        .collect()
}

/// Reads `contract_name,gas` rows.
pub fn read_gas_table<R: Read>(input: R) -> Result<Vec<GasTableEntry>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row.context("malformed gas table row")?);
    }
    ensure!(!out.is_empty(), "gas table is empty");
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GasCostEntry {
    /// Unique key: the name, suffixed `#n` for the n-th repeat.
    pub key: String,
    pub contract_name: String,
    pub gas: u64,
    pub ether: f64,
    pub usd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCostLine {
    pub key: String,
    pub calls: u64,
    pub gas: u64,
    pub ether: f64,
    pub usd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCosts {
    pub lines: Vec<RunCostLine>,
    pub total_gas: u64,
    pub total_ether: f64,
    pub total_usd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub gas_price_gwei: f64,
    pub gwei_per_usd: f64,
    pub entries: Vec<GasCostEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run: Option<RunCosts>,
}

fn ether(gas: u64, rates: &CostRates) -> f64 {
    gas as f64 * rates.gas_price_gwei / GWEI_PER_ETH
}

fn usd(gas: u64, rates: &CostRates) -> f64 {
    gas as f64 * rates.gas_price_gwei / rates.gwei_per_usd
}

fn check_rates(rates: &CostRates) -> Result<()> {
    ensure!(
        rates.gas_price_gwei > 0.0 && rates.gas_price_gwei.is_finite(),
        "gas_price_gwei must be > 0, got {}",
        rates.gas_price_gwei
    );
    ensure!(
        rates.gwei_per_usd > 0.0 && rates.gwei_per_usd.is_finite(),
        "gwei_per_usd must be > 0, got {}",
        rates.gwei_per_usd
    );
    Ok(())
}

pub fn estimate_costs(table: &[GasTableEntry], rates: &CostRates) -> Result<CostReport> {
    check_rates(rates)?;
    let mut seen: BTreeMap<&str, u32> = BTreeMap::new();
    let mut entries = Vec::with_capacity(table.len());
    for e in table {
        ensure!(e.gas > 0, "gas for {} must be > 0", e.contract_name);
        let n = seen.entry(&e.contract_name).or_insert(0);
        *n += 1;
        let key = if *n == 1 {
            e.contract_name.clone()
        } else {
            format!("{}#{}", e.contract_name, n)
        };
        entries.push(GasCostEntry {
            key,
            contract_name: e.contract_name.clone(),
            gas: e.gas,
            ether: ether(e.gas, rates),
            usd: usd(e.gas, rates),
        });
    }
    Ok(CostReport {
        gas_price_gwei: rates.gas_price_gwei,
        gwei_per_usd: rates.gwei_per_usd,
        entries,
        run: None,
    })
}

/// What drives the number of calls to one contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CallSource {
    /// One call per registered vehicle.
    Vehicles,
    Event(EventKind),
}

impl CallSource {
    pub fn parse(s: &str) -> Result<CallSource> {
        if s == "vehicles" {
            return Ok(CallSource::Vehicles);
        }
        EventKind::parse(s)
            .map(CallSource::Event)
            .with_context(|| format!("unknown call source {s:?}"))
    }
}

pub type CostMapping = Vec<(String, Vec<CallSource>)>;

pub fn default_mapping() -> CostMapping {
    use CallSource::*;
    vec![
        ("UserAuthority".into(), vec![Vehicles]),
        ("RecordData".into(), vec![Event(EventKind::Sample)]),
        ("AlertControl".into(), vec![Event(EventKind::Alert)]),
        ("Incentive".into(), vec![Event(EventKind::Penalty), Event(EventKind::Subsidy)]),
        (
            "RecordData#2".into(),
            vec![Event(EventKind::TradeProposed), Event(EventKind::TradeConfirmed)],
        ),
        ("EABTransfer".into(), vec![Event(EventKind::TradeSettled)]),
    ]
}

/// Parses a JSON object `{"Contract": ["EventKind" | "vehicles", ...]}`.
pub fn parse_mapping(json: &str) -> Result<CostMapping> {
    let raw: BTreeMap<String, Vec<String>> = serde_json::from_str(json).context("malformed cost mapping")?;
    raw.into_iter()
        .map(|(k, v)| Ok((k, v.iter().map(|s| CallSource::parse(s)).collect::<Result<Vec<_>>>()?)))
        .collect()
}

/// Counts events by kind from an event-log CSV.
pub fn count_events<R: Read>(input: R) -> Result<BTreeMap<EventKind, u64>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers().context("event log has no header")?.clone();
    let col = headers
        .iter()
        .position(|h| h == "kind")
        .context("event log lacks a `kind` column")?;
    let mut counts = BTreeMap::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.with_context(|| format!("malformed event log row {}", i + 2))?;
        let kind = row.get(col).unwrap_or_default();
        let kind = EventKind::parse(kind).with_context(|| format!("unknown event kind {kind:?} on row {}", i + 2))?;
        *counts.entry(kind).or_insert(0) += 1;
    }
    Ok(counts)
}

/// Multiplies per-call costs by call counts from a run.
pub fn run_costs(
    report: &CostReport,
    mapping: &CostMapping,
    events: &BTreeMap<EventKind, u64>,
    vehicles: u64,
) -> Result<RunCosts> {
    let rates = CostRates {
        gas_price_gwei: report.gas_price_gwei,
        gwei_per_usd: report.gwei_per_usd,
    };
    let mut lines = Vec::with_capacity(mapping.len());
    for (key, sources) in mapping {
        let Some(entry) = report.entries.iter().find(|e| &e.key == key) else {
            bail!("unknown contract name {key:?} in cost mapping");
        };
        let calls: u64 = sources
            .iter()
            .map(|s| match s {
                CallSource::Vehicles => vehicles,
                CallSource::Event(k) => events.get(k).copied().unwrap_or(0),
            })
            .sum();
        let gas = entry.gas * calls;
        lines.push(RunCostLine {
            key: key.clone(),
            calls,
            gas,
            ether: ether(gas, &rates),
            usd: usd(gas, &rates),
        });
    }
    Ok(RunCosts {
        total_gas: lines.iter().map(|l| l.gas).sum(),
        total_ether: lines.iter().map(|l| l.ether).sum(),
        total_usd: lines.iter().map(|l| l.usd).sum(),
        lines,
    })
}

/// CSV `key,contract_name,gas,ether,usd`.
pub fn write_cost_csv<W: Write>(report: &CostReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["key", "contract_name", "gas", "ether", "usd"])?;
    for e in &report.entries {
        w.write_record([
            e.key.clone(),
            e.contract_name.clone(),
            e.gas.to_string(),
            e.ether.to_string(),
            e.usd.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rates(gwei: f64) -> CostRates {
        CostRates {
            gas_price_gwei: gwei,
            gwei_per_usd: 4_182_471.994_9,
        }
    }

    #[test]
    fn user_authority_matches_listed_usd() {
        let r = estimate_costs(&default_gas_table(), &rates(1.897)).unwrap();
        let ua = &r.entries[0];
        assert_eq!(ua.gas, 159_430);
        assert!(((ua.usd - 0.0723) / 0.0723).abs() < 0.005, "{}", ua.usd);
        assert!((ua.ether - 159_430.0 * 1.897e-9).abs() < 1e-15);
        assert_eq!(r.entries[4].key, "RecordData#2");
    }

    #[test]
    fn usd_is_linear_in_gas_price() {
        let a = estimate_costs(&default_gas_table(), &rates(1.897)).unwrap();
        let b = estimate_costs(&default_gas_table(), &rates(2.0 * 1.897)).unwrap();
        for (x, y) in a.entries.iter().zip(&b.entries) {
            assert!((y.usd - 2.0 * x.usd).abs() < 1e-15);
        }
    }

    #[test]
    fn run_costs_from_event_counts() {
        let r = estimate_costs(&default_gas_table(), &rates(1.897)).unwrap();
        let mut counts = BTreeMap::new();
        counts.insert(EventKind::Sample, 10);
        let out = run_costs(&r, &default_mapping(), &counts, 3).unwrap();
        let transfer = out.lines.iter().find(|l| l.key == "EABTransfer").unwrap();
        assert_eq!((transfer.calls, transfer.usd), (0, 0.0));
        assert_eq!(out.lines[0].gas, 3 * 159_430);
        assert_eq!(out.lines[1].gas, 10 * 152_443);
        let bad = vec![("Nope".to_string(), vec![CallSource::Vehicles])];
        assert!(run_costs(&r, &bad, &counts, 3).unwrap_err().to_string().contains("unknown contract name"));
    }

    #[test]
    fn rejects_bad_rates_and_tables() {
        assert!(estimate_costs(&default_gas_table(), &rates(0.0)).is_err());
        let zero = vec![GasTableEntry {
            contract_name: "X".into(),
            gas: 0,
        }];
        assert!(estimate_costs(&zero, &rates(1.0)).is_err());
        assert!(read_gas_table("contract_name,gas\n".as_bytes()).is_err());
        let t = read_gas_table("contract_name,gas\nA,5\n".as_bytes()).unwrap();
        assert_eq!(t[0].gas, 5);
    }

    #[test]
    fn mapping_and_event_parsing() {
        let m = parse_mapping(r#"{"EABTransfer": ["TradeSettled"], "UserAuthority": ["vehicles"]}"#).unwrap();
        assert_eq!(m.len(), 2);
        assert!(parse_mapping(r#"{"EABTransfer": ["Bogus"]}"#).is_err());
        let counts = count_events("t,kind,subject,data\n0,Sample,1,x\n0,Sample,2,x\n0,Alert,2,y\n".as_bytes()).unwrap();
        assert_eq!(counts[&EventKind::Sample], 2);
        assert!(count_events("t,kind\n0,Nope\n".as_bytes()).is_err());
    }

    #[test]
    fn report_is_pure() {
        let render = || {
            let r = estimate_costs(&default_gas_table(), &rates(1.897)).unwrap();
            let mut out = Vec::new();
            write_cost_csv(&r, &mut out).unwrap();
            out
        };
        assert_eq!(render(), render());
    }
}
