//! Scenario loading and validation. Everything downstream sees SI units:
//! seconds, meters, meters per second, bits.

pub mod document;
pub mod streams;
pub mod units;

use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::allowance::MarketRule;
use crate::credits::Credits;
use crate::emissions::EmissionCurve;
use crate::ledger::{MinerPool, BLOCK_HEADER_BYTES, DIGEST_BYTES};
pub use document::{BehaviorPolicy, RoadKind, ScenarioDocument, SCHEMA_VERSION};
pub use streams::{stream_rng, RandomStreams, StreamName};
use units::{hours_to_seconds, km_to_m, Speed};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("cannot read scenario {path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub period_s: f64,
    pub sample_s: f64,
    pub periods: u32,
}

impl Timing {
    /// `ceil(T / Ts)`; the last tick of a period may be shorter than `Ts`.
    pub fn ticks_per_period(&self) -> u32 {
        let ratio = self.period_s / self.sample_s;
        let rounded = ratio.round();
        if (ratio - rounded).abs() < 1e-9 * ratio.max(1.0) {
            rounded as u32
        } else {
            ratio.ceil() as u32
        }
    }

    /// Start and length of tick `k` (0-based) within a period.
    pub fn tick_span(&self, k: u32) -> (f64, f64) {
        let start = k as f64 * self.sample_s;
        let end = if k + 1 >= self.ticks_per_period() {
            self.period_s
        } else {
            (k + 1) as f64 * self.sample_s
        };
        (start, end - start)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RoadModel {
    /// One-way periodic road of the given length.
    Ring { circumference_m: f64 },
    /// Unbounded plane; vehicles start uniformly in a `side_m` square.
    Plane { side_m: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilityParams {
    pub road: RoadModel,
    pub speed_limit: Speed,
    pub min_speed: Speed,
    pub max_speed: Speed,
    pub redraw_s: f64,
    pub stop_probability: f64,
    pub capped_speed: Speed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommsParams {
    pub range_m: f64,
    pub data_rate_bps: f64,
    pub block_size_bits: u64,
    pub window_horizon_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostRates {
    pub gas_price_gwei: f64,
    pub gwei_per_usd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisParams {
    pub rel_speed: Speed,
    pub trials: u32,
}

/// A validated scenario. Holds the source document for exact serialization
/// and the derived SI parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    doc: ScenarioDocument,
    timing: Timing,
    mobility: MobilityParams,
    comms: CommsParams,
    market: MarketRule,
    initial_balance: Credits,
    trade_target: Credits,
    curve: EmissionCurve,
    pool: MinerPool,
}

fn invariant(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invariant(msg.into())
}

fn positive(name: &str, v: f64) -> Result<f64, ScenarioError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(invariant(format!("{name} must be > 0, got {v}")))
    }
}

impl ScenarioConfig {
    pub fn from_document(doc: ScenarioDocument) -> Result<Self, ScenarioError> {
        if doc.schema_version != SCHEMA_VERSION {
            return Err(ScenarioError::Schema(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                doc.schema_version
            )));
        }
        let period_h = positive("period_T", doc.time.period_hours)?;
        let sample_h = positive("sample_Ts", doc.time.sample_interval_hours)?;
        if sample_h >= period_h {
            return Err(invariant(format!(
                "sample_Ts ({sample_h} h) must be < period_T ({period_h} h)"
            )));
        }
        if doc.periods == 0 {
            return Err(invariant("periods must be >= 1"));
        }
        let timing = Timing {
            period_s: hours_to_seconds(period_h),
            sample_s: hours_to_seconds(sample_h),
            periods: doc.periods,
        };

        let b0 = doc.fleet.initial_balance;
        if !(b0 > 0.0 && b0.is_finite()) {
            return Err(invariant(format!("Remark 1: initial_balance_B0 must be > 0, got {b0}")));
        }
        let initial_balance = Credits::from_f64(b0);
        if !initial_balance.is_positive() {
            return Err(invariant(format!("Remark 1: initial_balance_B0 must be > 0, got {b0}")));
        }
        let trade_target = match doc.fleet.trade_target {
            Some(t) => Credits::from_f64(positive("trade_target", t)?),
            None => Credits::from_micros(initial_balance.micros() / 4),
        };
        if doc.fleet.vehicles == 0 {
            return Err(invariant("n_vehicles must be >= 1"));
        }
        if doc.behavior_policy == BehaviorPolicy::DltControlled && doc.fleet.vehicles < 2 {
            return Err(invariant("n_vehicles must be >= 2 when behavior_policy trades (dlt-controlled)"));
        }

        let m = &doc.market;
        positive("threshold", m.threshold_g_per_km)?;
        let market = MarketRule::new(
            m.threshold_g_per_km,
            m.penalty_alpha,
            m.subsidy_beta,
            Credits::from_f64(m.subsidy_cap),
        )
        .map_err(|e| invariant(e.to_string()))?;

        let r = &doc.road;
        let road = match r.model {
            RoadKind::RingRoad => RoadModel::Ring {
                circumference_m: km_to_m(positive("circumference_km", r.circumference_km)?),
            },
            RoadKind::OpenPlane => RoadModel::Plane {
                side_m: km_to_m(positive("plane_side_km", r.plane_side_km)?),
            },
        };
        let limit = positive("speed_limit_kmh", r.speed_limit_kmh)?;
        let lo = positive("min_speed_kmh", r.min_speed_kmh)?;
        let hi = positive("max_speed_kmh", r.max_speed_kmh)?;
        if lo > hi || hi > limit {
            return Err(invariant(format!(
                "speeds must satisfy min ({lo}) <= max ({hi}) <= limit ({limit}) km/h"
            )));
        }
        let cap = positive("capped_speed_kmh", r.capped_speed_kmh)?;
        if cap > limit {
            return Err(invariant(format!("capped_speed_kmh ({cap}) exceeds speed limit ({limit})")));
        }
        if !(0.0..=1.0).contains(&r.stop_probability) {
            return Err(invariant(format!("stop_probability must be in [0, 1], got {}", r.stop_probability)));
        }
        let mobility = MobilityParams {
            road,
            speed_limit: Speed::from_kmh(limit),
            min_speed: Speed::from_kmh(lo),
            max_speed: Speed::from_kmh(hi),
            redraw_s: positive("redraw_seconds", r.redraw_seconds)?,
            stop_probability: r.stop_probability,
            capped_speed: Speed::from_kmh(cap),
        };

        let c = &doc.comms;
        let sb = positive("block_size_SB", c.block_size_bits)?;
        if sb.fract() != 0.0 || sb > u64::MAX as f64 {
            return Err(invariant(format!("block_size_SB must be a whole number of bits, got {sb}")));
        }
        let min_block = 8 * (BLOCK_HEADER_BYTES + DIGEST_BYTES);
        if (sb as u64) < min_block {
            return Err(invariant(format!(
                "block_size_SB ({sb} bits) must hold a header and one digest ({min_block} bits)"
            )));
        }
        let comms = CommsParams {
            range_m: positive("comm_range_r", c.range_m)?,
            data_rate_bps: positive("data_rate_R", c.data_rate_bps)?,
            block_size_bits: sb as u64,
            window_horizon_s: positive("window_horizon_seconds", c.window_horizon_seconds)?,
        };

        let l = &doc.ledger;
        if l.miners == 0 {
            return Err(invariant("miner_count_M must be >= 1"));
        }
        let pool = MinerPool::new(
            l.miners,
            positive("lambda0", l.lambda0)?,
            positive("power_Pc", l.power_watts)?,
        )
        .map_err(|e| invariant(e.to_string()))?;

        let e = &doc.emissions;
        let curve = EmissionCurve::new(e.coeff_a, e.coeff_b, e.coeff_c, e.idle_g_per_hour)
            .map_err(|err| invariant(err.to_string()))?;
        if !(e.nox_scale >= 0.0 && e.nox_scale.is_finite()) {
            return Err(invariant("nox_scale must be >= 0"));
        }
        if !(0.0..1.0).contains(&e.measurement_noise) {
            return Err(invariant("measurement_noise must be in [0, 1)"));
        }
        positive("gas_price_gwei", doc.costs.gas_price_gwei)?;
        positive("gwei_per_usd", doc.costs.gwei_per_usd)?;
        positive("analysis.rel_speed_kmh", doc.analysis.rel_speed_kmh)?;
        if doc.analysis.trials == 0 {
            return Err(invariant("analysis.trials must be >= 1"));
        }

        Ok(ScenarioConfig {
            doc,
            timing,
            mobility,
            comms,
            market,
            initial_balance,
            trade_target,
            curve,
            pool,
        })
    }

    pub fn document(&self) -> &ScenarioDocument {
        &self.doc
    }

    /// Applies `edit` to a copy of the document and revalidates.
    pub fn modified(&self, edit: impl FnOnce(&mut ScenarioDocument)) -> Result<Self, ScenarioError> {
        let mut doc = self.doc.clone();
        edit(&mut doc);
        ScenarioConfig::from_document(doc)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut out = self.clone();
        out.doc.seed = seed;
        out
    }

    pub fn with_policy(&self, policy: BehaviorPolicy) -> Result<Self, ScenarioError> {
        self.modified(|d| d.behavior_policy = policy)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.doc).expect("scenario document serializes")
    }

    /// SHA-256 of the canonical TOML serialization, hex.
    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn streams(&self) -> RandomStreams {
        RandomStreams::from_seed(self.doc.seed)
    }

    pub fn seed(&self) -> u64 {
        self.doc.seed
    }

    pub fn policy(&self) -> BehaviorPolicy {
        self.doc.behavior_policy
    }

    pub fn n_vehicles(&self) -> u32 {
        self.doc.fleet.vehicles
    }

    pub fn timing(&self) -> &Timing {
        &self.timing
    }

    pub fn mobility(&self) -> &MobilityParams {
        &self.mobility
    }

    pub fn comms(&self) -> &CommsParams {
        &self.comms
    }

    pub fn market_rule(&self) -> &MarketRule {
        &self.market
    }

    pub fn initial_balance(&self) -> Credits {
        self.initial_balance
    }

    pub fn trade_target(&self) -> Credits {
        self.trade_target
    }

    pub fn curve(&self) -> &EmissionCurve {
        &self.curve
    }

    pub fn nox_scale(&self) -> f64 {
        self.doc.emissions.nox_scale
    }

    pub fn measurement_noise(&self) -> f64 {
        self.doc.emissions.measurement_noise
    }

    pub fn miner_pool(&self) -> &MinerPool {
        &self.pool
    }

    pub fn cost_rates(&self) -> CostRates {
        CostRates {
            gas_price_gwei: self.doc.costs.gas_price_gwei,
            gwei_per_usd: self.doc.costs.gwei_per_usd,
        }
    }

    pub fn analysis(&self) -> AnalysisParams {
        AnalysisParams {
            rel_speed: Speed::from_kmh(self.doc.analysis.rel_speed_kmh),
            trials: self.doc.analysis.trials,
        }
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig::from_document(ScenarioDocument::default()).expect("default scenario is valid")
    }
}

pub fn load_scenario(source: &str) -> Result<ScenarioConfig, ScenarioError> {
    let doc: ScenarioDocument = toml::from_str(source).map_err(|e| ScenarioError::Schema(e.to_string()))?;
    ScenarioConfig::from_document(doc)
}

pub fn load_scenario_file(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    load_scenario(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edit(f: impl FnOnce(&mut ScenarioDocument)) -> Result<ScenarioConfig, ScenarioError> {
        let mut doc = ScenarioDocument::default();
        f(&mut doc);
        load_scenario(&toml::to_string(&doc).unwrap())
    }

    #[test]
    fn default_converts_to_si() {
        let cfg = ScenarioConfig::default();
        assert_eq!(cfg.timing().period_s, 86_400.0);
        assert_eq!(cfg.timing().sample_s, 900.0);
        assert_eq!(cfg.timing().ticks_per_period(), 96);
        assert_eq!(cfg.comms().range_m, 300.0);
        assert!((cfg.mobility().capped_speed.mps() - 20.0).abs() < 1e-12);
        assert_eq!(cfg.miner_pool().lambda_c(), 0.5);
    }

    #[test]
    fn nonpositive_initial_balance_rejected() {
        let err = edit(|d| d.fleet.initial_balance = 0.0).unwrap_err();
        assert!(err.to_string().contains("Remark 1"), "{err}");
    }

    #[test]
    fn rejects_degenerate_values() {
        assert!(edit(|d| d.ledger.miners = 0).unwrap_err().to_string().contains("miner_count_M"));
        assert!(edit(|d| d.time.sample_interval_hours = 24.0).is_err());
        assert!(edit(|d| d.time.period_hours = -1.0).is_err());
        assert!(edit(|d| d.comms.range_m = 0.0).is_err());
        assert!(edit(|d| d.comms.data_rate_bps = 0.0).is_err());
        assert!(edit(|d| d.comms.block_size_bits = 0.0).is_err());
        assert!(edit(|d| d.ledger.lambda0 = 0.0).is_err());
        assert!(edit(|d| d.ledger.power_watts = 0.0).is_err());
        assert!(edit(|d| d.fleet.vehicles = 1).is_err());
        assert!(edit(|d| {
            d.fleet.vehicles = 1;
            d.behavior_policy = BehaviorPolicy::Baseline;
        })
        .is_ok());
        assert!(edit(|d| d.emissions.coeff_c = 0.05).is_err());
    }

    #[test]
    fn schema_errors() {
        assert!(matches!(load_scenario("seed = 1"), Err(ScenarioError::Schema(_))));
        let mut text = ScenarioConfig::default().to_toml();
        text.push_str("\nbogus = 1\n");
        assert!(matches!(load_scenario(&text), Err(ScenarioError::Schema(_))));
        let bumped = ScenarioConfig::default().to_toml().replace("schema_version = 1", "schema_version = 9");
        assert!(matches!(load_scenario(&bumped), Err(ScenarioError::Schema(_))));
    }

    #[test]
    fn toml_round_trip() {
        let cfg = edit(|d| {
            d.seed = 7;
            d.fleet.trade_target = Some(12.5);
            d.emissions.idle_g_per_hour = Some(2000.0);
        })
        .unwrap();
        let again = load_scenario(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.config_hash(), again.config_hash());
        assert_ne!(cfg.config_hash(), cfg.with_seed(8).config_hash());
    }

    #[test]
    fn uneven_last_tick() {
        let t = Timing {
            period_s: 1000.0,
            sample_s: 300.0,
            periods: 1,
        };
        assert_eq!(t.ticks_per_period(), 4);
        assert_eq!(t.tick_span(3), (900.0, 100.0));
        assert_eq!(t.tick_span(0), (0.0, 300.0));
    }
}
