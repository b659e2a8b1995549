//! On-disk scenario schema (TOML). Values are in the units named by each
//! key; [`super::ScenarioConfig`] converts them to SI.

use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BehaviorPolicy {
    /// Alerts are ignored and trades settle without waiting for ledger confirmation.
    Baseline,
    /// Speed alerts cap the vehicle; trades wait for the miner race.
    DltControlled,
}

impl BehaviorPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            BehaviorPolicy::Baseline => "baseline",
            BehaviorPolicy::DltControlled => "dlt-controlled",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoadKind {
    RingRoad,
    OpenPlane,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    pub schema_version: u32,
    pub seed: u64,
    pub periods: u32,
    pub behavior_policy: BehaviorPolicy,
    pub time: TimeSection,
    pub fleet: FleetSection,
    pub market: MarketSection,
    pub road: RoadSection,
    pub comms: CommsSection,
    pub ledger: LedgerSection,
    pub emissions: EmissionsSection,
    pub costs: CostsSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub period_hours: f64,
    pub sample_interval_hours: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetSection {
    pub vehicles: u32,
    /// B_i(0), credits.
    pub initial_balance: f64,
    /// Balance a deficit buyer tries to restore; defaults to a quarter of `initial_balance`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trade_target: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    pub threshold_g_per_km: f64,
    /// Credits per (g/km above threshold) per km driven.
    pub penalty_alpha: f64,
    /// Credits per (g/km below threshold) per km driven.
    pub subsidy_beta: f64,
    /// Maximum subsidy per sample, credits.
    pub subsidy_cap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadSection {
    pub model: RoadKind,
    pub circumference_km: f64,
    /// Side of the square vehicles start in. The plane is unbounded.
    pub plane_side_km: f64,
    pub speed_limit_kmh: f64,
    pub min_speed_kmh: f64,
    pub max_speed_kmh: f64,
    pub redraw_seconds: f64,
    /// Probability that a redraw parks the vehicle (idles) until the next redraw.
    pub stop_probability: f64,
    pub capped_speed_kmh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommsSection {
    pub range_m: f64,
    /// Effective rate in bits per second.
    pub data_rate_bps: f64,
    pub block_size_bits: f64,
    /// Look-ahead used when measuring a contact window.
    pub window_horizon_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerSection {
    pub miners: u32,
    /// Scaling factor: miner rate = lambda0 * power_watts.
    pub lambda0: f64,
    pub power_watts: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmissionsSection {
    pub coeff_a: f64,
    pub coeff_b: f64,
    pub coeff_c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idle_g_per_hour: Option<f64>,
    pub nox_scale: f64,
    /// Relative standard deviation of multiplicative sensor noise on reported samples.
    #[serde(default)]
    pub measurement_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostsSection {
    pub gas_price_gwei: f64,
    pub gwei_per_usd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    pub rel_speed_kmh: f64,
    pub trials: u32,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            rel_speed_kmh: 50.0,
            trials: 100_000,
        }
    }
}

impl Default for ScenarioDocument {
    fn default() -> Self {
        ScenarioDocument {
            schema_version: SCHEMA_VERSION,
            seed: 42,
            periods: 1,
            behavior_policy: BehaviorPolicy::DltControlled,
            time: TimeSection {
                period_hours: 24.0,
                sample_interval_hours: 0.25,
            },
            fleet: FleetSection {
                vehicles: 120,
                initial_balance: 20.0,
                trade_target: None,
            },
            market: MarketSection {
                threshold_g_per_km: 160.0,
                penalty_alpha: 0.1,
                subsidy_beta: 0.02,
                subsidy_cap: 2.0,
            },
            road: RoadSection {
                model: RoadKind::RingRoad,
                circumference_km: 10.0,
                plane_side_km: 5.0,
                speed_limit_kmh: 130.0,
                min_speed_kmh: 30.0,
                max_speed_kmh: 130.0,
                redraw_seconds: 60.0,
                stop_probability: 0.05,
                capped_speed_kmh: 72.0,
            },
            comms: CommsSection {
                range_m: 300.0,
                data_rate_bps: 6.0e6,
                block_size_bits: 1.0e6,
                window_horizon_seconds: 120.0,
            },
            ledger: LedgerSection {
                miners: 4,
                lambda0: 0.005,
                power_watts: 100.0,
            },
            emissions: EmissionsSection {
                coeff_a: 3000.0,
                coeff_b: 80.0,
                coeff_c: 0.005,
                idle_g_per_hour: None,
                nox_scale: 0.004,
                measurement_noise: 0.0,
            },
            costs: CostsSection {
                gas_price_gwei: 1.897,
                gwei_per_usd: 4_182_471.994_9,
            },
            analysis: AnalysisSection::default(),
        }
    }
}
