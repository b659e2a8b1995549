use std::path::PathBuf;

use bets_core::scenario::{load_scenario, load_scenario_file, BehaviorPolicy, ScenarioConfig, ScenarioError};
use proptest::prelude::*;

fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

#[test]
fn shipped_default_matches_builtin() {
    let cfg = load_scenario_file(&scenarios_dir().join("default.toml")).unwrap();
    assert_eq!(cfg, ScenarioConfig::default());
    assert_eq!(cfg.config_hash(), ScenarioConfig::default().config_hash());
}

#[test]
fn missing_file_is_an_io_error() {
    let err = load_scenario_file(&scenarios_dir().join("nope.toml")).unwrap_err();
    assert!(matches!(err, ScenarioError::Io { .. }), "{err}");
}

#[test]
fn zero_balance_names_the_rule() {
    let text = ScenarioConfig::default().to_toml().replace("initial_balance = 20.0", "initial_balance = 0.0");
    let err = load_scenario(&text).unwrap_err();
    assert!(err.to_string().contains("Remark 1"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn toml_round_trip(
        seed in any::<u64>(),
        vehicles in 2u32..500,
        b0 in 0.5f64..500.0,
        hours in 1.0f64..48.0,
        miners in 1u32..16,
        baseline in any::<bool>(),
    ) {
        let cfg = ScenarioConfig::default().modified(|d| {
            d.seed = seed;
            d.fleet.vehicles = vehicles;
            d.fleet.initial_balance = b0;
            d.time.period_hours = hours;
            d.ledger.miners = miners;
            d.behavior_policy = if baseline { BehaviorPolicy::Baseline } else { BehaviorPolicy::DltControlled };
        }).unwrap();
        let back = load_scenario(&cfg.to_toml()).unwrap();
        prop_assert_eq!(back.config_hash(), cfg.config_hash());
        prop_assert_eq!(back, cfg);
    }
}
