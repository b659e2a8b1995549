use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bets(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bets"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn small_scenario(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("small.toml");
    let text = bets_core::ScenarioConfig::default()
        .modified(|d| {
            d.fleet.vehicles = 20;
            d.time.period_hours = 4.0;
            d.road.circumference_km = 2.0;
        })
        .unwrap()
        .to_toml();
    fs::write(&path, text).unwrap();
    path
}

fn error_json(out: &Output) -> serde_json::Value {
    assert!(!out.status.success());
    let line = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(line.trim()).expect("stderr is one JSON record")
}

#[test]
fn run_writes_the_documented_files() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = small_scenario(tmp.path());
    let out = tmp.path().join("o");
    let res = bets(&["run", "--scenario", scenario.to_str().unwrap(), "--seed", "3"], &out);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for f in ["summary.json", "events.csv", "samples.csv", "accounts.csv", "trace.csv", "manifest.json", "scenario.toml", "chain/chain.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["command"], "run");
    let events = fs::read_to_string(out.join("events.csv")).unwrap();
    assert!(events.starts_with("t,kind,subject,data"));
}

#[test]
fn scenario_copy_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = small_scenario(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(bets(&["run", "--scenario", scenario.to_str().unwrap(), "--seed", "9"], &a).status.success());
    let copy = a.join("scenario.toml");
    assert!(bets(&["run", "--scenario", copy.to_str().unwrap(), "--no-chain"], &b).status.success());
    assert_eq!(fs::read(a.join("summary.json")).unwrap(), fs::read(b.join("summary.json")).unwrap());
    assert_eq!(fs::read(a.join("events.csv")).unwrap(), fs::read(b.join("events.csv")).unwrap());
    assert!(!b.join("chain").exists());
}

#[test]
fn costs_over_a_run_log() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = small_scenario(tmp.path());
    let run_dir = tmp.path().join("run");
    assert!(bets(&["run", "--scenario", scenario.to_str().unwrap()], &run_dir).status.success());
    let costs_dir = tmp.path().join("costs");
    let events = run_dir.join("events.csv");
    let res = bets(&["costs", "--events", events.to_str().unwrap()], &costs_dir);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(costs_dir.join("costs.json")).unwrap()).unwrap();
    assert!(report["run"].is_object());
    let csv = fs::read_to_string(costs_dir.join("costs.csv")).unwrap();
    assert!(csv.contains("UserAuthority"));
}

#[test]
fn invalid_scenario_gives_an_error_record() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    let text = bets_core::ScenarioConfig::default().to_toml().replace("initial_balance = 20.0", "initial_balance = -1.0");
    fs::write(&bad, text).unwrap();
    let out = tmp.path().join("o");
    let v = error_json(&bets(&["run", "--scenario", bad.to_str().unwrap()], &out));
    assert_eq!(v["status"], "error");
    assert_eq!(v["command"], "run");
    assert!(v["error"].as_str().unwrap().contains("Remark 1"));
    assert!(!out.join("summary.json").exists());
}

#[test]
fn plot_of_empty_table_fails_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("empty.csv");
    fs::write(&input, "value,l_total,p_mc,p_closed_form\n").unwrap();
    let out = tmp.path().join("o");
    let v = error_json(&bets(&["plot", "--kind", "success_sweep", "--input", input.to_str().unwrap()], &out));
    assert_eq!(v["command"], "plot");
    assert!(!out.join("success_sweep.svg").exists());
}

#[test]
fn unknown_sweep_parameter_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let v = error_json(&bets(&["sweep", "--param", "colour", "--grid", "1,2"], &tmp.path().join("o")));
    assert_eq!(v["command"], "sweep");
}

#[test]
fn sweep_with_plots() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let res = bets(&["sweep", "--param", "miner_count", "--grid", "1:8:1", "--plot"], &out);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let mut rdr = csv::Reader::from_path(out.join("sweep.csv")).unwrap();
    let p: Vec<f64> = rdr.records().map(|r| r.unwrap()[4].parse().unwrap()).collect();
    assert_eq!(p.len(), 8);
    assert!(p.windows(2).all(|w| w[1] >= w[0]));
    assert!(out.join("success_sweep.svg").exists());
}
