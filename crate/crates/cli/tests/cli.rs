use std::path::PathBuf;
use std::process::{Command, Output};

fn shillbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shillbench")).args(args).output().expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("shillbench-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn config(name: &str, body: &str) -> String {
    let path = scratch(name).join("config.json");
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const K3_SP: &str = r#"{"scenario":"k3","types":{"kind":"uniform-grid","points":3},
 "population":{"kind":"fixed","n":2},"mechanisms":[{"format":"lit-second-price"}],"checks":[]}"#;

#[test]
fn lit_first_price_bid_on_uniform_types() {
    let o = shillbench(&["bid", "--mech", "lit-first-price", "--theta", "0.5", "--n", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((v["bid"].as_f64().unwrap() - 0.25).abs() < 1e-12);
}

#[test]
fn dark_first_price_bid_table_is_csv() {
    let o = shillbench(&["bid", "--mech", "dark-first-price", "--table", "--steps", "4", "--population", "1:0.5,2:0.5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "theta,bid");
    assert_eq!(rows.len(), 6);
    let last: Vec<f64> = rows[5].split(',').map(|x| x.parse().unwrap()).collect();
    assert!((last[1] - 0.25).abs() < 1e-9);
}

#[test]
fn exact_revenue_on_three_point_grid() {
    let cfg = config("revenue", K3_SP);
    let o = shillbench(&["--config", &cfg, "revenue", "--exact"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v[0]["exact"], "5/18");
}

#[test]
fn compatible_check_exits_zero() {
    let cfg = config("compatible", K3_SP);
    let o = shillbench(&["--config", &cfg, "check-ic", "--notion", "expost-buyer"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("(compatible)"));
}

#[test]
fn violated_check_exits_two() {
    let cfg = config(
        "violated",
        r#"{"scenario":"tc","types":{"kind":"uniform-grid","points":3},"population":{"kind":"fixed","n":2},
            "mechanisms":[{"format":"tie-corrected-second-price"}],"checks":[]}"#,
    );
    let o = shillbench(&["--config", &cfg, "check-ic", "--notion", "expost-buyer"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v[0]["verdict"], "violated");
}

#[test]
fn grid_certified_check_exits_three() {
    let cfg = config(
        "qualified",
        r#"{"scenario":"c","types":{"kind":"uniform"},"population":{"kind":"fixed","n":2},
            "mechanisms":[{"format":"lit-second-price","reserve":"optimal"}],"checks":[]}"#,
    );
    let o = shillbench(&["--config", &cfg, "check-ic", "--notion", "bayes-seller", "--lattice", "10"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("grid-certified only"));
}

#[test]
fn empty_mechanism_list_is_a_config_error() {
    let cfg = config(
        "empty",
        r#"{"scenario":"x","types":{"kind":"uniform"},"population":{"kind":"fixed","n":2},"mechanisms":[],"checks":[]}"#,
    );
    let o = shillbench(&["--config", &cfg, "revenue"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("mechanism list is empty"));
}

#[test]
fn unknown_config_field_is_rejected() {
    let cfg = config(
        "unknown",
        r#"{"scenario":"x","types":{"kind":"uniform"},"population":{"kind":"fixed","n":2},
            "mechanisms":[{"format":"lit-second-price"}],"checks":[],"bogus":1}"#,
    );
    let o = shillbench(&["--config", &cfg, "revenue"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn outputs_are_written_to_out_dir() {
    let cfg = config("outputs", K3_SP);
    let dir = scratch("outputs-dir");
    let o = shillbench(&["--config", &cfg, "--out", dir.to_str().unwrap(), "--format", "both", "revenue"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.join("k3.json").exists());
    assert!(dir.join("k3_revenue.csv").exists());
}

#[test]
fn reproduce_only_runs_the_named_scenarios() {
    let o = shillbench(&["reproduce", "--only", "lit-fp-bid,tc-fp-monotone"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("lit-fp-bid") && text.contains("tc-fp-monotone"));
    assert!(!text.contains("optimal-posted-price"));
}

#[test]
fn reproduce_reports_a_corrupted_golden_file() {
    let golden = include_str!("../../core/golden/reproduce.csv").replace("6.25000000000e-1", "6.26000000000e-1");
    let path = scratch("golden").join("golden.csv");
    std::fs::write(&path, golden).unwrap();
    let o = shillbench(&["reproduce", "--only", "tc-fp-monotone", "--golden", path.to_str().unwrap()]);
    assert_ne!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("tc-fp-monotone/g2"));
    assert!(stderr(&o).contains("tc-fp-monotone"));
}

#[test]
fn unknown_scenario_name_fails() {
    let o = shillbench(&["reproduce", "--only", "no-such-scenario"]);
    assert_eq!(o.status.code(), Some(1));
}
