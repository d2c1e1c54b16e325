use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use honest_ate::cli::report::round_half_even;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_honest-ate"))
}

fn write_data(dir: &Path) -> PathBuf {
    let mut text = String::from("y,d,x1,x2\n");
    for i in 0..30 {
        let d = i % 3 == 0;
        let x1 = (i * 7 % 11) as f64 / 3.0;
        let x2 = (i * 5 % 13) as f64 / 6.0;
        let y = x1 + 0.5 * x2 + if d { 1.0 } else { 0.0 } + ((i * 37 % 17) as f64 - 8.0) / 10.0;
        text.push_str(&format!("{y},{},{x1},{x2}\n", d as u8));
    }
    let p = dir.join("data.csv");
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn common(csv: &Path) -> Vec<String> {
    ["--csv", csv.to_str().unwrap(), "--outcome", "y", "--treatment", "d"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

fn run_cmd(cmd: &str, csv: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd.to_string()];
    args.extend(common(csv));
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    run(&refs)
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn estimate_report_shape() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_data(dir.path());
    let v = json(&run_cmd("estimate", &csv, &["--C", "2", "--target", "catt"]));
    assert_eq!(v["schema"], "honest-ate/report");
    assert_eq!(v["version"], 1);
    assert_eq!(v["config"]["target"], "catt");
    let rows = v["results"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    for (r, name) in rows.iter().zip(["rmse", "flci", "oci"]) {
        assert_eq!(r["criterion"], name);
        let (lo, hi, est) = (r["ci_lower"].as_f64().unwrap(), r["ci_upper"].as_f64().unwrap(), r["estimate"].as_f64().unwrap());
        assert!(lo < est && est < hi);
    }
    let limits = v["results"]["limits"].as_array().unwrap();
    assert_eq!(limits[0]["estimator"], "optimal_limit_zero");
    assert_eq!(limits[1]["estimator"], "optimal_limit_infinity");
}

#[test]
fn table_cells_round_json_half_even() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_data(dir.path());
    let v = json(&run_cmd("estimate", &csv, &["--criterion", "flci"]));
    let table = run_cmd("estimate", &csv, &["--criterion", "flci", "--format", "table"]);
    assert!(table.status.success());
    let text = String::from_utf8(table.stdout).unwrap();
    let line = text.lines().nth(2).unwrap();
    let cells: Vec<&str> = line.split_whitespace().collect();
    let row = &v["results"]["rows"][0];
    assert_eq!(cells[0], "optimal");
    assert_eq!(cells[5], round_half_even(&row["estimate"].to_string(), 3));
    assert_eq!(cells[6], round_half_even(&row["maxbias"].to_string(), 3));
    assert_eq!(cells[9], round_half_even(&row["cv"].to_string(), 3));
}

#[test]
fn sensitivity_is_long_format() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_data(dir.path());
    let v = json(&run_cmd("sensitivity", &csv, &["--C-grid", "0.25,0.5,1,2", "--criterion", "rmse,oci"]));
    let rows = v["results"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 8);
    let cs: Vec<f64> = rows.iter().map(|r| r["c"].as_f64().unwrap()).collect();
    assert_eq!(cs, vec![0.25, 0.25, 0.5, 0.5, 1.0, 1.0, 2.0, 2.0]);
    // worst-case bias of the tuned estimator grows with C
    let bias: Vec<f64> = rows.iter().step_by(2).map(|r| r["maxbias"].as_f64().unwrap()).collect();
    assert!(bias.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn cache_roundtrip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_data(dir.path());
    let cache = dir.path().join("cache");
    let cache_s = cache.to_str().unwrap();
    let missing = run_cmd("estimate", &csv, &["--cache-dir", cache_s, "--from-cache"]);
    assert_eq!(missing.status.code(), Some(2));
    let fresh = run_cmd("estimate", &csv, &[]);
    let first = run_cmd("estimate", &csv, &["--cache-dir", cache_s]);
    let second = run_cmd("estimate", &csv, &["--cache-dir", cache_s, "--from-cache"]);
    assert!(fresh.status.success() && first.status.success() && second.status.success());
    assert_eq!(fresh.stdout, first.stdout);
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(std::fs::read_dir(&cache).unwrap().count(), 1);
}

#[test]
fn matching_and_audit() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_data(dir.path());
    let v = json(&run_cmd("matching", &csv, &["--M-range", "1:3", "--ties", "average"]));
    assert_eq!(v["results"]["fits"].as_array().unwrap().len(), 3);
    assert_eq!(v["results"]["ties"], "average");
    assert_eq!(v["results"]["best"].as_array().unwrap().len(), 3);

    // difference in means with a large C: bias dominates the standard error
    let w: String = (0..30).map(|i| if i % 3 == 0 { "0.1\n" } else { "-0.05\n" }).collect();
    let wf = dir.path().join("w.csv");
    std::fs::write(&wf, format!("weight\n{w}")).unwrap();
    let v = json(&run_cmd("audit", &csv, &["--weights", wf.to_str().unwrap(), "--C", "5"]));
    let warn = v["results"]["warnings"].as_array().unwrap();
    assert!(warn.iter().any(|m| m.as_str().unwrap().contains("far above 1.96")));
    assert!(v["results"]["row"]["cv"].as_f64().unwrap() > 3.0);
}

#[test]
fn diagnostics_and_path_dump() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_data(dir.path());
    let v = json(&run_cmd("diagnostics", &csv, &[]));
    let r = &v["results"];
    assert!(r["knots"].as_u64().unwrap() >= 1);
    let l = r["lindeberg_optimal_rmse"].as_f64().unwrap();
    assert!(l > 0.0 && l <= 1.0);
    assert!(r["efficiency_flci"].as_f64().unwrap() >= 0.717);
    let warned = r["warnings"].as_array().unwrap().iter().any(|m| m.as_str().unwrap().contains("RMSE-optimal"));
    assert_eq!(warned, l > 0.1);

    let v = json(&run_cmd("path-dump", &csv, &[]));
    let knots = v["results"]["knots"].as_array().unwrap();
    let mus: Vec<f64> = knots.iter().map(|k| k["mu"].as_f64().unwrap()).collect();
    assert_eq!(mus[0], 0.0);
    assert!(mus.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_data(dir.path());
    let code = |o: Output| o.status.code();

    assert_eq!(code(run(&["estimate", "--csv", csv.to_str().unwrap(), "--outcome", "nope", "--treatment", "d"])), Some(2));
    assert_eq!(code(run_cmd("estimate", &csv, &["--C", "-1"])), Some(2));
    assert_eq!(code(run_cmd("sensitivity", &csv, &["--C-grid", "2,1"])), Some(2));
    assert_eq!(code(run_cmd("estimate", &csv, &["--variance", "kernel"])), Some(2));
    assert_eq!(code(run_cmd("estimate", &csv, &["--bogus"])), Some(2));
    assert_eq!(code(run_cmd("matching", &csv, &["--M", "40"])), Some(2));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "y,d,x\n1,1,0\n2,0,1\n3,2,1\n").unwrap();
    let out = run(&["estimate", "--csv", bad.to_str().unwrap(), "--outcome", "y", "--treatment", "d"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 4"));

    let wf = dir.path().join("w.csv");
    std::fs::write(&wf, "1\n-1\n").unwrap();
    assert_eq!(code(run_cmd("audit", &csv, &["--weights", wf.to_str().unwrap()])), Some(3));
    let unnormalized: String = (0..30).map(|i| if i % 3 == 0 { "0.5\n" } else { "-0.05\n" }).collect();
    std::fs::write(&wf, unnormalized).unwrap();
    let out = run_cmd("audit", &csv, &["--weights", wf.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("arbitrarily large"));
}
