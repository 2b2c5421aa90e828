use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use afttest::sim::{calibrate_censoring, generate_sample, SimConfig};

const M1: &str = "Surv(time, status) ~ bili + protime + albumin + age + edema + trt";
const M2: &str = "Surv(time, status) ~ log_bili + protime + albumin + age + edema + trt";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_afttest"));
    c.env_remove("AFTTEST_THREADS").env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name).display().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// A small simulated dataset written as CSV.
fn small_csv(dir: &Path, n: usize) -> PathBuf {
    let cfg = SimConfig { n, seed: 2, ..SimConfig::default() };
    let d = generate_sample(&cfg, calibrate_censoring(&cfg), 0).unwrap();
    let mut text = String::from("time,status,z1,z2\n");
    for i in 0..d.n() {
        let r = d.row(i);
        text.push_str(&format!("{},{},{},{}\n", d.time()[i], u8::from(d.status()[i]), r[0], r[1]));
    }
    let path = dir.join("small.csv");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn help_lists_the_documented_defaults() {
    let o = run(&["test", "--help"]);
    assert!(o.status.success());
    let help = String::from_utf8_lossy(&o.stdout);
    for want in ["[default: 200]", "[default: 50]", "[default: omnibus]", "[default: rr]", "[default: ns]"] {
        assert!(help.contains(want), "missing {want} in\n{help}");
    }
}

#[test]
fn npath_below_ten_is_raised_to_ten() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let o = run(&[
        "test", "--data", &data("pbc.csv"), "--formula", M2, "--test-type", "covform", "--cov-tested", "log_bili",
        "--npath", "5", "--seed", "1", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("npath 5 raised to 10"));
    let doc = json(&out);
    assert_eq!(doc["npath"], 10);
    assert_eq!(doc["apprx_process"].as_array().unwrap().len(), 10);
    assert_eq!(doc["covTested"], "log_bili");
    assert_eq!(doc["class"], serde_json::json!(["afttest", "htest"]));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("p_value "));
}

#[test]
fn plot_caps_paths_at_the_stored_count_and_draws_five_omnibus_panels() {
    let dir = tempfile::tempdir().unwrap();
    let csv = small_csv(dir.path(), 30);
    let out = dir.path().join("r.json");
    let o = run(&[
        "test", "--data", csv.to_str().unwrap(), "--formula", "Surv(time, status) ~ z1 + z2", "--npath", "12",
        "--npathsave", "4", "--seed", "3", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc = json(&out);
    assert_eq!(doc["apprx_process"].as_array().unwrap().len(), 4);
    assert_eq!(doc["obs_process"].as_array().unwrap().len(), 30);

    let svg = dir.path().join("plot.svg");
    let o = run(&["plot", out.to_str().unwrap(), "--npath", "100", "--out", svg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(dir.path().join("plot.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("panel,series,x,y"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    let mut panels: Vec<&str> = rows.iter().map(|r| r[0]).collect();
    panels.dedup();
    assert_eq!(panels, ["1", "2", "3", "4", "5"]);
    let mut series: Vec<&str> = rows.iter().filter(|r| r[0] == "1").map(|r| r[1]).collect();
    series.dedup();
    assert_eq!(series, ["observed", "path_1", "path_2", "path_3", "path_4"]);
    assert_eq!(rows.len(), 5 * 5 * 30);
    assert!(fs::read_to_string(&svg).unwrap().starts_with("<svg"));

    let o = run(&["plot", out.to_str().unwrap(), "--quantiles", "10,50", "--out", svg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn plotting_something_else_reports_the_class_error() {
    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("x.json");
    fs::write(&bogus, r#"{"beta": [1.0]}"#).unwrap();
    let o = run(&["plot", bogus.to_str().unwrap(), "--out", dir.path().join("p.svg").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Must be afttest class"), "{}", stderr(&o));
}

#[test]
fn result_documents_are_byte_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (k, threads) in ["1", "1", "8"].iter().enumerate() {
        let out = dir.path().join(format!("r{k}.json"));
        let o = run(&[
            "test", "--data", &data("pbc.csv"), "--formula", M1, "--test-type", "link", "--npath", "30", "--seed", "7",
            "--threads", threads, "--out", out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        outputs.push(fs::read(&out).unwrap());
    }
    assert!(outputs[0] == outputs[1], "repeated run differs");
    assert!(outputs[0] == outputs[2], "thread count changes the document");
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let base = ["test", "--data", &data("pbc.csv"), "--out", out.to_str().unwrap()];
    let cases: [&[&str]; 4] = [
        &["--formula", M1, "--test-type", "quadratic"],
        &["--formula", "Surv(time, status) bili"],
        &["--formula", M1, "--test-type", "covform", "--cov-tested", "trt"],
        &["--formula", M1, "--test-type", "covform", "--cov-tested", "weight"],
    ];
    for extra in cases {
        let o = bin().args(base).args(extra).output().unwrap();
        assert_eq!(o.status.code(), Some(2), "{extra:?}: {}", stderr(&o));
    }
    let o = run(&["fit", "--data", "/nonexistent.csv", "--formula", M1]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn fit_prints_coefficients_for_both_estimators() {
    for method in ["rr", "ls"] {
        let o = run(&["fit", "--data", &data("pbc.csv"), "--formula", M1, "--est-method", method]);
        assert!(o.status.success(), "{}", stderr(&o));
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(v["n"], 312);
        assert_eq!(v["beta"].as_array().unwrap().len(), 6);
        assert!(v["beta"].as_array().unwrap().iter().all(|b| b.as_f64().unwrap().is_finite()));
    }
}

#[test]
fn recoding_the_raw_table_reproduces_the_shipped_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pbc.csv");
    let o = run(&["recode-pbc", "--input", &data("pbc_raw.csv"), "--output", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out).unwrap(), fs::read_to_string(data("pbc.csv")).unwrap());
}

#[test]
fn simulate_writes_one_row_per_test() {
    let o = run(&["simulate", "--n", "30", "--replications", "2", "--npath", "10", "--tests", "link,covform:2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("test,n,p,"));
    assert!(lines[1].starts_with("link,30,2,") && lines[2].starts_with("covform(2),30,2,"));
}
