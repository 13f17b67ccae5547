//! The operator CLI as a user would run it.

mod common;

use std::collections::BTreeMap;
use std::path::Path;

use common::process::{nourid, write_config};
use nourid::registry::Registry;
use nourid::service::REGISTRY_DIR;
use serde_json::Value;

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            for (k, v) in files(&p) {
                out.insert(format!("{}/{k}", p.file_name().unwrap().to_string_lossy()), v);
            }
        } else {
            out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap());
        }
    }
    out
}

fn run_ok(args: &[&str]) -> String {
    let out = nourid(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn seeding_is_reproducible_and_sized_by_config() {
    let root = tempfile::tempdir().unwrap();
    let config = write_config(root.path());
    let c = config.to_str().unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    run_ok(&["--config", c, "seed", "--out", a.to_str().unwrap()]);
    run_ok(&["--config", c, "seed", "--out", b.to_str().unwrap()]);
    let (fa, fb) = (files(&a), files(&b));
    assert!(!fa.is_empty());
    assert_eq!(fa, fb);

    let registry = Registry::import(&a.join(REGISTRY_DIR)).unwrap();
    assert_eq!(registry.identities().count(), 12);
    for i in registry.identities() {
        let n = registry.list_parcels_by_owner(i.cin.as_str()).unwrap().len();
        assert!((1..=3).contains(&n), "{} owns {n}", i.cin);
    }
    assert_eq!(registry.meters().count(), registry.parcels().count());

    let c2 = root.path().join("c");
    run_ok(&["--config", c, "seed", "--seed", "100", "--out", c2.to_str().unwrap()]);
    assert_ne!(files(&c2), fa);
}

#[test]
fn usage_and_config_errors_exit_2() {
    let out = nourid(&["--config", "/nonexistent/nourid.toml", "seed"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(nourid(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(nourid(&["run", "--n", "many"]).status.code(), Some(2));
    let root = tempfile::tempdir().unwrap();
    let bad = root.path().join("bad.toml");
    std::fs::write(&bad, "[validator]\ndetectability = 2.0\n").unwrap();
    assert_eq!(nourid(&["--config", bad.to_str().unwrap(), "seed"]).status.code(), Some(2));
    assert_eq!(nourid(&["run", "--defect-rate", "1.5"]).status.code(), Some(2));
}

#[test]
fn one_of_each_persona_reaches_issued() {
    let root = tempfile::tempdir().unwrap();
    let config = write_config(root.path());
    let report = root.path().join("report.json");
    let data = root.path().join("data");
    let table = run_ok(&[
        "--config",
        config.to_str().unwrap(),
        "run",
        "--n",
        "1",
        "--forecast-sample",
        "1",
        "--data-dir",
        data.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert!(table.contains("issued"), "{table}");
    let r: Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(r["report_version"], 1);
    assert_eq!(r["personas_run"], 3);
    assert_eq!(r["outcomes"]["issued"], 3, "{r}");
    assert_eq!(r["outcomes"]["errors"], 0);
    assert!(r["end_to_end"]["p95_ms"].as_f64().unwrap() > 0.0);
}

#[test]
fn all_defective_documents_issue_nothing() {
    let root = tempfile::tempdir().unwrap();
    let config = write_config(root.path());
    let report = root.path().join("report.json");
    let out = nourid(&[
        "--config",
        config.to_str().unwrap(),
        "run",
        "--n",
        "1",
        "--defect-rate",
        "1.0",
        "--forecast-sample",
        "0",
        "--out",
        report.to_str().unwrap(),
    ]);
    let r: Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(r["outcomes"]["issued"], 0, "{r}");
    assert_eq!(r["outcomes"]["errors"], 0, "{r}");
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn accuracy_is_deterministic_per_seed() {
    let root = tempfile::tempdir().unwrap();
    let run = |seed: &str, name: &str| {
        let path = root.path().join(name);
        run_ok(&["accuracy", "--pairs", "2000", "--docs", "2000", "--seed", seed, "--out", path.to_str().unwrap()]);
        let mut v: Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
        v["matcher"]["elapsed_ms"] = Value::Null;
        v["validator"]["elapsed_ms"] = Value::Null;
        v
    };
    let (a, b, c) = (run("5", "a.json"), run("5", "b.json"), run("6", "c.json"));
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a["matcher"]["balanced_accuracy"].as_f64().unwrap() >= 0.98);
}

#[test]
fn forecast_evaluation_round_trips_through_csv() {
    let root = tempfile::tempdir().unwrap();
    let (csv, a, b) = (root.path().join("csv"), root.path().join("a.json"), root.path().join("b.json"));
    let args = ["forecast-eval", "--properties", "3", "--days", "240", "--seed", "4"];
    nourid(&[&args[..], &["--export-dir", csv.to_str().unwrap(), "--out", a.to_str().unwrap()]].concat());
    let a: Value = serde_json::from_slice(&std::fs::read(&a).unwrap()).unwrap();
    assert_eq!(a["evaluation"]["properties"].as_array().unwrap().len(), 3);

    // The household series read back from CSV evaluates identically.
    let household = csv.join("SYN-0000.csv");
    let text = std::fs::read_to_string(&household).unwrap();
    assert!(text.starts_with("timestamp,kwh\n2023-01-01T00:00:00,"));
    assert_eq!(text.lines().count(), 1 + 240 * 24);
    nourid(&["forecast-eval", "--seed", "4", "--input", household.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    let b: Value = serde_json::from_slice(&std::fs::read(&b).unwrap()).unwrap();
    let (pa, pb) = (&a["evaluation"]["properties"][0], &b["evaluation"]["properties"][0]);
    assert_eq!(pa["model_mape"], pb["model_mape"]);
    assert_eq!(pa["baseline_mape"], pb["baseline_mape"]);
    assert_eq!(pb["deid"], "SYN-0000");

    let out = nourid(&["forecast-eval", "--input", household.to_str().unwrap(), "--property-type", "castle"]);
    assert_eq!(out.status.code(), Some(2));
}
