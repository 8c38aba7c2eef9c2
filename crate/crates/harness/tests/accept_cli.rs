use serde_json::Value;
use std::path::Path;
use std::process::{Command, Output};

fn fcalc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fcalc")).args(args).output().expect("binary runs")
}

fn run_geometry(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--scenario", "euclidean1d", "--study", "geometry", "--seed", "7", "-q", "--out"];
    args.push(out.to_str().unwrap());
    args.extend_from_slice(extra);
    fcalc(&args)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn euclidean_geometry_passes_and_writes_all_formats() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_geometry(dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let report = read_json(&dir.path().join("geometry.json"));
    assert_eq!(report["schema"], "fcalc-report/1");
    assert!((report["data"]["c_rho"].as_f64().unwrap() - 1.0).abs() < 0.05);
    assert!(report["failures"].as_array().unwrap().is_empty());
    let tsv = std::fs::read_to_string(dir.path().join("geometry.tsv")).unwrap();
    assert!(tsv.starts_with("hbar\tquantity\tvalue\n"));
    let csv = std::fs::read_to_string(dir.path().join("geometry.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("rho_flat_error,")));
}

#[test]
fn reports_are_byte_identical_across_runs_and_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(run_geometry(a.path(), &[]).status.success());
    assert!(run_geometry(b.path(), &["--threads", "2"]).status.success());
    for f in ["geometry.json", "geometry.csv", "geometry.tsv"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
}

#[test]
fn cached_and_fresh_metric_tables_agree() {
    let dir = tempfile::tempdir().unwrap();
    let fresh = tempfile::tempdir().unwrap();
    assert!(run_geometry(dir.path(), &[]).status.success());
    let cache = dir.path().join("cache");
    let files: Vec<_> = std::fs::read_dir(&cache).unwrap().collect();
    assert_eq!(files.len(), 1);
    let first = std::fs::read(dir.path().join("geometry.json")).unwrap();
    // Second run reads the table back from disk.
    assert!(run_geometry(dir.path(), &[]).status.success());
    let cached = read_json(&dir.path().join("geometry.json"));
    assert!(run_geometry(fresh.path(), &["--no-cache"]).status.success());
    assert!(!fresh.path().join("cache").exists());
    let recomputed = read_json(&fresh.path().join("geometry.json"));
    assert_eq!(first, std::fs::read(dir.path().join("geometry.json")).unwrap());
    for key in ["c_rho", "c_mu"] {
        let (p, q) = (cached["data"][key].as_f64().unwrap(), recomputed["data"][key].as_f64().unwrap());
        assert!((p - q).abs() <= 1e-12, "{key}: {p} vs {q}");
    }
    for (c, f) in cached["checks"].as_array().unwrap().iter().zip(recomputed["checks"].as_array().unwrap()) {
        assert!((c["value"].as_f64().unwrap() - f["value"].as_f64().unwrap()).abs() <= 1e-12);
    }
}

#[test]
fn validate_reports_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.conf");
    std::fs::write(&bad, "[chart]\nfields = 1\ndomain = -1, 1\nepsilon = 1\n[profile]\nkind = bump\n").unwrap();
    let out = fcalc(&["validate", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("chart.weights required"));

    let typo = dir.path().join("typo.conf");
    std::fs::write(
        &typo,
        "[chart]\nweights = 1\nfields = 1\ndomain = -1, 1\nepsilon = 1\n[profile]\nkind = bump\n[study]\nj_maks = 8\n",
    )
    .unwrap();
    let out = fcalc(&["validate", typo.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 9") && err.contains("study.j_maks"), "{err}");

    let good = dir.path().join("good.conf");
    std::fs::write(
        &good,
        "name = line\n[chart]\nweights = 1, 1\nfields = 1 ; 1\ndomain = -1, 1\nepsilon = 1\n\
         [profile]\nkind = odd-bump-hbar\nbeta = 0.5\ncoupling = 0.2\n",
    )
    .unwrap();
    let out = fcalc(&["validate", good.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_scenario_and_study_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let out = fcalc(&["run", "--scenario", "heisenberg", "--study", "geometry", "--out", out_dir]);
    assert_eq!(out.status.code(), Some(1));
    let out = fcalc(&["run", "--scenario", "euclidean1d", "--study", "spectra", "--out", out_dir]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn list_scenarios_names_every_builtin() {
    let out = fcalc(&["list-scenarios"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for name in ["euclidean1d", "euclidean2d", "redundant_line", "grushin3"] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name} missing");
    }
}
