use std::path::{Path, PathBuf};

use serde_json::Value;
use tempfile::TempDir;
use wcc_cli::simulate::{REPS_FILE, SUMMARY_FILE};
use wcc_cli::{exit_code, run, EXIT_OK, EXIT_SOLVER, EXIT_VALIDATION};
use wcc_core::io::{read_dataset_file, write_dataset};
use wcc_core::simulation::{generate_population, poisson_sample, ScenarioSpec};
use wcc_core::WccError;
use wcc_oracles::weighted_ls_all;

fn wcc(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("wcc").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

/// A sampled regression dataset written to `dir/data.csv`.
fn regression_csv(dir: &Path) -> PathBuf {
    let spec = ScenarioSpec::regression(30.0, 4, 1);
    let pop = generate_population(&spec, 0).unwrap();
    let data = poisson_sample(&pop, spec.seed).unwrap();
    let path = dir.join("data.csv");
    write_dataset(&data, std::fs::File::create(&path).unwrap()).unwrap();
    path
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn matrix(v: &Value) -> Vec<Vec<f64>> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|row| row.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect())
        .collect()
}

#[test]
fn config_lists_the_defaults() {
    let (code, out, _) = wcc(&["config"]);
    assert_eq!(code, EXIT_OK);
    for needle in ["γ=3", "ϑ=1", "C_m = log(mp+q)", "tol=1e-6"] {
        assert!(out.contains(needle), "missing `{needle}` in\n{out}");
    }
}

#[test]
fn missing_column_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "location_id,N,y,x1\na,10,1.0,1.0\na,10,2.0,1.0\n").unwrap();
    let (code, _, err) = wcc(&["fit", path.to_str().unwrap(), "--p", "1"]);
    assert_eq!(code, EXIT_VALIDATION);
    assert!(err.contains("pi"), "{err}");
}

#[test]
fn unknown_flag_and_bad_grid_are_validation_errors() {
    let dir = TempDir::new().unwrap();
    let csv = regression_csv(dir.path());
    let csv = csv.to_str().unwrap();
    assert_eq!(wcc(&["fit", csv, "--p", "2", "--frobnicate"]).0, EXIT_VALIDATION);
    assert_eq!(wcc(&["fit", csv, "--p", "2", "--lambda-grid", "1:2"]).0, EXIT_VALIDATION);
    assert_eq!(wcc(&["fit", csv, "--p", "2", "--gamma", "0.5", "--lambda", "0.1"]).0, EXIT_VALIDATION);
    assert_eq!(wcc(&["fit", csv, "--p", "2", "--lambda", "0.1", "--lambda-grid", "0.1:1:3"]).0, EXIT_VALIDATION);
}

#[test]
fn numerical_failures_map_to_the_solver_code() {
    let singular = WccError::Singular { context: "beta update".into() };
    assert_eq!(exit_code(&singular), EXIT_SOLVER);
    assert_eq!(exit_code(&WccError::Config("x".into())), EXIT_VALIDATION);
}

#[test]
fn zero_lambda_fit_is_per_location_wls() {
    let dir = TempDir::new().unwrap();
    let csv = regression_csv(dir.path());
    let out = dir.path().join("fit.json");
    let (code, _, err) = wcc(&[
        "fit",
        csv.to_str().unwrap(),
        "--p",
        "2",
        "--lambda",
        "0",
        "--tol",
        "1e-11",
        "--max-iter",
        "200000",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    let report = read_json(&out);
    assert_eq!(report["schema_version"], 1);
    let beta = matrix(&report["fit"]["beta"]);
    let wls = weighted_ls_all(&read_dataset_file(&csv, 2, 0).unwrap()).unwrap();
    for (i, row) in beta.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            assert!((v - wls[(i, k)]).abs() < 1e-8);
        }
    }
}

#[test]
fn unweighted_fit_differs() {
    let dir = TempDir::new().unwrap();
    let csv = regression_csv(dir.path());
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let base = ["fit", csv.to_str().unwrap(), "--p", "2", "--lambda", "0.05"];
    assert_eq!(wcc(&[&base[..], &["--out", a.to_str().unwrap()]].concat()).0, EXIT_OK);
    assert_eq!(wcc(&[&base[..], &["--unweighted", "--out", b.to_str().unwrap()]].concat()).0, EXIT_OK);
    let (ra, rb) = (read_json(&a), read_json(&b));
    assert_eq!(rb["weighted"], false);
    let (ba, bb) = (matrix(&ra["fit"]["beta"]), matrix(&rb["fit"]["beta"]));
    let diff = ba
        .iter()
        .flatten()
        .zip(bb.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(diff > 1e-3, "{diff}");
}

#[test]
fn grid_fit_reports_the_path_and_original_scale() {
    let dir = TempDir::new().unwrap();
    let csv = regression_csv(dir.path());
    let out = dir.path().join("fit.json");
    let (code, text, err) = wcc(&[
        "fit",
        csv.to_str().unwrap(),
        "--p",
        "2",
        "--lambda-grid",
        "0.01:1:6",
        "--standardize",
        "--refit-oracle",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(text.contains("K_hat"));
    let report = read_json(&out);
    assert_eq!(report["lambda_path"].as_array().unwrap().len(), 6);
    let k_hat = report["partition"]["k_hat"].as_u64().unwrap() as usize;
    assert_eq!(matrix(&report["original_scale"]["alpha"]).len(), k_hat);
    assert!(report["refit"]["alpha"].is_array());
    assert!(report["original_scale"]["refit"]["alpha"].is_array());
}

#[test]
fn invalid_scenario_is_rejected() {
    assert_eq!(wcc(&["simulate", "--scenario", "weird"]).0, EXIT_VALIDATION);
    assert_eq!(wcc(&["simulate", "--scenario", "mean", "--known-variance"]).0, EXIT_VALIDATION);
    assert_eq!(wcc(&["simulate", "--scenario", "mean", "--methods", "ols"]).0, EXIT_VALIDATION);
    assert_eq!(wcc(&["simulate", "--scenario", "mean", "--reps", "0"]).0, EXIT_VALIDATION);
}

#[test]
fn single_rep_flags_the_spread_as_unavailable() {
    let dir = TempDir::new().unwrap();
    let (code, out, err) = wcc(&[
        "simulate",
        "--scenario",
        "mean",
        "--n",
        "10",
        "--reps",
        "1",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.contains("(n/a)"), "{out}");
    let summary = read_json(&dir.path().join(SUMMARY_FILE));
    assert!(summary["methods"][0]["k_sd"].is_null());
    let reps = std::fs::read_to_string(dir.path().join(REPS_FILE)).unwrap();
    assert!(reps.starts_with("rep,method,K_hat,ARI,RMSE,lambda_star,converged\n"));
    assert_eq!(reps.lines().count(), 3);
}

#[test]
fn simulate_output_is_reproducible() {
    let dirs: Vec<TempDir> = (0..3).map(|_| TempDir::new().unwrap()).collect();
    for (dir, threads) in dirs.iter().zip(["1", "1", "3"]) {
        let (code, _, err) = wcc(&[
            "simulate",
            "--scenario",
            "mean",
            "--n",
            "10",
            "--reps",
            "4",
            "--seed",
            "9",
            "--threads",
            threads,
            "--out-dir",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_OK, "{err}");
    }
    for file in [REPS_FILE, SUMMARY_FILE] {
        let first = std::fs::read(dirs[0].path().join(file)).unwrap();
        for d in &dirs[1..] {
            assert_eq!(first, std::fs::read(d.path().join(file)).unwrap(), "{file}");
        }
    }
}
