use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_greenfilter");

fn scalar_model(n_steps: usize, sigma_t: f64) -> String {
    format!(
        r#"{{"t0": 0, "T": 1, "n_steps": {n_steps}, "n": 1, "p": 1, "m": 1,
  "F": {{"constant": [[0]]}}, "G": {{"constant": [[1]]}}, "Q": {{"constant": [[1]]}},
  "H": {{"constant": [[1]]}}, "R": {{"constant": [[1]]}},
  "f": {{"constant": [0]}}, "h": {{"constant": [0]}},
  "x0": [0], "y0": [0], "Pi0": [[0]], "SigmaT": [[{sigma_t}]]}}"#
    )
}

fn write_model(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("GREENFILTER_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn manifest(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn identities_pass_on_scalar_model() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "s1.json", &scalar_model(1000, 0.0));
    let out = dir.path().join("out");
    let res = run(&[
        "verify",
        "--suite",
        "identities",
        "--model",
        model.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let m = manifest(&out);
    assert_eq!(m["exit_code"], 0);
    let checks = m["verification"][0]["checks"].as_array().unwrap();
    assert!(!checks.is_empty());
    assert!(checks.iter().all(|c| c["passed"] == true));
    assert!(out.join("verify.json").exists());
}

#[test]
fn bf_route_refuses_terminal_prior() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "prior.json", &scalar_model(50, 0.5));
    let out = dir.path().join("out");
    let res = run(&[
        "kernel",
        "--route",
        "bf",
        "--model",
        model.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("SigmaT = 0"));
    assert_eq!(manifest(&out)["exit_code"], 2);
}

#[test]
fn simulation_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "s1.json", &scalar_model(100, 0.0));
    let mut files = Vec::new();
    for (name, threads) in [("a", "1"), ("b", "0")] {
        let out = dir.path().join(name);
        let res = Command::new(BIN)
            .args(["simulate", "--paths", "7", "--seed", "42", "--model"])
            .arg(&model)
            .arg("--out")
            .arg(&out)
            .env("GREENFILTER_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(res.status.code(), Some(0));
        assert_eq!(manifest(&out)["seed"], 42);
        files.push(fs::read(out.join("paths.csv")).unwrap());
    }
    assert_eq!(files[0], files[1]);
    assert_eq!(String::from_utf8_lossy(&files[0]).lines().count(), 1 + 7 * 101);
}

#[test]
fn invalid_configs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let negative_noise = scalar_model(10, 0.0).replace(r#""R": {"constant": [[1]]}"#, r#""R": {"constant": [[-1]]}"#);
    for (name, text) in [("missing.json", r#"{"t0": 0}"#.to_string()), ("negative.json", negative_noise)] {
        let model = write_model(dir.path(), name, &text);
        let out = dir.path().join(name.replace(".json", ""));
        let res = run(&["validate", "--model", model.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(res.status.code(), Some(1), "{name}");
        assert!(manifest(&out)["error"].is_string());
    }
}

#[test]
fn off_grid_observations_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "s1.json", &scalar_model(2, 0.0));
    let obs = dir.path().join("obs.csv");
    fs::write(&obs, "t,y_0\n0,0\n0.4,1\n1,2\n").unwrap();
    let out = dir.path().join("out");
    let res = run(&[
        "smooth",
        "--obs",
        obs.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn smoothing_a_simulated_path() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "s1.json", &scalar_model(200, 0.0));
    let sim = dir.path().join("sim");
    let res = run(&["simulate", "--paths", "1", "--seed", "3", "--model", model.to_str().unwrap(), "--out", sim.to_str().unwrap()]);
    // a single path is refused: ensembles need at least two
    assert_eq!(res.status.code(), Some(1));
    let res = run(&["simulate", "--paths", "2", "--seed", "3", "--model", model.to_str().unwrap(), "--out", sim.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0));

    let paths = fs::read_to_string(sim.join("paths.csv")).unwrap();
    let mut obs = String::from("t,y_0\n");
    for line in paths.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols[0] == "0" {
            obs.push_str(&format!("{},{}\n", cols[1], cols[3]));
        }
    }
    let obs_path = dir.path().join("obs.csv");
    fs::write(&obs_path, obs).unwrap();

    let out = dir.path().join("smooth");
    let res = run(&[
        "smooth",
        "--obs",
        obs_path.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let table = fs::read_to_string(out.join("smooth.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "t,filtered_0,smoothed_0,k_diag_0");
    // K(T,T|T) = Π(T) = tanh 1
    let last: Vec<f64> = table.lines().last().unwrap().split(',').map(|s| s.parse().unwrap()).collect();
    assert!((last[3] - 1f64.tanh()).abs() < 1e-3);
    // the smoother agrees with the filter at the horizon
    assert!((last[1] - last[2]).abs() < 1e-9);
    let m = manifest(&out);
    assert_eq!(m["inputs"].as_array().unwrap().len(), 2);
}

#[test]
fn gram_and_kernel_outputs_have_expected_shape() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "s1.json", &scalar_model(100, 0.0));
    let out = dir.path().join("out");
    let res = run(&["gram", "--probes", "0.25,0.5,0.75", "--model", model.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0));
    let gram = fs::read_to_string(out.join("gram_K.csv")).unwrap();
    assert_eq!(gram.lines().count(), 4);
    assert_eq!(gram.lines().next().unwrap().split(',').count(), 3);

    let res = run(&["kernel", "--probes", "0.3", "--model", model.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0));
    let slice = fs::read_to_string(out.join("kernel_K.csv")).unwrap();
    assert_eq!(slice.lines().count(), 2);
    assert_eq!(slice.lines().next().unwrap().split(',').count(), 101);

    let res = run(&["kernel", "--probes", "0.333", "--model", model.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
}
