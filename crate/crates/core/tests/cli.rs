use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use snls::solver::Trajectory;

fn snls(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_snls"))
        .args(args)
        .env("RUST_LOG", "warn")
        .status()
        .expect("spawn snls")
        .code()
        .expect("exit code")
}

fn config(dir: &Path, body: &str) -> String {
    let p = dir.join("config.toml");
    fs::write(&p, format!("experiment = \"e\"\noutput = \"{}\"\n{body}", dir.join("out").display())).unwrap();
    p.to_string_lossy().into_owned()
}

fn exp(dir: &Path) -> PathBuf {
    dir.join("out").join("e")
}

fn files_under(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

const SMALL_NOISE: &str = "
[grid]
L = 2.0
N = 32

[noise]
eps = 0.25
seed = 3
";

#[test]
fn sample_noise_writes_six_fields_and_a_manifest_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SMALL_NOISE);
    assert_eq!(snls(&["sample-noise", &cfg]), 0);
    let bundle = fs::read_dir(exp(dir.path()).join("fields")).unwrap().next().unwrap().unwrap().path();
    let bins = fs::read_dir(&bundle)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "bin"))
        .count();
    assert_eq!(bins, 6);
    assert!(bundle.join("bundle.json").exists());
    assert!(exp(dir.path()).join("manifest.json").exists());

    let first = files_under(&exp(dir.path()).join("fields"));
    assert_eq!(snls(&["sample-noise", &cfg, "--force"]), 0);
    assert_eq!(first, files_under(&exp(dir.path()).join("fields")));
}

#[test]
fn seed_range_times_eps_list_gives_one_row_per_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "
[grid]
L = 2.0
N = 32

[noise]
k_list = [0, 1, 2]
seed_range = [0, 99]
",
    );
    assert_eq!(snls(&["sample-noise", &cfg]), 0);
    let m: serde_json::Value = serde_json::from_slice(&fs::read(exp(dir.path()).join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["contents"]["bundles"].as_array().unwrap().len(), 300);
    let rows = csv::Reader::from_path(exp(dir.path()).join("csv/bundles.csv")).unwrap().records().count();
    assert_eq!(rows, 300);
}

#[test]
fn existing_output_is_not_overwritten_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SMALL_NOISE);
    assert_eq!(snls(&["sample-noise", &cfg]), 0);
    let before = files_under(&exp(dir.path()));
    assert_eq!(snls(&["sample-noise", &cfg, "--seed", "4"]), 2);
    assert_eq!(before, files_under(&exp(dir.path())));
}

#[test]
fn zero_horizon_run_has_a_single_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &format!("{SMALL_NOISE}\n[time]\nT = 0.0\n"));
    assert_eq!(snls(&["run", &cfg]), 0);
    let traj = Trajectory::load(&exp(dir.path())).unwrap();
    assert_eq!(traj.snapshots.len(), 1);
    assert_eq!(traj.snapshots[0].t, 0.0);
}

#[test]
fn focusing_blow_up_exits_with_numeric_abort_and_keeps_the_partial_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "
[grid]
L = 2.0
N = 32

[noise]
enabled = false

[model]
lambda = 1.0
sigma = 400.0

[initial]
width = 0.5
amplitude = 3.0

[time]
T = 0.1
dt = 1e-3
snapshot_every = 1
",
    );
    assert_eq!(snls(&["run", &cfg]), 3);
    let traj = Trajectory::load(&exp(dir.path())).unwrap();
    assert!(!traj.snapshots.is_empty());
    assert!(traj.last().u.is_finite());
}

#[test]
fn empty_study_selection_succeeds_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &format!("{SMALL_NOISE}\n[studies]\nsuites = []\n"));
    assert_eq!(snls(&["verify", &cfg]), 0);
    assert!(!dir.path().join("out").exists());
}

#[test]
fn malformed_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[grid]\nL = 2.0\nN = 32\nbogus = 1\n");
    assert_eq!(snls(&["run", &cfg]), 2);
    let cfg = config(dir.path(), "[grid]\nL = 2.0\nN = 32\n[noise]\neps = 0.01\n");
    assert_eq!(snls(&["run", &cfg]), 2);
}

#[test]
fn norms_batch_from_saved_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[grid]\nL = 2.0\nN = 64\n[noise]\neps = 0.25\nseed = 3\n");
    assert_eq!(snls(&["sample-noise", &cfg]), 0);
    let bundle = fs::read_dir(exp(dir.path()).join("fields")).unwrap().next().unwrap().unwrap().path();
    let manifest = dir.path().join("norms.json");
    let field = bundle.join("y_eps");
    fs::write(
        &manifest,
        serde_json::json!([{
            "field": field,
            "requests": [
                { "family": "besov", "alpha": 0.5, "p": 2.0, "q": 2.0, "mu": 0.0 },
                { "family": "holder", "alpha": 0.5, "p": "inf", "q": "inf", "mu": -0.5 }
            ]
        }])
        .to_string(),
    )
    .unwrap();
    let out = dir.path().join("norms.csv");
    assert_eq!(snls(&["norms", manifest.to_str().unwrap(), out.to_str().unwrap()]), 0);
    assert_eq!(csv::Reader::from_path(&out).unwrap().records().count(), 2);
}
