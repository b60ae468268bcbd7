use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn sticky(root: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sticky"))
        .args(args)
        .env("STICKY_OUTPUT_ROOT", root)
        .output()
        .expect("binary runs")
}

fn run_dirs(root: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = match fs::read_dir(root) {
        Ok(rd) => rd.map(|e| e.unwrap().path()).collect(),
        Err(_) => Vec::new(),
    };
    v.sort();
    v
}

const SMALL_CORRIDOR: &str = "realizations = 300\nseed = 7\n";

#[test]
fn corridor_writes_one_profile_per_coefficient() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, SMALL_CORRIDOR).unwrap();
    let out = sticky(
        tmp.path(),
        &[
            "corridor",
            "--penalty",
            "h1",
            "--seed",
            "7",
            "--config",
            cfg.to_str().unwrap(),
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let dirs: Vec<_> = run_dirs(tmp.path())
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    assert_eq!(dirs.len(), 1);
    let mut names: Vec<String> = fs::read_dir(&dirs[0])
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "config.json",
            "results.csv",
            "speed_profile_h1_c0.25.csv",
            "speed_profile_h1_c0.5.csv",
            "speed_profile_h1_c1.csv",
            "speed_profile_h1_c2.csv",
            "summary.txt"
        ]
    );
    let csv = fs::read_to_string(dirs[0].join("speed_profile_h1_c1.csv")).unwrap();
    assert_eq!(csv.lines().count(), 10);
    assert!(!csv.contains('\r'));
    let config: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dirs[0].join("config.json")).unwrap()).unwrap();
    assert_eq!(config["seed"], 7);
    assert_eq!(config["config"]["realizations"], 300);
}

#[test]
fn occupation_row_for_interval() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("o.toml");
    fs::write(
        &cfg,
        "dt = 1e-3\nepsilon = 2e-2\nhorizon = 0.5\nn_particles = 200\n",
    )
    .unwrap();
    let out = sticky(
        tmp.path(),
        &[
            "validate-occupation",
            "--shape",
            "interval",
            "--gamma",
            "0.5",
            "--config",
            cfg.to_str().unwrap(),
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let dir = run_dirs(tmp.path())
        .into_iter()
        .find(|p| p.is_dir())
        .unwrap();
    let csv = fs::read_to_string(dir.join("results.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "interval");
    assert_eq!(row[2].parse::<f64>().unwrap(), 0.5);
}

#[test]
fn missing_key_exits_2_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(
        &cfg,
        "[domain]\nshape = \"disk\"\ncenter = [0.0, 0.0]\nradius = 1.0\n[scheme]\ndt = 1e-3\nepsilon = 2e-2\nhorizon = 1.0\n[initial]\nkind = \"uniform_domain\"\n",
    )
    .unwrap();
    let root = tmp.path().join("out");
    let out = sticky(&root, &["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.toml") && err.contains("gamma"), "{err}");
    assert!(!root.exists());
}

#[test]
fn unknown_key_and_bad_values_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "realisations = 10\n").unwrap();
    let out = sticky(tmp.path(), &["corridor", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("realisations"));
    let out = sticky(tmp.path(), &["validate-occupation", "--gamma", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(run_dirs(tmp.path()).iter().all(|p| !p.is_dir()));
}

#[test]
fn no_convergence_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("m.toml");
    fs::write(
        &cfg,
        "[domain]\nshape = \"disk\"\ncenter = [0.0, 0.0]\nradius = 1.0\n[scheme]\ndt = 1e-3\nepsilon = 2e-2\ngamma = 0.5\nhorizon = 0.2\n[initial]\nkind = \"uniform_ball\"\ncenter = [0.3, 0.0]\nradius = 0.2\n[picard]\ntolerance = 0.0\nmax_iterations = 2\nn_particles = 50\nfresh_noise = true\n",
    )
    .unwrap();
    let out = sticky(tmp.path(), &["mflq", "--config", cfg.to_str().unwrap()]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn dry_run_prints_resolved_config() {
    let tmp = tempfile::tempdir().unwrap();
    let out = sticky(tmp.path(), &["corridor", "--penalty", "h2", "--dry-run"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["config"]["penalty"], "h2");
    assert_eq!(
        v["config"]["c_boundary"],
        serde_json::json!([0.25, 0.5, 1.0, 2.0])
    );
    assert!(run_dirs(tmp.path()).is_empty());
}

#[test]
fn simulate_writes_trajectories() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("s.toml");
    fs::write(
        &cfg,
        "n_particles = 5\nrecord_every = 10\n[domain]\nshape = \"corridor\"\nx_min = 0.0\nx_max = 2.0\n[scheme]\ndt = 1e-3\nepsilon = 2e-2\ngamma = 0.5\nhorizon = 0.1\n[initial]\nkind = \"uniform_rect\"\nmin = [0.5, -0.05]\nmax = [1.0, 0.05]\n[control]\nlaw = \"corridor\"\ntarget = [1.8, 0.0]\nc_boundary = 0.5\npenalty = \"h2\"\n",
    )
    .unwrap();
    let out = sticky(tmp.path(), &["simulate", "--config", cfg.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let dir = run_dirs(tmp.path())
        .into_iter()
        .find(|p| p.is_dir())
        .unwrap();
    let lines = fs::read_to_string(dir.join("trajectories.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 5);
    let first: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert_eq!(first["t"].as_array().unwrap().len(), 11);
    for key in ["particle", "t", "x", "y", "phase", "logL"] {
        assert!(first.get(key).is_some(), "{key}");
    }
}
