use std::path::{Path, PathBuf};
use std::process::Command;

use swarmrace::baselines::ComparisonReport;
use swarmrace::io::export::{import_solution, read_json, MetricsReport};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_swarmrace"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str], config: &Path, out: &Path) -> (i32, String) {
    let o = bin()
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap();
    (o.status.code().unwrap(), String::from_utf8_lossy(&o.stderr).into_owned())
}

const HOP: &str = r#"{
  "schema_version": "1",
  "grid": {"nodes": 24, "dt": 0.05},
  "vehicles": [{"kind": "quadrotor"}],
  "track": {"tol": 0.2, "drones": [{"start": [0, 0, 1], "waypoints": [[0.6, 0, 1]]}]},
  "collision": {"enabled": false}
}"#;

#[test]
fn missing_config_prints_usage() {
    let o = bin().arg("solve").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("--config") && err.contains("Usage"), "{err}");
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, HOP.replace(r#", "dt": 0.05"#, "")).unwrap();
    let (code, err) = run(&["solve"], &cfg, &dir.path().join("out"));
    assert_eq!(code, 2);
    assert!(err.contains("grid.dt"), "{err}");
    std::fs::write(&cfg, HOP.replace(r#""tol": 0.2"#, r#""tol": -0.2"#)).unwrap();
    let (code, err) = run(&["solve"], &cfg, &dir.path().join("out"));
    assert_eq!(code, 2);
    assert!(err.contains("tol"), "{err}");
}

#[test]
fn solve_then_simulate_then_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("hop.json");
    std::fs::write(&cfg, HOP).unwrap();
    let out = dir.path().join("out");
    let (code, err) = run(&["solve"], &cfg, &out);
    assert_eq!(code, 0, "{err}");
    for f in ["solution.csv", "solution.json", "iterations.log"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(out.join("iterations.log")).unwrap();
    assert!(log.lines().count() > 2);

    let (sols, side) = import_solution(&out.join("solution.csv")).unwrap();
    let sum: f64 = sols[0].progress.lambda.iter().sum();
    assert_eq!(side.objective, sum);
    assert!(sols[0].miss_distances[0] <= 0.2);

    let (code, err) = run(&["simulate"], &cfg, &out);
    assert_eq!(code, 0, "{err}");
    let m: MetricsReport = read_json(&out.join("metrics.json")).unwrap();
    assert_eq!(m.drones.len(), 1);
    assert!(m.drones[0].metrics.max_error < 0.05, "{:?}", m.drones[0]);
    let rows = std::fs::read_to_string(out.join("tracking.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 24);

    for kind in ["position-envelope", "speed-profile", "3d-path"] {
        let (code, err) = run(&["export-plot", "--kind", kind], &cfg, &out);
        assert_eq!(code, 0, "{kind}: {err}");
        assert!(out.join(format!("{kind}.csv")).exists());
    }
    let (code, err) = run(&["export-plot", "--kind", "heatmap"], &cfg, &out);
    assert_eq!(code, 2);
    assert!(err.contains("heatmap"), "{err}");
}

#[test]
fn single_drone_comparison_coincides() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let (code, err) = run(&["compare"], &configs().join("point_mass_oracle.json"), &out);
    assert_eq!(code, 0, "{err}");
    let r: ComparisonReport = read_json(&out.join("comparison.json")).unwrap();
    assert_eq!(r.schema_version, "1");
    for m in r.methods() {
        assert_eq!(m.arrival_times, r.joint.arrival_times, "{}", m.method);
        assert!(m.first_collision_time.is_none());
    }
    assert_eq!(r.lag.lag, Some(0.0));
    assert_eq!(r.joint_not_slower, Some(true));
    assert_eq!(
        std::fs::read(out.join("joint.csv")).unwrap(),
        std::fs::read(out.join("independent.csv")).unwrap()
    );

    let (code, err) = run(&["export-plot", "--kind", "comparison"], &configs().join("point_mass_oracle.json"), &out);
    assert_eq!(code, 0, "{err}");
    let text = std::fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert!(text.starts_with("quantity,joint,independent,lag\nmethod,joint,independent,lag\n"), "{text}");

    // the point mass has no rotors to track with
    let (code, _) = run(&["simulate", "--solution", out.join("joint.csv").to_str().unwrap()], &configs().join("point_mass_oracle.json"), &out);
    assert_eq!(code, 2);
}

#[test]
fn unreadable_solution_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("hop.json");
    std::fs::write(&cfg, HOP).unwrap();
    let (code, _) = run(&["simulate"], &cfg, &dir.path().join("empty"));
    assert_eq!(code, 4);
}
