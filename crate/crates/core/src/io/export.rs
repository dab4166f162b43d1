//! Solution files: a CSV of node states and inputs plus a JSON sidecar with
//! the progress variables and summary numbers.
//!
//! CSV columns: `drone_id,k,t,px,py,pz,vx,vy,vz,qw,qx,qy,qz,wx,wy,wz,T1,T2,T3,T4,post_arrival`.
//! Numbers use 9 significant digits. Point-mass drones write their three
//! acceleration inputs to `T1..T3` and leave `T4` empty.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, Quaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::baselines::{audit_collisions, CollisionAudit, CollisionEvent};
use crate::constraints::CollisionSpec;
use crate::error::{Error, Result};
use crate::solver::{progress_objective, SolveResult, SolveStatus, TrajectorySolution};
use crate::tracking::{TrackingLog, TrackingMetrics};
use crate::transcription::ProgressVariables;
use crate::vehicle::RigidBodyState;
use crate::SCHEMA_VERSION;

pub const SOLUTION_HEADER: [&str; 21] = [
    "drone_id", "k", "t", "px", "py", "pz", "vx", "vy", "vz", "qw", "qx", "qy", "qz", "wx", "wy", "wz", "T1", "T2",
    "T3", "T4", "post_arrival",
];

/// 9 significant digits.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.8e}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DroneSummary {
    pub drone_id: usize,
    pub arrival_node: usize,
    pub arrival_time: f64,
    pub pass_nodes: Vec<usize>,
    pub miss_distances: Vec<f64>,
    pub progress_sum: f64,
    pub waypoints: Vec<[f64; 3]>,
    /// Row per node, column per waypoint.
    pub lambda: Vec<Vec<f64>>,
    /// Row per transition `k → k+1`.
    pub mu: Vec<Vec<f64>>,
    pub nu: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSummary {
    /// `None` for a single drone.
    pub min_distance_sq: Option<f64>,
    pub min_residual: Option<f64>,
    pub first_collision: Option<CollisionEvent>,
}

impl From<&CollisionAudit> for AuditSummary {
    fn from(a: &CollisionAudit) -> Self {
        let finite = |v: f64| v.is_finite().then_some(v);
        Self {
            min_distance_sq: finite(a.min_distance_sq),
            min_residual: finite(a.min_residual),
            first_collision: a.first_collision,
        }
    }
}

/// Contents of the `.json` file written next to a solution CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionSidecar {
    pub schema_version: String,
    pub status: SolveStatus,
    /// Sum of all λ.
    #[serde(rename = "J")]
    pub objective: f64,
    pub complementarity: f64,
    pub max_violation: f64,
    pub dt: f64,
    pub nodes: usize,
    pub drones: Vec<DroneSummary>,
    pub audit: AuditSummary,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidInput(format!("ragged {what} matrix in sidecar")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

impl SolutionSidecar {
    pub fn new(
        status: SolveStatus,
        complementarity: f64,
        max_violation: f64,
        solutions: &[TrajectorySolution],
        spec: &CollisionSpec,
    ) -> Result<Self> {
        let first = solutions
            .first()
            .ok_or_else(|| Error::InvalidInput("no solutions to export".into()))?;
        let audit = audit_collisions(solutions, spec)?;
        Ok(Self {
            schema_version: SCHEMA_VERSION.into(),
            status,
            objective: progress_objective(solutions),
            complementarity,
            max_violation,
            dt: first.dt,
            nodes: first.nodes(),
            drones: solutions
                .iter()
                .enumerate()
                .map(|(i, s)| DroneSummary {
                    drone_id: i,
                    arrival_node: s.arrival_node,
                    arrival_time: s.arrival_time(),
                    pass_nodes: s.pass_nodes.clone(),
                    miss_distances: s.miss_distances.clone(),
                    progress_sum: s.progress_sum(),
                    waypoints: s.waypoints.iter().map(|w| [w.x, w.y, w.z]).collect(),
                    lambda: rows(&s.progress.lambda),
                    mu: rows(&s.progress.mu),
                    nu: rows(&s.progress.nu),
                })
                .collect(),
            audit: AuditSummary::from(&audit),
        })
    }

    pub fn from_result(result: &SolveResult, spec: &CollisionSpec) -> Result<Self> {
        Self::new(
            result.status,
            result.complementarity,
            result.max_violation(),
            &result.solutions,
            spec,
        )
    }
}

/// `solution.csv` → `solution.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::io(path, e.into()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: format!("{}: {}", e.path(), e.inner()),
    })
}

/// Writes the node table only.
pub fn write_solution_csv(solutions: &[TrajectorySolution], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(SOLUTION_HEADER).map_err(|e| csv_err(path, e))?;
    for (i, s) in solutions.iter().enumerate() {
        if s.inputs.len() != s.nodes() {
            return Err(Error::InvalidInput(format!("drone {i}: one input per node is required")));
        }
        for (k, (x, u)) in s.states.iter().zip(&s.inputs).enumerate() {
            if u.len() > 4 {
                return Err(Error::InvalidInput(format!("drone {i}: more than four inputs")));
            }
            let mut rec = vec![i.to_string(), k.to_string(), fmt_num(s.time(k))];
            let q = x.q.coords;
            let nums = [x.p.x, x.p.y, x.p.z, x.v.x, x.v.y, x.v.z, q.w, q.x, q.y, q.z, x.w.x, x.w.y, x.w.z];
            rec.extend(nums.iter().map(|&v| fmt_num(v)));
            rec.extend((0..4).map(|j| u.get(j).map_or(String::new(), |&v| fmt_num(v))));
            rec.push(u8::from(s.is_post_arrival(k)).to_string());
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the CSV and its sidecar. `spec` drives the audit summary.
pub fn export_solution(result: &SolveResult, spec: &CollisionSpec, path: &Path) -> Result<SolutionSidecar> {
    let sidecar = SolutionSidecar::from_result(result, spec)?;
    write_solution_csv(&result.solutions, path)?;
    write_json(&sidecar, &sidecar_path(path))?;
    Ok(sidecar)
}

#[derive(Debug, Deserialize)]
struct Row {
    drone_id: usize,
    k: usize,
    #[allow(dead_code)]
    t: f64,
    px: f64,
    py: f64,
    pz: f64,
    vx: f64,
    vy: f64,
    vz: f64,
    qw: f64,
    qx: f64,
    qy: f64,
    qz: f64,
    wx: f64,
    wy: f64,
    wz: f64,
    #[serde(rename = "T1")]
    t1: Option<f64>,
    #[serde(rename = "T2")]
    t2: Option<f64>,
    #[serde(rename = "T3")]
    t3: Option<f64>,
    #[serde(rename = "T4")]
    t4: Option<f64>,
    #[allow(dead_code)]
    post_arrival: u8,
}

/// Reads a solution CSV and the sidecar next to it.
pub fn import_solution(path: &Path) -> Result<(Vec<TrajectorySolution>, SolutionSidecar)> {
    let side_path = sidecar_path(path);
    let sidecar: SolutionSidecar = read_json(&side_path)?;
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    if sidecar.schema_version != SCHEMA_VERSION {
        return Err(Error::Parse {
            path: side_path,
            message: format!("unsupported schema_version \"{}\"", sidecar.schema_version),
        });
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = r.headers().map_err(|e| csv_err(path, e))?.iter().map(String::from).collect();
    if header != SOLUTION_HEADER {
        return Err(parse_err(format!("unexpected header {header:?}")));
    }
    let q = sidecar.drones.len();
    let n = sidecar.nodes;
    let mut states = vec![Vec::with_capacity(n); q];
    let mut inputs = vec![Vec::with_capacity(n); q];
    for (line, rec) in r.deserialize::<Row>().enumerate() {
        let row = rec.map_err(|e| csv_err(path, e))?;
        if row.drone_id >= q || row.k != states[row.drone_id].len() {
            return Err(parse_err(format!(
                "data row {}: drone {} node {} out of order",
                line + 1,
                row.drone_id,
                row.k
            )));
        }
        states[row.drone_id].push(RigidBodyState {
            p: Vector3::new(row.px, row.py, row.pz),
            v: Vector3::new(row.vx, row.vy, row.vz),
            q: Quaternion::new(row.qw, row.qx, row.qy, row.qz),
            w: Vector3::new(row.wx, row.wy, row.wz),
        });
        inputs[row.drone_id].push([row.t1, row.t2, row.t3, row.t4].into_iter().flatten().collect());
    }
    let solutions = states
        .into_iter()
        .zip(inputs)
        .zip(&sidecar.drones)
        .map(|((states, inputs), d)| {
            if states.len() != n {
                return Err(parse_err(format!("drone {} has {} rows, expected {n}", d.drone_id, states.len())));
            }
            Ok(TrajectorySolution {
                dt: sidecar.dt,
                states,
                inputs,
                progress: ProgressVariables {
                    lambda: matrix(&d.lambda, "lambda")?,
                    mu: matrix(&d.mu, "mu")?,
                    nu: matrix(&d.nu, "nu")?,
                },
                waypoints: d.waypoints.iter().map(|w| Vector3::from(*w)).collect(),
                pass_nodes: d.pass_nodes.clone(),
                miss_distances: d.miss_distances.clone(),
                arrival_node: d.arrival_node,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((solutions, sidecar))
}

pub const TRACKING_HEADER: [&str; 30] = [
    "drone_id", "t", "ref_px", "ref_py", "ref_pz", "ref_vx", "ref_vy", "ref_vz", "px", "py", "pz", "vx", "vy", "vz",
    "qw", "qx", "qy", "qz", "wx", "wy", "wz", "rate_cmd_x", "rate_cmd_y", "rate_cmd_z", "thrust_cmd", "err_x",
    "err_y", "err_z", "speed", "saturated",
];

/// One CSV for the tracking runs of all drones, `logs[i]` being drone `i`.
pub fn write_tracking_csv(logs: &[TrackingLog], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(TRACKING_HEADER).map_err(|e| csv_err(path, e))?;
    for (i, log) in logs.iter().enumerate() {
        for t in &log.ticks {
            let (r, x) = (&t.reference, &t.state);
            let q = x.q.coords;
            let mut rec = vec![i.to_string(), fmt_num(t.t)];
            let nums = [
                r.p.x, r.p.y, r.p.z, r.v.x, r.v.y, r.v.z, x.p.x, x.p.y, x.p.z, x.v.x, x.v.y, x.v.z, q.w, q.x, q.y, q.z, x.w.x, x.w.y, x.w.z,
                t.rate_cmd.x, t.rate_cmd.y, t.rate_cmd.z, t.thrust_cmd, t.position_error.x, t.position_error.y,
                t.position_error.z, t.speed,
            ];
            rec.extend(nums.iter().map(|&v| fmt_num(v)));
            rec.push(u8::from(t.saturated).to_string());
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroneTrackingMetrics {
    pub drone_id: usize,
    #[serde(flatten)]
    pub metrics: TrackingMetrics,
    pub saturation_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: String,
    pub sim_dt: f64,
    pub drones: Vec<DroneTrackingMetrics>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::pass_nodes;

    fn solution(n: usize, offset: f64) -> TrajectorySolution {
        let states: Vec<RigidBodyState> = (0..n)
            .map(|k| {
                let mut s = RigidBodyState::at_rest(Vector3::new(offset + 0.1 * k as f64, 1.0 / 3.0, 2.0));
                s.v.x = std::f64::consts::PI * k as f64;
                s.w.z = -1e-12;
                s
            })
            .collect();
        let lambda = DMatrix::from_fn(n, 1, |k, _| if k == 0 { 1.0 } else { 0.0 });
        let pass = pass_nodes(&lambda).unwrap();
        TrajectorySolution {
            dt: 0.05,
            inputs: vec![vec![1.7, 1.8, 1.9, 2.0 / 3.0]; n],
            progress: ProgressVariables {
                mu: DMatrix::from_fn(n - 1, 1, |k, _| if k == 0 { 1.0 } else { 0.0 }),
                nu: DMatrix::zeros(n - 1, 1),
                lambda,
            },
            waypoints: vec![states[1].p],
            arrival_node: pass[0],
            pass_nodes: pass,
            miss_distances: vec![0.0],
            states,
        }
    }

    fn sidecar(sols: &[TrajectorySolution]) -> SolutionSidecar {
        SolutionSidecar::new(SolveStatus::Converged, 0.0, 0.0, sols, &CollisionSpec::default()).unwrap()
    }

    fn write(sols: &[TrajectorySolution], path: &Path) {
        write_solution_csv(sols, path).unwrap();
        write_json(&sidecar(sols), &sidecar_path(path)).unwrap();
    }

    #[test]
    fn header_plus_one_row_per_node() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write(&[solution(2, 0.0)], &path);
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], SOLUTION_HEADER.join(","));
        assert!(lines[2].ends_with(",0"), "{}", lines[2]);
    }

    #[test]
    fn round_trip_is_stable_at_nine_digits() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        let sols = vec![solution(5, 0.0), solution(5, 3.0)];
        write(&sols, &a);
        let (back, side) = import_solution(&a).unwrap();
        assert_eq!(side, sidecar(&sols));
        for (x, y) in sols.iter().zip(&back) {
            assert_eq!(x.progress, y.progress);
            assert_eq!(x.pass_nodes, y.pass_nodes);
            for (s, r) in x.states.iter().zip(&y.states) {
                assert_eq!(fmt_num(s.v.x), fmt_num(r.v.x));
                assert!((s.p.y - r.p.y).abs() <= 1e-9 * s.p.y.abs());
            }
        }
        write(&back, &b);
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn sidecar_objective_matches_lambda() {
        let sols = vec![solution(4, 0.0), solution(4, 3.0)];
        let s = sidecar(&sols);
        let sum: f64 = s.drones.iter().flat_map(|d| d.lambda.iter().flatten()).sum();
        assert_eq!(s.objective, sum);
        assert_eq!(s.objective, 2.0);
        assert!(s.audit.first_collision.is_none());
    }

    #[test]
    fn point_mass_rows_leave_t4_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pm.csv");
        let mut s = solution(3, 0.0);
        s.inputs = vec![vec![1.0, -1.0, 0.5]; 3];
        write(&[s.clone()], &path);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().nth(1).unwrap().ends_with(",,0") || text.lines().nth(1).unwrap().ends_with(",,1"));
        let (back, _) = import_solution(&path).unwrap();
        assert_eq!(back[0].inputs, s.inputs);
    }

    #[test]
    fn missing_sidecar_and_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        write_solution_csv(&[solution(2, 0.0)], &path).unwrap();
        assert!(matches!(import_solution(&path), Err(Error::Io { .. })));
        write_json(&sidecar(&[solution(3, 0.0)]), &sidecar_path(&path)).unwrap();
        assert!(matches!(import_solution(&path), Err(Error::Parse { .. })));
    }
}
