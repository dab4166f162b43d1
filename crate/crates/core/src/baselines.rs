//! Reference planners for the joint method: independent per-drone solves,
//! the same solves staggered by a common time lag, and a post-hoc
//! collision audit shared by all three.

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::constraints::{collision_gate, collision_residual, CollisionSpec, Track};
use crate::error::{Error, Result};
use crate::solver::{plan, IterationLog, SolveResult, SolveStatus, SolverOptions, TrajectorySolution};
use crate::transcription::{GridSpec, ProgressVariables};
use crate::vehicle::VehicleModel;

/// Pairwise residuals of a set of trajectories on one grid.
///
/// No start exemption is applied: coincident starts count as a collision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionAudit {
    /// `‖E·Δp‖² − δ_col·gate` per pair `(i, r)`, `i < r`, then per node.
    pub residuals: Vec<PairSeries>,
    /// Smallest residual over all pairs and nodes; `+∞` for a single drone.
    pub min_residual: f64,
    /// Smallest `‖E·Δp‖²` over nodes where at least one drone of the pair
    /// is still racing.
    pub min_distance_sq: f64,
    pub first_collision: Option<CollisionEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSeries {
    pub i: usize,
    pub r: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub node: usize,
    pub time: f64,
    pub i: usize,
    pub r: usize,
    pub residual: f64,
}

impl CollisionAudit {
    pub fn collides(&self) -> bool {
        self.first_collision.is_some()
    }
}

/// Audits solutions that share a grid.
pub fn audit_collisions(solutions: &[TrajectorySolution], spec: &CollisionSpec) -> Result<CollisionAudit> {
    spec.validate()?;
    let Some(first) = solutions.first() else {
        return Err(Error::InvalidInput("no solutions to audit".into()));
    };
    for (i, s) in solutions.iter().enumerate() {
        if s.dt != first.dt || s.nodes() != first.nodes() {
            return Err(Error::InvalidInput(format!(
                "solution {i} has {} nodes at dt {} but solution 0 has {} at dt {}",
                s.nodes(),
                s.dt,
                first.nodes(),
                first.dt
            )));
        }
    }
    let positions: Vec<Vec<Vector3<f64>>> = solutions.iter().map(|s| s.positions()).collect();
    let lambdas: Vec<Vec<f64>> = solutions.iter().map(|s| s.final_lambda()).collect();
    let n = first.nodes();

    let mut residuals = Vec::new();
    let mut min_residual = f64::INFINITY;
    let mut min_distance_sq = f64::INFINITY;
    let mut first_collision: Option<CollisionEvent> = None;
    for i in 0..solutions.len() {
        for r in i + 1..solutions.len() {
            let mut values = Vec::with_capacity(n);
            for k in 0..n {
                let g = collision_gate(lambdas[i][k], lambdas[r][k]);
                let v = collision_residual(&positions[i][k], &positions[r][k], g, spec);
                values.push(v);
                min_residual = min_residual.min(v);
                if g >= 0.5 {
                    min_distance_sq = min_distance_sq.min(spec.scaled_distance_sq(&positions[i][k], &positions[r][k]));
                }
                if v < 0.0 && first_collision.map_or(true, |e| k < e.node) {
                    first_collision = Some(CollisionEvent {
                        node: k,
                        time: first.time(k),
                        i,
                        r,
                        residual: v,
                    });
                }
            }
            residuals.push(PairSeries { i, r, values });
        }
    }
    Ok(CollisionAudit {
        residuals,
        min_residual,
        min_distance_sq,
        first_collision,
    })
}

/// One single-drone solve per drone with collision rows left out.
pub fn solve_independent(
    track: &Track,
    grid: &GridSpec,
    models: &[VehicleModel],
    options: &SolverOptions,
    log: &mut dyn FnMut(usize, &IterationLog),
) -> Result<Vec<SolveResult>> {
    track.validate()?;
    if models.len() != track.drones.len() {
        return Err(Error::InvalidInput(format!(
            "{} vehicle models for {} drones",
            models.len(),
            track.drones.len()
        )));
    }
    (0..track.drones.len())
        .map(|i| {
            let single = Track {
                drones: vec![track.drones[i].clone()],
                tol: track.tol,
            };
            plan(&single, grid, &models[i..=i], None, options, &mut |l| log(i, l))
                .map_err(|e| Error::Solver(format!("independent solve of drone {i}: {e}")))
        })
        .collect()
}

/// Delays a solution by `delay` nodes and pads it to `total` nodes,
/// holding the start state before it sets off and the final state after
/// its horizon ends.
pub fn shift_solution(sol: &TrajectorySolution, delay: usize, total: usize) -> Result<TrajectorySolution> {
    let n = sol.nodes();
    if n == 0 || delay + n > total {
        return Err(Error::InvalidInput(format!(
            "cannot fit {n} nodes delayed by {delay} into {total}"
        )));
    }
    let pad = |i: usize| i.saturating_sub(delay).min(n - 1);
    let states = (0..total).map(|k| sol.states[pad(k)].clone()).collect();
    let inputs = (0..total).map(|k| sol.inputs[pad(k)].clone()).collect();
    let w = sol.progress.lambda.ncols();
    let lambda = DMatrix::from_fn(total, w, |k, j| sol.progress.lambda[(pad(k), j)]);
    // transitions outside the original horizon carry no progress
    let t = sol.progress.mu.nrows();
    let mu = DMatrix::from_fn(total - 1, w, |k, j| {
        if k >= delay && k - delay < t {
            sol.progress.mu[(k - delay, j)]
        } else {
            0.0
        }
    });
    let nu = DMatrix::from_fn(total - 1, w, |k, j| sol.progress.nu[(k.saturating_sub(delay).min(t - 1), j)]);
    Ok(TrajectorySolution {
        dt: sol.dt,
        states,
        inputs,
        progress: ProgressVariables { lambda, mu, nu },
        waypoints: sol.waypoints.clone(),
        pass_nodes: sol.pass_nodes.iter().map(|k| k + delay).collect(),
        miss_distances: sol.miss_distances.clone(),
        arrival_node: sol.arrival_node + delay,
    })
}

/// The independent solutions staggered by the smallest collision-free lag.
#[derive(Debug, Clone)]
pub struct LagBaseline {
    pub lag_nodes: usize,
    /// `lag_nodes · dt`, s.
    pub lag: f64,
    /// Drone `i` delayed by `i · lag_nodes`.
    pub solutions: Vec<TrajectorySolution>,
    pub audit: CollisionAudit,
}

impl LagBaseline {
    pub fn arrival_times(&self) -> Vec<f64> {
        self.solutions.iter().map(|s| s.arrival_time()).collect()
    }
}

/// Searches `L = 0, 1, …` up to the horizon length for the first lag under
/// which every pair clears the audit. `None` when no lag in that range
/// works.
pub fn min_time_lag(solutions: &[TrajectorySolution], spec: &CollisionSpec) -> Result<Option<LagBaseline>> {
    let Some(first) = solutions.first() else {
        return Err(Error::InvalidInput("no solutions to stagger".into()));
    };
    let n = first.nodes();
    if solutions.iter().any(|s| s.nodes() != n || s.dt != first.dt) {
        return Err(Error::InvalidInput("solutions do not share a grid".into()));
    }
    let q = solutions.len();
    for lag in 0..=n {
        let total = n + (q - 1) * lag;
        let shifted = solutions
            .iter()
            .enumerate()
            .map(|(i, s)| shift_solution(s, i * lag, total))
            .collect::<Result<Vec<_>>>()?;
        let audit = audit_collisions(&shifted, spec)?;
        if !audit.collides() {
            return Ok(Some(LagBaseline {
                lag_nodes: lag,
                lag: lag as f64 * first.dt,
                solutions: shifted,
                audit,
            }));
        }
    }
    Ok(None)
}

/// Outcome of one method in a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub status: SolveStatus,
    /// Empty when the method produced no trajectories.
    pub arrival_times: Vec<f64>,
    pub total_arrival_time: Option<f64>,
    pub min_distance_sq: Option<f64>,
    pub min_residual: Option<f64>,
    pub first_collision_time: Option<f64>,
    /// Only for the lag method.
    pub lag: Option<f64>,
}

impl MethodReport {
    fn from_solutions(method: &str, status: SolveStatus, solutions: &[TrajectorySolution], audit: Option<&CollisionAudit>) -> Self {
        let arrival_times: Vec<f64> = solutions.iter().map(|s| s.arrival_time()).collect();
        let finite = |v: f64| if v.is_finite() { Some(v) } else { None };
        Self {
            method: method.to_string(),
            status,
            total_arrival_time: if arrival_times.is_empty() { None } else { Some(arrival_times.iter().sum()) },
            arrival_times,
            min_distance_sq: audit.and_then(|a| finite(a.min_distance_sq)),
            min_residual: audit.and_then(|a| finite(a.min_residual)),
            first_collision_time: audit.and_then(|a| a.first_collision.map(|e| e.time)),
            lag: None,
        }
    }

    fn failed(method: &str, status: SolveStatus) -> Self {
        Self::from_solutions(method, status, &[], None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema_version: String,
    pub joint: MethodReport,
    pub independent: MethodReport,
    pub lag: MethodReport,
    /// `joint total ≤ lag total`, when both produced trajectories.
    pub joint_not_slower: Option<bool>,
}

impl ComparisonReport {
    pub fn methods(&self) -> [&MethodReport; 3] {
        [&self.joint, &self.independent, &self.lag]
    }
}

/// Everything a comparison computed, for exports beyond the report.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub report: ComparisonReport,
    pub joint: SolveResult,
    pub independent: Vec<SolveResult>,
    pub lag: Option<LagBaseline>,
}

/// Runs the joint solve, the independent solves and the lag baseline.
pub fn compare(
    track: &Track,
    grid: &GridSpec,
    models: &[VehicleModel],
    spec: &CollisionSpec,
    options: &SolverOptions,
    log: &mut dyn FnMut(&str, &IterationLog),
) -> Result<Comparison> {
    let joint = plan(track, grid, models, Some(spec), options, &mut |l| log("joint", l))
        .map_err(|e| Error::Solver(format!("joint: {e}")))?;
    let joint_report = if joint.status == SolveStatus::Converged {
        let audit = audit_collisions(&joint.solutions, spec)?;
        MethodReport::from_solutions("joint", joint.status, &joint.solutions, Some(&audit))
    } else {
        MethodReport::failed("joint", joint.status)
    };

    let independent = solve_independent(track, grid, models, options, &mut |i, l| log(&format!("independent {i}"), l))?;
    let worst = independent
        .iter()
        .map(|r| r.status)
        .find(|s| *s != SolveStatus::Converged)
        .unwrap_or(SolveStatus::Converged);
    let (independent_report, lag, lag_report) = if worst == SolveStatus::Converged {
        let sols: Vec<TrajectorySolution> = independent.iter().map(|r| r.solutions[0].clone()).collect();
        let audit = audit_collisions(&sols, spec)?;
        let ind = MethodReport::from_solutions("independent", worst, &sols, Some(&audit));
        let lag = min_time_lag(&sols, spec)?;
        let lag_report = match &lag {
            Some(b) => MethodReport {
                lag: Some(b.lag),
                ..MethodReport::from_solutions("lag", SolveStatus::Converged, &b.solutions, Some(&b.audit))
            },
            None => {
                log::warn!("no collision-free lag up to {} nodes", grid.nodes);
                MethodReport::failed("lag", SolveStatus::Infeasible)
            }
        };
        (ind, lag, lag_report)
    } else {
        (MethodReport::failed("independent", worst), None, MethodReport::failed("lag", worst))
    };

    let joint_not_slower = match (joint_report.total_arrival_time, lag_report.total_arrival_time) {
        (Some(j), Some(l)) => Some(j <= l + 1e-9),
        _ => None,
    };
    if joint_not_slower == Some(false) {
        log::warn!("joint total arrival time exceeds the lag baseline");
    }
    Ok(Comparison {
        report: ComparisonReport {
            schema_version: crate::SCHEMA_VERSION.to_string(),
            joint: joint_report,
            independent: independent_report,
            lag: lag_report,
            joint_not_slower,
        },
        joint,
        independent,
        lag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::RigidBodyState;

    /// Straight flight along x at height `z`, offset `y`, passing the only
    /// waypoint at node `pass`.
    fn line(y: f64, n: usize, pass: usize) -> TrajectorySolution {
        let states: Vec<RigidBodyState> = (0..n)
            .map(|k| RigidBodyState::at_rest(Vector3::new(0.1 * k as f64, y, 1.0)))
            .collect();
        let lambda = DMatrix::from_fn(n, 1, |k, _| if k < pass { 1.0 } else { 0.0 });
        let mu = DMatrix::from_fn(n - 1, 1, |k, _| if k + 1 == pass { 1.0 } else { 0.0 });
        TrajectorySolution {
            dt: 0.1,
            inputs: vec![vec![0.0; 4]; n],
            waypoints: vec![states[pass].p],
            states,
            progress: ProgressVariables {
                lambda,
                mu,
                nu: DMatrix::zeros(n - 1, 1),
            },
            pass_nodes: vec![pass],
            miss_distances: vec![0.0],
            arrival_node: pass,
        }
    }

    #[test]
    fn horizontal_offsets() {
        let spec = CollisionSpec::default();
        let a = audit_collisions(&[line(0.0, 10, 9), line(1.0, 10, 9)], &spec).unwrap();
        assert!((a.min_residual - 0.75).abs() < 1e-12);
        assert!(!a.collides());
        let a = audit_collisions(&[line(0.0, 10, 9), line(0.4, 10, 9)], &spec).unwrap();
        assert!((a.min_residual - (0.16 - 0.25)).abs() < 1e-12);
        let e = a.first_collision.unwrap();
        assert_eq!((e.node, e.i, e.r), (0, 0, 1));
    }

    #[test]
    fn identical_trajectories_collide_at_start() {
        let a = audit_collisions(&[line(0.0, 10, 5), line(0.0, 10, 5)], &CollisionSpec::default()).unwrap();
        assert_eq!(a.first_collision.unwrap().node, 0);
        assert_eq!(a.min_distance_sq, 0.0);
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let mut b = line(1.0, 10, 5);
        b.dt = 0.05;
        assert!(audit_collisions(&[line(0.0, 10, 5), b], &CollisionSpec::default()).is_err());
        assert!(audit_collisions(&[line(0.0, 10, 5), line(1.0, 9, 5)], &CollisionSpec::default()).is_err());
    }

    #[test]
    fn shift_holds_ends() {
        let s = line(0.0, 5, 3);
        let t = shift_solution(&s, 2, 9).unwrap();
        assert_eq!(t.nodes(), 9);
        assert_eq!(t.states[0], s.states[0]);
        assert_eq!(t.states[1], s.states[0]);
        assert_eq!(t.states[2], s.states[0]);
        assert_eq!(t.states[6], s.states[4]);
        assert_eq!(t.states[8], s.states[4]);
        assert_eq!(t.arrival_node, 5);
        assert_eq!(t.final_lambda(), vec![1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(t.progress.mu.column(0).sum(), 1.0);
        assert_eq!(t.progress.mu[(4, 0)], 1.0);
    }

    /// Drone `b` flies along y through the point drone `a` reaches at
    /// node 10.
    fn crossing() -> (TrajectorySolution, TrajectorySolution) {
        let a = line(0.0, 20, 19);
        let mut b = line(0.0, 20, 19);
        for (k, s) in b.states.iter_mut().enumerate() {
            s.p = Vector3::new(1.0, -1.0 + 0.1 * k as f64, 1.0);
        }
        (a, b)
    }

    /// Brute force over L against the pairwise residual.
    #[test]
    fn lag_matches_brute_force() {
        let spec = CollisionSpec::default();
        let (a, b) = crossing();
        assert!(audit_collisions(&[a.clone(), b.clone()], &spec).unwrap().collides());
        let found = min_time_lag(&[a.clone(), b.clone()], &spec).unwrap().unwrap();
        let clear = |l: usize| {
            let sa = shift_solution(&a, 0, 20 + l).unwrap();
            let sb = shift_solution(&b, l, 20 + l).unwrap();
            let (pa, pb) = (sa.positions(), sb.positions());
            let (la, lb) = (sa.final_lambda(), sb.final_lambda());
            (0..20 + l).all(|k| spec.scaled_distance_sq(&pa[k], &pb[k]) >= spec.delta_col * collision_gate(la[k], lb[k]))
        };
        let brute = (0..=20).find(|&l| clear(l)).unwrap();
        assert!(brute > 0);
        assert_eq!(found.lag_nodes, brute);
        assert!((found.lag - 0.1 * brute as f64).abs() < 1e-12);
        let t = found.arrival_times();
        assert!((t[0] - 1.9).abs() < 1e-12 && (t[1] - 1.9 - 0.1 * brute as f64).abs() < 1e-12);
        assert!(!found.audit.collides());
    }

    #[test]
    fn separated_drones_need_no_lag() {
        let b = min_time_lag(&[line(0.0, 10, 9), line(2.0, 10, 9)], &CollisionSpec::default())
            .unwrap()
            .unwrap();
        assert_eq!(b.lag_nodes, 0);
    }

    #[test]
    fn hopeless_lag_is_reported() {
        // drone 1 parks on drone 0's start forever
        let mut s = line(0.0, 4, 3);
        s.states.iter_mut().for_each(|x| x.p = Vector3::new(0.0, 0.0, 1.0));
        s.progress.lambda.fill(1.0);
        assert!(min_time_lag(&[line(0.0, 4, 3), s], &CollisionSpec::default()).unwrap().is_none());
    }
}
