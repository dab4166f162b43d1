//! Path constraints of the joint problem: waypoint progress, pairwise
//! collision, actuator and attitude limits, and the initial state.
//!
//! The residual functions here evaluate one constraint family on unpacked
//! trajectories and are what tests and audits use. The same formulas are
//! wrapped as NLP blocks further down.

use std::sync::Arc;

use nalgebra::{Quaternion, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nlp::{BlockFunction, ConstraintBlock, ConstraintClass};
use crate::transcription::{DecisionLayout, ProgressVariables};
use crate::vehicle::{
    euler_components, euler_gradients, quat_to_euler_zyx, rk4_step_with_jacobians, QuadrotorParams, RigidBodyState,
    StateVector, VehicleModel, UNIT_NORM_TOLERANCE,
};

/// Start state and ordered waypoints of one drone.
#[derive(Debug, Clone, PartialEq)]
pub struct DroneTrack {
    pub start: RigidBodyState,
    pub waypoints: Vec<Vector3<f64>>,
    /// Require the drone to be at rest when it passes its final waypoint.
    pub stop_at_final: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub drones: Vec<DroneTrack>,
    /// Waypoint pass radius, m.
    pub tol: f64,
}

impl Track {
    pub fn validate(&self) -> Result<()> {
        if self.drones.is_empty() {
            return Err(Error::InvalidConfig("track has no drones".into()));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidConfig(format!("track.tol must be positive, got {}", self.tol)));
        }
        for (i, d) in self.drones.iter().enumerate() {
            if d.waypoints.is_empty() {
                return Err(Error::InvalidConfig(format!("drone {i} has no waypoints")));
            }
            if !d.start.is_finite() || d.waypoints.iter().any(|w| !w.iter().all(|v| v.is_finite())) {
                return Err(Error::InvalidConfig(format!("drone {i} has non-finite start or waypoints")));
            }
            if (d.start.q.norm() - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::InvalidConfig(format!("drone {i} start quaternion is not unit")));
            }
        }
        Ok(())
    }

    /// Length of the polyline start → waypoints of drone `i`.
    pub fn path_length(&self, i: usize) -> f64 {
        let d = &self.drones[i];
        let mut prev = d.start.p;
        let mut len = 0.0;
        for w in &d.waypoints {
            len += (w - prev).norm();
            prev = *w;
        }
        len
    }

    /// Rough flight time of the slowest drone at `avg_speed`, with a 1.5
    /// safety margin.
    pub fn arrival_estimate(&self, avg_speed: f64) -> f64 {
        (0..self.drones.len())
            .map(|i| self.path_length(i) / avg_speed * 1.5)
            .fold(0.0, f64::max)
    }
}

/// Downwash ellipsoid `‖E·Δp‖² ≥ δ_col`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollisionSpec {
    /// Diagonal of `E`.
    pub e_diag: [f64; 3],
    /// Threshold on the squared scaled distance.
    pub delta_col: f64,
    /// Skip the first `exempt_nodes` nodes for pairs whose starts already
    /// violate the constraint.
    pub coincident_start_exemption: bool,
    pub exempt_nodes: usize,
}

impl Default for CollisionSpec {
    fn default() -> Self {
        Self {
            e_diag: [1.0, 1.0, 1.0 / 3.0],
            delta_col: 0.25,
            coincident_start_exemption: true,
            exempt_nodes: 1,
        }
    }
}

impl CollisionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.e_diag.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::InvalidConfig("collision.e_diag entries must be positive".into()));
        }
        if !(self.delta_col > 0.0 && self.delta_col.is_finite()) {
            return Err(Error::InvalidConfig("collision.delta_col must be positive".into()));
        }
        Ok(())
    }

    /// `‖E·(a − b)‖²`.
    pub fn scaled_distance_sq(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
        (0..3).map(|i| (self.e_diag[i] * (a[i] - b[i])).powi(2)).sum()
    }

    /// Nodes to skip for a pair starting at `a` and `b`.
    pub fn exempt_nodes_for(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> usize {
        if self.coincident_start_exemption && self.scaled_distance_sq(a, b) < self.delta_col {
            self.exempt_nodes
        } else {
            0
        }
    }
}

/// Smooth activity gate: equals `min(1, a + b)` whenever `a, b ∈ {0, 1}`.
pub fn collision_gate(a: f64, b: f64) -> f64 {
    a + b - a * b
}

/// `‖E(pi − pr)‖² − δ_col·gate`; non-negative when satisfied.
pub fn collision_residual(pi: &Vector3<f64>, pr: &Vector3<f64>, gate: f64, spec: &CollisionSpec) -> f64 {
    spec.scaled_distance_sq(pi, pr) - spec.delta_col * gate
}

/// Residuals of the progress constraints of one drone.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgressResiduals {
    /// `λ_k^j − λ_k^{j+1}`, must be ≤ 0; node-major.
    pub sequencing: Vec<f64>,
    /// `λ_{k+1}^j − λ_k^j + μ_k^j`, must be 0.
    pub telescoping: Vec<f64>,
    /// `μ_k^j·(‖P_{k+1} − P^{wj}‖² − ν_k^j)`, must be 0.
    pub complementarity: Vec<f64>,
    /// `λ_0^j − 1` then `λ_{N−1}^j`, must be 0.
    pub boundary: Vec<f64>,
    /// Largest violation of the boxes `λ, μ ∈ [0,1]`, `ν ∈ [0, tol²]`.
    pub box_violation: f64,
}

/// Evaluates the progress constraints on node positions.
///
/// The complementarity of transition `k` uses the position at node `k+1`,
/// the node the transition leads into. With that convention the first node
/// with `λ < 0.5` is also the node at which the drone is inside the
/// waypoint sphere.
pub fn progress_constraints(
    positions: &[Vector3<f64>],
    progress: &ProgressVariables,
    waypoints: &[Vector3<f64>],
    tol: f64,
) -> Result<ProgressResiduals> {
    let n = positions.len();
    let w = waypoints.len();
    if n < 2 || w == 0 {
        return Err(Error::InvalidInput("need at least two nodes and one waypoint".into()));
    }
    if progress.lambda.shape() != (n, w) || progress.mu.shape() != (n - 1, w) || progress.nu.shape() != (n - 1, w) {
        return Err(Error::InvalidInput(format!(
            "progress matrices do not match {n} nodes × {w} waypoints"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidInput("tol must be positive".into()));
    }
    let (l, m, v) = (&progress.lambda, &progress.mu, &progress.nu);
    let mut sequencing = Vec::new();
    for k in 0..n {
        for j in 0..w.saturating_sub(1) {
            sequencing.push(l[(k, j)] - l[(k, j + 1)]);
        }
    }
    let mut telescoping = Vec::new();
    let mut complementarity = Vec::new();
    for k in 0..n - 1 {
        for j in 0..w {
            telescoping.push(l[(k + 1, j)] - l[(k, j)] + m[(k, j)]);
            let d2 = (positions[k + 1] - waypoints[j]).norm_squared();
            complementarity.push(m[(k, j)] * (d2 - v[(k, j)]));
        }
    }
    let mut boundary: Vec<f64> = (0..w).map(|j| l[(0, j)] - 1.0).collect();
    boundary.extend((0..w).map(|j| l[(n - 1, j)]));
    let out_of = |x: f64, lo: f64, hi: f64| (lo - x).max(x - hi).max(0.0);
    let box_violation = l
        .iter()
        .map(|&x| out_of(x, 0.0, 1.0))
        .chain(m.iter().map(|&x| out_of(x, 0.0, 1.0)))
        .chain(v.iter().map(|&x| out_of(x, 0.0, tol * tol)))
        .fold(0.0, f64::max);
    Ok(ProgressResiduals {
        sequencing,
        telescoping,
        complementarity,
        boundary,
        box_violation,
    })
}

/// One pair at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairResidual {
    pub i: usize,
    pub r: usize,
    pub k: usize,
    pub value: f64,
}

/// Collision residuals for every unordered pair `i < r` and node.
/// `final_lambda[i][k]` is drone `i`'s λ for its last waypoint.
pub fn collision_constraints(
    positions: &[Vec<Vector3<f64>>],
    final_lambda: &[Vec<f64>],
    spec: &CollisionSpec,
) -> Result<Vec<PairResidual>> {
    if positions.len() != final_lambda.len() {
        return Err(Error::InvalidInput("one λ column per drone is required".into()));
    }
    let n = positions.first().map_or(0, |p| p.len());
    if positions.iter().any(|p| p.len() != n) || final_lambda.iter().any(|l| l.len() != n)
    {
        return Err(Error::InvalidInput("drones are not on a common node grid".into()));
    }
    let mut out = Vec::new();
    for i in 0..positions.len() {
        for r in i + 1..positions.len() {
            for k in 0..n {
                let g = collision_gate(final_lambda[i][k], final_lambda[r][k]);
                out.push(PairResidual {
                    i,
                    r,
                    k,
                    value: collision_residual(&positions[i][k], &positions[r][k], g, spec),
                });
            }
        }
    }
    Ok(out)
}

/// Slack of the actuator box and rate limits; negative entries are
/// violations.
#[derive(Debug, Clone, PartialEq)]
pub struct ActuatorResiduals {
    /// `min(T − T_min, T_max − T)` per node and rotor.
    pub bound: Vec<f64>,
    /// `Ṫ_max·dt − |T_{k+1} − T_k|` per transition and rotor.
    pub rate: Vec<f64>,
}

pub fn actuator_bounds(inputs: &[[f64; 4]], params: &QuadrotorParams, dt: f64) -> Result<ActuatorResiduals> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput("dt must be positive".into()));
    }
    let bound = inputs
        .iter()
        .flat_map(|u| u.iter().map(|&t| (t - params.thrust_min).min(params.thrust_max - t)))
        .collect();
    let limit = params.thrust_rate_max * dt;
    let rate = inputs
        .windows(2)
        .flat_map(|w| (0..4).map(move |s| limit - (w[1][s] - w[0][s]).abs()))
        .collect();
    Ok(ActuatorResiduals { bound, rate })
}

/// Slack of the attitude limits at one node, radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttitudeResidual {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub degenerate: bool,
}

pub fn attitude_bounds(attitudes: &[Quaternion<f64>], params: &QuadrotorParams) -> Result<Vec<AttitudeResidual>> {
    attitudes
        .iter()
        .enumerate()
        .map(|(k, q)| {
            if (q.norm() - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::InvalidInput(format!("attitude at node {k} is not a unit quaternion")));
            }
            let e = quat_to_euler_zyx(q);
            Ok(AttitudeResidual {
                roll: params.tilt_max - e.roll.abs(),
                pitch: params.tilt_max - e.pitch.abs(),
                yaw: params.yaw_max - e.yaw.abs(),
                degenerate: e.degenerate,
            })
        })
        .collect()
}

/// `x_0 − start` in packed `[p, v, q, ω]` order.
pub fn boundary_constraints(x0: &RigidBodyState, start: &RigidBodyState) -> Vec<f64> {
    (x0.to_vector() - start.to_vector()).as_slice().to_vec()
}

// ---------------------------------------------------------------------------
// NLP blocks

/// `A·x + b` with a constant row-major `A`.
pub(crate) struct AffineBlock {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl BlockFunction for AffineBlock {
    fn rows(&self) -> usize {
        self.b.len()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.a[r * n..(r + 1) * n];
            *o = self.b[r] + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
        }
    }

    fn jacobian(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.a);
    }

    fn nonlinear_vars(&self) -> usize {
        0
    }

    fn hessian(&self, _x: &[f64], _y: &[f64], _out: &mut [f64]) -> bool {
        true
    }
}

/// Local ordering of a quadrotor defect block: the variables that enter
/// nonlinearly come first.
const DEFECT_STATE_INDEX: [usize; 13] = [6, 7, 8, 9, 10, 11, 12, 0, 1, 2, 3, 4, 5];

/// `x_{k+1} − rk4(x_k, u_k)` over locals `[q, ω, u, p, v, x_{k+1}]`.
pub(crate) struct QuadDefect {
    pub params: QuadrotorParams,
    pub dt: f64,
}

impl QuadDefect {
    pub fn local_vars(layout_state_k: usize, layout_input_k: usize, layout_state_k1: usize) -> Vec<usize> {
        let mut v = Vec::with_capacity(30);
        v.extend((6..13).map(|i| layout_state_k + i));
        v.extend((0..4).map(|i| layout_input_k + i));
        v.extend((0..6).map(|i| layout_state_k + i));
        v.extend((0..13).map(|i| layout_state_k1 + i));
        v
    }

    fn split(x: &[f64]) -> (StateVector, Vector4<f64>) {
        let mut xs = StateVector::zeros();
        for (l, &s) in [0, 1, 2, 3, 4, 5, 6].iter().zip(&DEFECT_STATE_INDEX[..7]) {
            xs[s] = x[*l];
        }
        for i in 0..6 {
            xs[i] = x[11 + i];
        }
        (xs, Vector4::new(x[7], x[8], x[9], x[10]))
    }
}

impl BlockFunction for QuadDefect {
    fn rows(&self) -> usize {
        13
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let (xs, u) = Self::split(x);
        let next = crate::vehicle::normalize_quaternion(&crate::vehicle::rk4_raw(&xs, &u, &self.params, self.dt));
        for r in 0..13 {
            out[r] = x[17 + r] - next[r];
        }
    }

    fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        let (xs, u) = Self::split(x);
        let (_, dx, du) = rk4_step_with_jacobians(&xs, &u, &self.params, self.dt);
        let nv = 30;
        out.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..13 {
            let row = &mut out[r * nv..(r + 1) * nv];
            for l in 0..7 {
                row[l] = -dx[(r, DEFECT_STATE_INDEX[l])];
            }
            for c in 0..4 {
                row[7 + c] = -du[(r, c)];
            }
            for l in 0..6 {
                row[11 + l] = -dx[(r, l)];
            }
            row[17 + r] = 1.0;
        }
    }

    fn nonlinear_vars(&self) -> usize {
        11
    }
}

/// `‖q‖² − 1`.
pub(crate) struct QuatNorm;

impl BlockFunction for QuatNorm {
    fn rows(&self) -> usize {
        1
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out[0] = x.iter().map(|v| v * v).sum::<f64>() - 1.0;
    }

    fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..4 {
            out[i] = 2.0 * x[i];
        }
    }

    fn nonlinear_vars(&self) -> usize {
        4
    }

    fn hessian(&self, _x: &[f64], y: &[f64], out: &mut [f64]) -> bool {
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..4 {
            out[i * 4 + i] = 2.0 * y[0];
        }
        true
    }
}

/// Roll, pitch, yaw of `q`.
pub(crate) struct AttitudeBlock;

impl BlockFunction for AttitudeBlock {
    fn rows(&self) -> usize {
        3
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&euler_components(x[0], x[1], x[2], x[3]));
    }

    fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        let g = euler_gradients(x[0], x[1], x[2], x[3]);
        for r in 0..3 {
            out[r * 4..(r + 1) * 4].copy_from_slice(&g[r]);
        }
    }

    fn nonlinear_vars(&self) -> usize {
        4
    }
}

/// `μ·(‖P − P^w‖² + c_v‖v‖² − ν)·scale` over locals `[P, (v), μ, ν]`.
pub(crate) struct Complementarity {
    pub waypoint: Vector3<f64>,
    /// Weight on the squared speed, s²; zero drops `v` from the locals.
    pub speed_weight: f64,
    /// The planner uses `1/tol²` so the relaxation is measured in units of
    /// the pass sphere.
    pub scale: f64,
}

impl Complementarity {
    fn has_v(&self) -> bool {
        self.speed_weight > 0.0
    }

    fn width(&self) -> usize {
        if self.has_v() {
            8
        } else {
            5
        }
    }

    fn gap(&self, x: &[f64]) -> f64 {
        let mut g: f64 = (0..3).map(|i| (x[i] - self.waypoint[i]).powi(2)).sum();
        if self.has_v() {
            g += self.speed_weight * (3..6).map(|i| x[i] * x[i]).sum::<f64>();
        }
        g
    }
}

impl BlockFunction for Complementarity {
    fn rows(&self) -> usize {
        1
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let w = self.width();
        out[0] = self.scale * x[w - 2] * (self.gap(x) - x[w - 1]);
    }

    fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        let w = self.width();
        let mu = x[w - 2];
        for i in 0..3 {
            out[i] = 2.0 * mu * (x[i] - self.waypoint[i]);
        }
        if self.has_v() {
            for i in 3..6 {
                out[i] = 2.0 * mu * self.speed_weight * x[i];
            }
        }
        out[w - 2] = self.gap(x) - x[w - 1];
        out[w - 1] = -mu;
        out[..w].iter_mut().for_each(|v| *v *= self.scale);
    }

    fn nonlinear_vars(&self) -> usize {
        self.width()
    }

    fn hessian(&self, x: &[f64], y: &[f64], out: &mut [f64]) -> bool {
        let w = self.width();
        let (mu, yy) = (x[w - 2], y[0] * self.scale);
        out.iter_mut().for_each(|v| *v = 0.0);
        let im = w - 2;
        for i in 0..3 {
            out[i * w + i] = 2.0 * mu * yy;
            let c = 2.0 * (x[i] - self.waypoint[i]) * yy;
            out[i * w + im] = c;
            out[im * w + i] = c;
        }
        if self.has_v() {
            for i in 3..6 {
                out[i * w + i] = 2.0 * mu * self.speed_weight * yy;
                let c = 2.0 * self.speed_weight * x[i] * yy;
                out[i * w + im] = c;
                out[im * w + i] = c;
            }
        }
        out[im * w + w - 1] = -yy;
        out[(w - 1) * w + im] = -yy;
        true
    }
}

/// `‖E(P_i − P_r)‖² − δ·gate(λ_i, λ_r)` over `[P_i, P_r, λ_i, λ_r]`.
pub(crate) struct CollisionBlock {
    pub spec: CollisionSpec,
}

impl BlockFunction for CollisionBlock {
    fn rows(&self) -> usize {
        1
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let pi = Vector3::new(x[0], x[1], x[2]);
        let pr = Vector3::new(x[3], x[4], x[5]);
        out[0] = collision_residual(&pi, &pr, collision_gate(x[6], x[7]), &self.spec);
    }

    fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        for a in 0..3 {
            let e2 = self.spec.e_diag[a] * self.spec.e_diag[a];
            let g = 2.0 * e2 * (x[a] - x[3 + a]);
            out[a] = g;
            out[3 + a] = -g;
        }
        out[6] = -self.spec.delta_col * (1.0 - x[7]);
        out[7] = -self.spec.delta_col * (1.0 - x[6]);
    }

    fn nonlinear_vars(&self) -> usize {
        8
    }

    fn hessian(&self, _x: &[f64], y: &[f64], out: &mut [f64]) -> bool {
        out.iter_mut().for_each(|v| *v = 0.0);
        for a in 0..3 {
            let h = 2.0 * self.spec.e_diag[a] * self.spec.e_diag[a] * y[0];
            out[a * 8 + a] = h;
            out[(3 + a) * 8 + 3 + a] = h;
            out[a * 8 + 3 + a] = -h;
            out[(3 + a) * 8 + a] = -h;
        }
        out[6 * 8 + 7] = self.spec.delta_col * y[0];
        out[7 * 8 + 6] = self.spec.delta_col * y[0];
        true
    }
}

/// Settings that shape the constraint set beyond the physical data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct BlockSettings {
    pub dt: f64,
    /// Initial relaxation of the complementarity rows.
    pub epsilon: f64,
    /// Factor applied to every complementarity row.
    pub complementarity_scale: f64,
    pub enforce_attitude: bool,
    pub enforce_rate: bool,
}

fn affine(a: Vec<f64>, b: Vec<f64>) -> Arc<dyn BlockFunction> {
    Arc::new(AffineBlock { a, b })
}

/// Row-major identity-like matrix with entries at `(r, c)`.
fn sparse_rows(rows: usize, cols: usize, entries: &[(usize, usize, f64)]) -> Vec<f64> {
    let mut a = vec![0.0; rows * cols];
    for &(r, c, v) in entries {
        a[r * cols + c] += v;
    }
    a
}

/// All single-drone blocks: dynamics, attitude norm, initial state,
/// progress and actuator/attitude limits.
pub(crate) fn drone_blocks(
    layout: &DecisionLayout,
    drone: usize,
    model: &VehicleModel,
    track: &DroneTrack,
    s: &BlockSettings,
) -> Vec<ConstraintBlock> {
    let d = &layout.drones[drone];
    let n = layout.nodes;
    let nx = d.nx;
    let w = d.waypoints;
    let mut out = Vec::new();
    let tag = |what: &str, k: usize| format!("drone {drone} {what} node {k}");

    // initial state
    let start = model.pack_state(&track.start);
    out.push(ConstraintBlock::equality(
        ConstraintClass::Initial,
        tag("initial", 0),
        (0..nx).map(|i| d.state(0) + i).collect(),
        affine(sparse_rows(nx, nx, &(0..nx).map(|i| (i, i, 1.0)).collect::<Vec<_>>()), start.iter().map(|v| -v).collect()),
    ));

    for k in 0..n - 1 {
        match model {
            VehicleModel::Quadrotor(p) => {
                out.push(ConstraintBlock::equality(
                    ConstraintClass::Dynamics,
                    tag("dynamics", k),
                    QuadDefect::local_vars(d.state(k), d.input(k), d.state(k + 1)),
                    Arc::new(QuadDefect {
                        params: p.clone(),
                        dt: s.dt,
                    }),
                ));
            }
            VehicleModel::PointMass(_) => {
                // locals [p_k, v_k, a_k, p_{k+1}, v_{k+1}]
                let h = s.dt;
                let mut e = Vec::new();
                for a in 0..3 {
                    e.push((a, 9 + a, 1.0));
                    e.push((a, a, -1.0));
                    e.push((a, 3 + a, -h));
                    e.push((a, 6 + a, -0.5 * h * h));
                    e.push((3 + a, 12 + a, 1.0));
                    e.push((3 + a, 3 + a, -1.0));
                    e.push((3 + a, 6 + a, -h));
                }
                let mut vars: Vec<usize> = (0..6).map(|i| d.state(k) + i).collect();
                vars.extend((0..3).map(|i| d.input(k) + i));
                vars.extend((0..6).map(|i| d.state(k + 1) + i));
                out.push(ConstraintBlock::equality(
                    ConstraintClass::Dynamics,
                    tag("dynamics", k),
                    vars,
                    affine(sparse_rows(6, 15, &e), vec![0.0; 6]),
                ));
            }
        }
    }

    if let VehicleModel::Quadrotor(p) = model {
        for k in 0..n {
            out.push(ConstraintBlock::equality(
                ConstraintClass::QuaternionNorm,
                tag("quaternion", k),
                (6..10).map(|i| d.state(k) + i).collect(),
                Arc::new(QuatNorm),
            ));
        }
        if s.enforce_attitude {
            for k in 0..n {
                out.push(ConstraintBlock::ranged(
                    ConstraintClass::Attitude,
                    tag("attitude", k),
                    (6..10).map(|i| d.state(k) + i).collect(),
                    Arc::new(AttitudeBlock),
                    vec![-p.tilt_max, -p.tilt_max, -p.yaw_max],
                    vec![p.tilt_max, p.tilt_max, p.yaw_max],
                ));
            }
        }
        if s.enforce_rate {
            let lim = p.thrust_rate_max * s.dt;
            for k in 0..n - 1 {
                let mut vars: Vec<usize> = (0..4).map(|i| d.input(k) + i).collect();
                vars.extend((0..4).map(|i| d.input(k + 1) + i));
                let e: Vec<_> = (0..4).flat_map(|i| [(i, i, -1.0), (i, 4 + i, 1.0)]).collect();
                out.push(ConstraintBlock::ranged(
                    ConstraintClass::ActuatorRate,
                    tag("thrust rate", k),
                    vars,
                    affine(sparse_rows(4, 8, &e), vec![0.0; 4]),
                    vec![-lim; 4],
                    vec![lim; 4],
                ));
            }
        }
    }

    // progress: λ_0 = 1 and λ_{N−1} = 0
    let ident: Vec<_> = (0..w).map(|j| (j, j, 1.0)).collect();
    out.push(ConstraintBlock::equality(
        ConstraintClass::Progress,
        tag("progress start", 0),
        (0..w).map(|j| d.lambda(0, j)).collect(),
        affine(sparse_rows(w, w, &ident), vec![-1.0; w]),
    ));
    out.push(ConstraintBlock::equality(
        ConstraintClass::Progress,
        tag("progress end", n - 1),
        (0..w).map(|j| d.lambda(n - 1, j)).collect(),
        affine(sparse_rows(w, w, &ident), vec![0.0; w]),
    ));
    for k in 0..n {
        if w > 1 {
            let e: Vec<_> = (0..w - 1).flat_map(|j| [(j, j, 1.0), (j, j + 1, -1.0)]).collect();
            out.push(ConstraintBlock::ranged(
                ConstraintClass::Progress,
                tag("sequencing", k),
                (0..w).map(|j| d.lambda(k, j)).collect(),
                affine(sparse_rows(w - 1, w, &e), vec![0.0; w - 1]),
                vec![f64::NEG_INFINITY; w - 1],
                vec![0.0; w - 1],
            ));
        }
        if k + 1 < n {
            // locals [λ_k, λ_{k+1}, μ_k]
            let mut vars: Vec<usize> = (0..w).map(|j| d.lambda(k, j)).collect();
            vars.extend((0..w).map(|j| d.lambda(k + 1, j)));
            vars.extend((0..w).map(|j| d.mu(k, j)));
            let e: Vec<_> = (0..w).flat_map(|j| [(j, j, -1.0), (j, w + j, 1.0), (j, 2 * w + j, 1.0)]).collect();
            out.push(ConstraintBlock::equality(
                ConstraintClass::Progress,
                tag("telescoping", k),
                vars,
                affine(sparse_rows(w, 3 * w, &e), vec![0.0; w]),
            ));
            for j in 0..w {
                let stop = track.stop_at_final && j + 1 == w;
                let mut vars: Vec<usize> = (0..3).map(|i| d.state(k + 1) + i).collect();
                if stop {
                    vars.extend((3..6).map(|i| d.state(k + 1) + i));
                }
                vars.push(d.mu(k, j));
                vars.push(d.nu(k, j));
                out.push(ConstraintBlock::ranged(
                    ConstraintClass::Complementarity,
                    format!("drone {drone} complementarity waypoint {j} node {}", k + 1),
                    vars,
                    Arc::new(Complementarity {
                        waypoint: track.waypoints[j],
                        speed_weight: if stop { 1.0 } else { 0.0 },
                        scale: s.complementarity_scale,
                    }),
                    vec![-s.epsilon],
                    vec![s.epsilon],
                ));
            }
        }
    }
    out
}

/// Collision blocks for one pair.
pub(crate) fn pair_blocks(layout: &DecisionLayout, i: usize, r: usize, exempt: usize, spec: &CollisionSpec) -> Vec<ConstraintBlock> {
    let (a, b) = (&layout.drones[i], &layout.drones[r]);
    let (wa, wb) = (a.waypoints - 1, b.waypoints - 1);
    (exempt..layout.nodes)
        .map(|k| {
            let mut vars: Vec<usize> = (0..3).map(|c| a.state(k) + c).collect();
            vars.extend((0..3).map(|c| b.state(k) + c));
            vars.push(a.lambda(k, wa));
            vars.push(b.lambda(k, wb));
            ConstraintBlock::ranged(
                ConstraintClass::Collision,
                format!("collision drones {i},{r} node {k}"),
                vars,
                Arc::new(CollisionBlock { spec: *spec }),
                vec![0.0],
                vec![f64::INFINITY],
            )
        })
        .collect()
}
