//! Closed-loop replay of planned trajectories.
//!
//! The controller adds a cascaded correction to the plan's own body rates
//! and collective thrust: position PID → velocity command, velocity PI →
//! acceleration correction, which tilts the reference thrust direction and
//! adjusts the collective; a proportional attitude loop turns the tilt into
//! a body-rate correction. The low-level rate loop is a first-order lag on
//! body rates, realized as the reference torque plus `J(ω_cmd − ω)/τ`.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::TrajectorySolution;
use crate::vehicle::{rk4_step, rotor_wrench, QuadrotorParams, RigidBodyState, RotorThrusts, INPUT_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerGains {
    /// Position error → velocity command, 1/s.
    pub pos_p: [f64; 3],
    pub pos_i: [f64; 3],
    /// Acts on the velocity error, dimensionless.
    pub pos_d: [f64; 3],
    /// Velocity error → acceleration, 1/s.
    pub vel_p: [f64; 3],
    pub vel_i: [f64; 3],
    /// Attitude error → body-rate correction, 1/s.
    pub att_p: f64,
    /// Time constant of the rate loop, s.
    pub rate_time_constant: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            pos_p: [1.5; 3],
            pos_i: [0.0; 3],
            pos_d: [0.0; 3],
            vel_p: [6.0; 3],
            vel_i: [0.0; 3],
            att_p: 15.0,
            rate_time_constant: 0.05,
        }
    }
}

impl ControllerGains {
    /// Feedforward only; the rate loop keeps its time constant.
    pub fn zero() -> Self {
        Self {
            pos_p: [0.0; 3],
            pos_i: [0.0; 3],
            pos_d: [0.0; 3],
            vel_p: [0.0; 3],
            vel_i: [0.0; 3],
            att_p: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let gains = [self.pos_p, self.pos_i, self.pos_d, self.vel_p, self.vel_i];
        if gains.iter().flatten().chain([&self.att_p]).any(|g| !(*g >= 0.0 && g.is_finite())) {
            return Err(Error::InvalidConfig("controller gains must be finite and non-negative".into()));
        }
        if !(self.rate_time_constant > 0.0 && self.rate_time_constant.is_finite()) {
            return Err(Error::InvalidConfig("controller.rate_time_constant must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationOptions {
    /// Control and integration step; `None` uses the grid step.
    pub sim_dt: Option<f64>,
    /// Bound on each component of a random world-frame force, N.
    pub disturbance_force: f64,
    pub seed: u64,
    /// Added to the first node's position to form the initial state, m.
    pub initial_offset: [f64; 3],
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            sim_dt: None,
            disturbance_force: 0.0,
            seed: 0,
            initial_offset: [0.0; 3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingTick {
    pub t: f64,
    pub reference: RigidBodyState,
    pub state: RigidBodyState,
    pub rate_cmd: Vector3<f64>,
    pub thrust_cmd: f64,
    /// Reference minus simulated position, m.
    pub position_error: Vector3<f64>,
    pub speed: f64,
    /// At least one rotor command was clipped this tick.
    pub saturated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingLog {
    pub dt: f64,
    pub ticks: Vec<TrackingTick>,
}

impl TrackingLog {
    pub fn saturation_count(&self) -> usize {
        self.ticks.iter().filter(|t| t.saturated).count()
    }
}

/// Reference state at `t`: linear between nodes, quaternion by normalized
/// interpolation; held at the last node past the horizon.
fn reference_state(sol: &TrajectorySolution, t: f64) -> (RigidBodyState, usize) {
    let n = sol.nodes();
    let x = t / sol.dt;
    let k = ((x + 1e-9).floor() as usize).min(n - 1);
    let s = (x - k as f64).clamp(0.0, 1.0);
    if k + 1 >= n || s <= 1e-9 {
        return (sol.states[k], k);
    }
    let (a, b) = (&sol.states[k], &sol.states[k + 1]);
    let qb = if a.q.dot(&b.q) < 0.0 { -b.q } else { b.q };
    let q = a.q * (1.0 - s) + qb * s;
    (
        RigidBodyState {
            p: a.p.lerp(&b.p, s),
            v: a.v.lerp(&b.v, s),
            q: q / q.norm(),
            w: a.w.lerp(&b.w, s),
        },
        k,
    )
}

fn unit(q: &Quaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(*q)
}

/// Shortest rotation taking direction `a` to `b`, from the half-way
/// quaternion `(|a||b| + a·b, a × b)`; accurate for small angles.
fn tilt_between(a: &Vector3<f64>, b: &Vector3<f64>) -> Option<UnitQuaternion<f64>> {
    let w = a.norm() * b.norm() + a.dot(b);
    let v = a.cross(b);
    if !(w > 1e-12 * a.norm() * b.norm()) {
        return None;
    }
    Some(UnitQuaternion::new_normalize(Quaternion::from_parts(w, v)))
}

/// Simulates one drone following `solution` from its first node.
pub fn simulate_tracking(
    solution: &TrajectorySolution,
    gains: &ControllerGains,
    params: &QuadrotorParams,
    options: &SimulationOptions,
) -> Result<TrackingLog> {
    gains.validate()?;
    params.validate()?;
    if solution.nodes() < 2 {
        return Err(Error::InvalidInput("solution needs at least two nodes".into()));
    }
    if solution.inputs.iter().any(|u| u.len() != INPUT_DIM) {
        return Err(Error::InvalidInput("tracking needs rotor-thrust inputs".into()));
    }
    let h = options.sim_dt.unwrap_or(solution.dt);
    if !(h > 0.0 && h <= solution.dt * (1.0 + 1e-12)) {
        return Err(Error::InvalidInput(format!(
            "sim_dt must be in (0, {}], got {h}",
            solution.dt
        )));
    }
    if !(options.disturbance_force >= 0.0 && options.disturbance_force.is_finite()) {
        return Err(Error::InvalidInput("disturbance_force must be finite and non-negative".into()));
    }
    let horizon = (solution.nodes() - 1) as f64 * solution.dt;
    let ticks = (horizon / h + 1e-9).floor() as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let m = params.mass;
    let e3 = Vector3::z();
    let mut x = solution.states[0];
    x.p += Vector3::from(options.initial_offset);
    let mut int_p = Vector3::zeros();
    let mut int_v = Vector3::zeros();
    let mut out = Vec::with_capacity(ticks);

    for i in 0..ticks {
        let t = i as f64 * h;
        let (r, k) = reference_state(solution, t);
        let u_ref = RotorThrusts([
            solution.inputs[k][0],
            solution.inputs[k][1],
            solution.inputs[k][2],
            solution.inputs[k][3],
        ]);
        let (thrust_ref, torque_ref) = rotor_wrench(&u_ref, params)?;
        let t_ref = thrust_ref.z;

        let e_p = r.p - x.p;
        let e_d = r.v - x.v;
        let v_cmd = r.v
            + Vector3::from(gains.pos_p).component_mul(&e_p)
            + Vector3::from(gains.pos_i).component_mul(&int_p)
            + Vector3::from(gains.pos_d).component_mul(&e_d);
        let e_v = v_cmd - x.v;
        let da = Vector3::from(gains.vel_p).component_mul(&e_v) + Vector3::from(gains.vel_i).component_mul(&int_v);
        int_p += e_p * h;
        int_v += e_v * h;

        let q_ref = unit(&r.q);
        let q = unit(&x.q);
        let z_ref = q_ref * e3;
        let f_ref = z_ref * t_ref;
        let f_des = f_ref + da * m;
        let collective = (t_ref + m * da.dot(&(q * e3))).max(0.0);
        let q_des = match tilt_between(&f_ref, &f_des) {
            Some(tilt) => tilt * q_ref,
            None => q_ref,
        };
        let mut q_err = (q.inverse() * q_des).into_inner();
        if q_err.w < 0.0 {
            q_err = -q_err;
        }
        let w_cmd = r.w + q_err.imag() * (2.0 * gains.att_p);
        let torque = torque_ref + params.inertia * (w_cmd - x.w) / gains.rate_time_constant;

        let raw = params.allocate(collective, &torque);
        let mut saturated = false;
        let mut u = raw;
        for c in u.0.iter_mut() {
            let clipped = c.clamp(params.thrust_min, params.thrust_max);
            if clipped != *c {
                saturated = true;
                *c = clipped;
            }
        }
        if saturated {
            log::debug!("rotor command clipped at t = {t:.4}: {:?}", raw.0);
        }

        out.push(TrackingTick {
            t,
            reference: r,
            state: x,
            rate_cmd: w_cmd,
            thrust_cmd: collective,
            position_error: e_p,
            speed: x.v.norm(),
            saturated,
        });
        if i + 1 == ticks {
            break;
        }
        x = rk4_step(&x, &u, params, h)?;
        if options.disturbance_force > 0.0 {
            let f = Vector3::from_fn(|_, _| rng.gen_range(-1.0..=1.0) * options.disturbance_force);
            x.v += f / m * h;
        }
    }
    Ok(TrackingLog { dt: h, ticks: out })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingMetrics {
    pub rmse: f64,
    pub max_error: f64,
    /// Per waypoint, searched in order along the simulated path.
    pub closest_approach: Vec<f64>,
    pub within_tol: Vec<bool>,
    pub max_speed: f64,
}

/// Error statistics and waypoint approaches of a tracking run.
///
/// The closest approach to waypoint `j` is the minimum distance over ticks
/// from the tick of the closest approach to waypoint `j − 1` onward.
pub fn tracking_metrics(log: &TrackingLog, waypoints: &[Vector3<f64>], tol: f64) -> Result<TrackingMetrics> {
    if log.ticks.is_empty() {
        return Err(Error::InvalidInput("tracking log is empty".into()));
    }
    let n = log.ticks.len() as f64;
    let errs: Vec<f64> = log.ticks.iter().map(|t| t.position_error.norm()).collect();
    let rmse = (errs.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let max_error = errs.iter().copied().fold(0.0, f64::max);
    let max_speed = log.ticks.iter().map(|t| t.speed).fold(0.0, f64::max);
    let mut from = 0;
    let mut closest = Vec::with_capacity(waypoints.len());
    for w in waypoints {
        let (best, d) = log.ticks[from..]
            .iter()
            .enumerate()
            .map(|(i, t)| (from + i, (t.state.p - w).norm()))
            .fold((from, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        closest.push(d);
        from = best;
    }
    Ok(TrackingMetrics {
        rmse,
        max_error,
        within_tol: closest.iter().map(|d| *d <= tol).collect(),
        closest_approach: closest,
        max_speed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedProfile {
    /// `‖v_k‖` for nodes up to and including the arrival node.
    pub speeds: Vec<f64>,
    pub max: f64,
}

pub fn speed_profile(solution: &TrajectorySolution) -> SpeedProfile {
    let end = solution.arrival_node.min(solution.nodes().saturating_sub(1));
    let speeds: Vec<f64> = solution.states[..=end].iter().map(|s| s.v.norm()).collect();
    let max = speeds.iter().copied().fold(0.0, f64::max);
    SpeedProfile { speeds, max }
}
