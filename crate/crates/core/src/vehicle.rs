//! Continuous-time vehicle models.
//!
//! The quadrotor is a rigid body driven by four rotor thrusts:
//!
//! ```text
//! ṗ = v
//! v̇ = g + R(q)·(0, 0, ΣTs)/m
//! q̇ = ½ q ⊗ (0, ω)
//! ω̇ = J⁻¹(τ − ω × Jω)
//! ```
//!
//! Quaternions are scalar-first Hamilton quaternions `[w, x, y, z]` rotating
//! body vectors into the world frame. Body rates are expressed in the body
//! frame. The packed 13-vector ordering is `[p, v, q, ω]`.
//!
//! A point-mass double integrator is provided alongside; it has a closed-form
//! minimum-time solution and is used to check the optimizer end to end.

use nalgebra::{Matrix3, Quaternion, SMatrix, SVector, UnitQuaternion, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STATE_DIM: usize = 13;
pub const INPUT_DIM: usize = 4;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type StateJacobian = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type InputJacobian = SMatrix<f64, STATE_DIM, INPUT_DIM>;

/// Quaternion norm deviation tolerated by the checked entry points.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// Standard gravity along −z.
pub const GRAVITY: f64 = 9.81;

/// Position, velocity, attitude and body rates of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidBodyState {
    /// World-frame position, m.
    pub p: Vector3<f64>,
    /// World-frame velocity, m/s.
    pub v: Vector3<f64>,
    /// World-from-body attitude, scalar first.
    pub q: Quaternion<f64>,
    /// Body-frame angular velocity, rad/s.
    pub w: Vector3<f64>,
}

impl Default for RigidBodyState {
    fn default() -> Self {
        Self::at_rest(Vector3::zeros())
    }
}

impl RigidBodyState {
    /// Level attitude, zero velocity and zero rates at `p`.
    pub fn at_rest(p: Vector3<f64>) -> Self {
        Self {
            p,
            v: Vector3::zeros(),
            q: Quaternion::identity(),
            w: Vector3::zeros(),
        }
    }

    pub fn to_vector(&self) -> StateVector {
        let mut x = StateVector::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.p);
        x.fixed_rows_mut::<3>(3).copy_from(&self.v);
        x[6] = self.q.w;
        x[7] = self.q.i;
        x[8] = self.q.j;
        x[9] = self.q.k;
        x.fixed_rows_mut::<3>(10).copy_from(&self.w);
        x
    }

    pub fn from_vector(x: &StateVector) -> Self {
        Self::from_slice(x.as_slice())
    }

    /// Reads a packed `[p, v, q, ω]` slice of length 13.
    pub fn from_slice(x: &[f64]) -> Self {
        Self {
            p: Vector3::new(x[0], x[1], x[2]),
            v: Vector3::new(x[3], x[4], x[5]),
            q: Quaternion::new(x[6], x[7], x[8], x[9]),
            w: Vector3::new(x[10], x[11], x[12]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|c| c.is_finite())
    }

    /// Rescales the quaternion to unit norm.
    pub fn normalize_attitude(&mut self) {
        let n = self.q.norm();
        if n > 0.0 {
            self.q /= n;
        }
    }

    fn check_unit(&self) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::InvalidState("non-finite state component".into()));
        }
        let dev = (self.q.norm() - 1.0).abs();
        if dev > UNIT_NORM_TOLERANCE {
            return Err(Error::InvalidState(format!(
                "quaternion norm deviates from 1 by {dev:.3e}"
            )));
        }
        Ok(())
    }
}

/// Per-rotor thrusts `[T1, T2, T3, T4]` in newtons.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RotorThrusts(pub [f64; 4]);

impl RotorThrusts {
    pub fn uniform(t: f64) -> Self {
        Self([t; 4])
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::from_column_slice(&self.0)
    }

    /// Checks every rotor against the actuator box of `params`.
    pub fn validate(&self, params: &QuadrotorParams) -> Result<()> {
        for (s, &t) in self.0.iter().enumerate() {
            if !t.is_finite() {
                return Err(Error::InvalidInput(format!("rotor {} thrust is not finite", s + 1)));
            }
            if t < params.thrust_min || t > params.thrust_max {
                return Err(Error::InvalidInput(format!(
                    "rotor {} thrust {t} outside [{}, {}]",
                    s + 1,
                    params.thrust_min,
                    params.thrust_max
                )));
            }
        }
        Ok(())
    }
}

/// Physical and actuator parameters of one quadrotor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadrotorParams {
    /// kg
    pub mass: f64,
    /// Body-frame inertia, kg·m².
    pub inertia: Matrix3<f64>,
    /// Rotor arm length, m.
    pub arm_length: f64,
    /// Yaw torque per newton of rotor thrust, m.
    pub c_tau: f64,
    /// Per-rotor thrust bounds, N.
    pub thrust_min: f64,
    pub thrust_max: f64,
    /// Per-rotor thrust rate bound, N/s.
    pub thrust_rate_max: f64,
    /// Roll and pitch bound, rad.
    pub tilt_max: f64,
    /// Yaw bound, rad.
    pub yaw_max: f64,
    /// m/s²
    pub gravity: Vector3<f64>,
}

impl Default for QuadrotorParams {
    fn default() -> Self {
        Self {
            mass: 0.713,
            inertia: Matrix3::from_diagonal(&Vector3::new(2.5e-3, 2.5e-3, 4.5e-3)),
            arm_length: 0.15,
            c_tau: 0.05,
            thrust_min: 1.0,
            thrust_max: 7.35,
            thrust_rate_max: 120.0,
            tilt_max: 60f64.to_radians(),
            yaw_max: 5f64.to_radians(),
            gravity: Vector3::new(0.0, 0.0, -GRAVITY),
        }
    }
}

impl QuadrotorParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.mass > 0.0) {
            return bad("mass must be positive");
        }
        if (self.inertia - self.inertia.transpose()).abs().max() > 1e-12 {
            return bad("inertia must be symmetric");
        }
        if self.inertia.cholesky().is_none() {
            return bad("inertia must be positive definite");
        }
        if !(self.arm_length > 0.0) || !(self.c_tau > 0.0) {
            return bad("arm length and torque coefficient must be positive");
        }
        if !(self.thrust_min >= 0.0 && self.thrust_min < self.thrust_max) {
            return bad("thrust bounds must satisfy 0 <= min < max");
        }
        if !(self.thrust_rate_max > 0.0) {
            return bad("thrust rate bound must be positive");
        }
        if !(self.tilt_max > 0.0) || !(self.yaw_max > 0.0) {
            return bad("attitude bounds must be positive");
        }
        if !self.gravity.iter().all(|g| g.is_finite()) {
            return bad("gravity must be finite");
        }
        Ok(())
    }

    /// Per-rotor thrust that balances gravity with level attitude.
    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity.norm() / 4.0
    }

    /// Maps `(ΣTs, τ)` back to rotor thrusts; inverse of [`rotor_wrench`].
    pub fn allocate(&self, collective: f64, torque: &Vector3<f64>) -> RotorThrusts {
        let m = allocation_matrix(self);
        let inv = m
            .try_inverse()
            .expect("allocation matrix is invertible for positive arm length and c_tau");
        let t = inv * nalgebra::Vector4::new(collective, torque.x, torque.y, torque.z);
        RotorThrusts([t[0], t[1], t[2], t[3]])
    }
}

/// Rows: collective thrust, roll, pitch and yaw torque.
fn allocation_matrix(params: &QuadrotorParams) -> SMatrix<f64, 4, 4> {
    let a = params.arm_length / std::f64::consts::SQRT_2;
    let c = params.c_tau;
    SMatrix::<f64, 4, 4>::new(
        1.0, 1.0, 1.0, 1.0, //
        a, a, -a, -a, //
        -a, a, a, -a, //
        c, -c, c, -c,
    )
}

fn torque_map(params: &QuadrotorParams) -> SMatrix<f64, 3, 4> {
    allocation_matrix(params).fixed_rows::<3>(1).into_owned()
}

/// Body-frame thrust vector and torque produced by the rotors.
pub fn rotor_wrench(u: &RotorThrusts, params: &QuadrotorParams) -> Result<(Vector3<f64>, Vector3<f64>)> {
    if u.0.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidInput("rotor thrusts must be finite".into()));
    }
    let thrust = Vector3::new(0.0, 0.0, u.total());
    let torque = torque_map(params) * u.as_vector();
    Ok((thrust, torque))
}

/// State derivative of the quadrotor; rejects non-unit attitudes.
pub fn quad_dynamics(x: &RigidBodyState, u: &RotorThrusts, params: &QuadrotorParams) -> Result<StateVector> {
    x.check_unit()?;
    if u.0.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidInput("rotor thrusts must be finite".into()));
    }
    Ok(dynamics(&x.to_vector(), &u.as_vector(), params))
}

/// Analytic `∂f/∂x` and `∂f/∂u` of [`quad_dynamics`].
pub fn quad_dynamics_jacobians(
    x: &RigidBodyState,
    u: &RotorThrusts,
    params: &QuadrotorParams,
) -> Result<(StateJacobian, InputJacobian)> {
    x.check_unit()?;
    Ok(dynamics_jacobians(&x.to_vector(), &u.as_vector(), params))
}

/// Third column of R(q), written so it stays smooth for non-unit q.
fn body_z(w: f64, x: f64, y: f64, z: f64) -> Vector3<f64> {
    Vector3::new(
        2.0 * (x * z + w * y),
        2.0 * (y * z - w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

pub(crate) fn dynamics(x: &StateVector, u: &Vector4<f64>, params: &QuadrotorParams) -> StateVector {
    let (qw, qx, qy, qz) = (x[6], x[7], x[8], x[9]);
    let w = Vector3::new(x[10], x[11], x[12]);
    let collective = u.sum();
    let acc = params.gravity + body_z(qw, qx, qy, qz) * (collective / params.mass);
    let qdot = 0.5
        * Vector4::new(
            -qx * w.x - qy * w.y - qz * w.z,
            qw * w.x + qy * w.z - qz * w.y,
            qw * w.y + qz * w.x - qx * w.z,
            qw * w.z + qx * w.y - qy * w.x,
        );
    let tau = torque_map(params) * u;
    let jw = params.inertia * w;
    let wdot = inverse_inertia(params) * (tau - w.cross(&jw));

    let mut f = StateVector::zeros();
    f.fixed_rows_mut::<3>(0).copy_from(&x.fixed_rows::<3>(3));
    f.fixed_rows_mut::<3>(3).copy_from(&acc);
    f.fixed_rows_mut::<4>(6).copy_from(&qdot);
    f.fixed_rows_mut::<3>(10).copy_from(&wdot);
    f
}

fn inverse_inertia(params: &QuadrotorParams) -> Matrix3<f64> {
    params
        .inertia
        .try_inverse()
        .expect("inertia validated positive definite")
}

pub(crate) fn dynamics_jacobians(
    x: &StateVector,
    u: &Vector4<f64>,
    params: &QuadrotorParams,
) -> (StateJacobian, InputJacobian) {
    let (qw, qx, qy, qz) = (x[6], x[7], x[8], x[9]);
    let w = Vector3::new(x[10], x[11], x[12]);
    let t_over_m = u.sum() / params.mass;
    let j_inv = inverse_inertia(params);

    let mut a = StateJacobian::zeros();
    // ṗ = v
    for i in 0..3 {
        a[(i, 3 + i)] = 1.0;
    }
    // v̇ wrt q
    let cols = [
        Vector3::new(2.0 * qy, -2.0 * qx, 0.0),
        Vector3::new(2.0 * qz, -2.0 * qw, -4.0 * qx),
        Vector3::new(2.0 * qw, 2.0 * qz, -4.0 * qy),
        Vector3::new(2.0 * qx, 2.0 * qy, 0.0),
    ];
    for (c, col) in cols.iter().enumerate() {
        for r in 0..3 {
            a[(3 + r, 6 + c)] = col[r] * t_over_m;
        }
    }
    // q̇ wrt q
    let dq_dq = 0.5
        * nalgebra::Matrix4::new(
            0.0, -w.x, -w.y, -w.z, //
            w.x, 0.0, w.z, -w.y, //
            w.y, -w.z, 0.0, w.x, //
            w.z, w.y, -w.x, 0.0,
        );
    a.fixed_view_mut::<4, 4>(6, 6).copy_from(&dq_dq);
    // q̇ wrt ω
    let dq_dw = 0.5
        * SMatrix::<f64, 4, 3>::new(
            -qx, -qy, -qz, //
            qw, -qz, qy, //
            qz, qw, -qx, //
            -qy, qx, qw,
        );
    a.fixed_view_mut::<4, 3>(6, 10).copy_from(&dq_dw);
    // ω̇ wrt ω: −J⁻¹(skew(ω)J − skew(Jω))
    let jw = params.inertia * w;
    let dw_dw = -j_inv * (w.cross_matrix() * params.inertia - jw.cross_matrix());
    a.fixed_view_mut::<3, 3>(10, 10).copy_from(&dw_dw);

    let mut b = InputJacobian::zeros();
    let z = body_z(qw, qx, qy, qz) / params.mass;
    for s in 0..4 {
        b.fixed_view_mut::<3, 1>(3, s).copy_from(&z);
    }
    b.fixed_view_mut::<3, 4>(10, 0).copy_from(&(j_inv * torque_map(params)));
    (a, b)
}

/// One classical RK4 step with inputs held constant; the quaternion is
/// renormalized afterwards.
pub fn rk4_step(x: &RigidBodyState, u: &RotorThrusts, params: &QuadrotorParams, dt: f64) -> Result<RigidBodyState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("step must be positive, got {dt}")));
    }
    x.check_unit()?;
    let next = rk4_raw(&x.to_vector(), &u.as_vector(), params, dt);
    Ok(RigidBodyState::from_vector(&normalize_quaternion(&next)))
}

pub(crate) fn rk4_raw(x: &StateVector, u: &Vector4<f64>, params: &QuadrotorParams, h: f64) -> StateVector {
    let k1 = dynamics(x, u, params);
    let k2 = dynamics(&(x + k1 * (h / 2.0)), u, params);
    let k3 = dynamics(&(x + k2 * (h / 2.0)), u, params);
    let k4 = dynamics(&(x + k3 * h), u, params);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

pub(crate) fn normalize_quaternion(x: &StateVector) -> StateVector {
    let mut out = *x;
    let n = x.fixed_rows::<4>(6).norm();
    if n > 0.0 {
        out.fixed_rows_mut::<4>(6).unscale_mut(n);
    }
    out
}

/// Normalized RK4 step together with its derivatives with respect to the
/// starting state and the held input. Does not check the attitude norm, so
/// it can be evaluated at arbitrary optimizer iterates.
pub(crate) fn rk4_step_with_jacobians(
    x: &StateVector,
    u: &Vector4<f64>,
    params: &QuadrotorParams,
    h: f64,
) -> (StateVector, StateJacobian, InputJacobian) {
    let eye = StateJacobian::identity();

    let k1 = dynamics(x, u, params);
    let (a1, b1) = dynamics_jacobians(x, u, params);
    let dk1x = a1;
    let dk1u = b1;

    let x2 = x + k1 * (h / 2.0);
    let k2 = dynamics(&x2, u, params);
    let (a2, b2) = dynamics_jacobians(&x2, u, params);
    let dk2x = a2 * (eye + dk1x * (h / 2.0));
    let dk2u = a2 * dk1u * (h / 2.0) + b2;

    let x3 = x + k2 * (h / 2.0);
    let k3 = dynamics(&x3, u, params);
    let (a3, b3) = dynamics_jacobians(&x3, u, params);
    let dk3x = a3 * (eye + dk2x * (h / 2.0));
    let dk3u = a3 * dk2u * (h / 2.0) + b3;

    let x4 = x + k3 * h;
    let k4 = dynamics(&x4, u, params);
    let (a4, b4) = dynamics_jacobians(&x4, u, params);
    let dk4x = a4 * (eye + dk3x * h);
    let dk4u = a4 * dk3u * h + b4;

    let raw = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    let mut dx = eye + (dk1x + dk2x * 2.0 + dk3x * 2.0 + dk4x) * (h / 6.0);
    let mut du = (dk1u + dk2u * 2.0 + dk3u * 2.0 + dk4u) * (h / 6.0);

    // q ← q̃/‖q̃‖, with ∂q/∂q̃ = (I − q qᵀ)/‖q̃‖
    let qt = raw.fixed_rows::<4>(6).into_owned();
    let n = qt.norm();
    let q = qt / n;
    let dn = (nalgebra::Matrix4::identity() - q * q.transpose()) / n;
    let rows_x = dn * dx.fixed_rows::<4>(6);
    dx.fixed_rows_mut::<4>(6).copy_from(&rows_x);
    let rows_u = dn * du.fixed_rows::<4>(6);
    du.fixed_rows_mut::<4>(6).copy_from(&rows_u);

    let mut next = raw;
    next.fixed_rows_mut::<4>(6).copy_from(&q);
    (next, dx, du)
}

/// Roll, pitch and yaw of a ZYX (yaw-pitch-roll) decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerZyx {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    /// Pitch lies within 1e-6 rad of ±π/2, where roll and yaw are not unique.
    pub degenerate: bool,
}

/// ZYX Euler angles of a unit quaternion. Roll and yaw lie in (−π, π],
/// pitch in [−π/2, π/2].
pub fn quat_to_euler_zyx(q: &Quaternion<f64>) -> EulerZyx {
    let [roll, pitch, yaw] = euler_components(q.w, q.i, q.j, q.k);
    EulerZyx {
        roll,
        pitch,
        yaw,
        degenerate: pitch.abs() > std::f64::consts::FRAC_PI_2 - 1e-6,
    }
}

pub(crate) fn euler_components(w: f64, x: f64, y: f64, z: f64) -> [f64; 3] {
    let roll = (2.0 * (w * x + y * z)).atan2(1.0 - 2.0 * (x * x + y * y));
    let pitch = (2.0 * (w * y - z * x)).clamp(-1.0, 1.0).asin();
    let yaw = (2.0 * (w * z + x * y)).atan2(1.0 - 2.0 * (y * y + z * z));
    // atan2 returns −π for some negative-zero inputs; fold into (−π, π].
    let fold = |a: f64| if a <= -std::f64::consts::PI { a + 2.0 * std::f64::consts::PI } else { a };
    [fold(roll), pitch, fold(yaw)]
}

/// Gradients of [`euler_components`] with respect to `[w, x, y, z]`.
pub(crate) fn euler_gradients(w: f64, x: f64, y: f64, z: f64) -> [[f64; 4]; 3] {
    // atan2(n, d): d/dθ = (d·n' − n·d')/(n² + d²)
    let atan2_grad = |n: f64, d: f64, dn: [f64; 4], dd: [f64; 4]| {
        let s = n * n + d * d;
        let mut g = [0.0; 4];
        if s > 0.0 {
            for i in 0..4 {
                g[i] = (d * dn[i] - n * dd[i]) / s;
            }
        }
        g
    };
    let roll = atan2_grad(
        2.0 * (w * x + y * z),
        1.0 - 2.0 * (x * x + y * y),
        [2.0 * x, 2.0 * w, 2.0 * z, 2.0 * y],
        [0.0, -4.0 * x, -4.0 * y, 0.0],
    );
    let yaw = atan2_grad(
        2.0 * (w * z + x * y),
        1.0 - 2.0 * (y * y + z * z),
        [2.0 * z, 2.0 * y, 2.0 * x, 2.0 * w],
        [0.0, 0.0, -4.0 * y, -4.0 * z],
    );
    let s = 2.0 * (w * y - z * x);
    let denom = (1.0 - s * s).max(1e-12).sqrt();
    let ds = [2.0 * y, -2.0 * z, 2.0 * w, -2.0 * x];
    let pitch = if s.abs() < 1.0 {
        ds.map(|d| d / denom)
    } else {
        [0.0; 4]
    };
    [roll, pitch, yaw]
}

/// Quaternion for a pure rotation about a world axis.
pub fn axis_angle(axis: Vector3<f64>, angle: f64) -> Quaternion<f64> {
    UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).into_inner()
}

/// Point-mass double integrator limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointMassParams {
    /// Per-axis acceleration bound, m/s².
    pub a_max: f64,
}

impl PointMassParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a_max > 0.0) {
            return Err(Error::InvalidConfig("a_max must be positive".into()));
        }
        Ok(())
    }
}

/// `(ṗ, v̇)` for the double integrator driven by `a_cmd`.
pub fn point_mass_dynamics(
    p: &Vector3<f64>,
    v: &Vector3<f64>,
    a_cmd: &Vector3<f64>,
    params: &PointMassParams,
) -> Result<(Vector3<f64>, Vector3<f64>)> {
    let _ = p;
    if a_cmd.iter().any(|a| !a.is_finite() || a.abs() > params.a_max + 1e-12) {
        return Err(Error::InvalidInput(format!(
            "acceleration {a_cmd:?} exceeds per-axis bound {}",
            params.a_max
        )));
    }
    Ok((*v, *a_cmd))
}

/// Exact zero-order-hold update of the double integrator over `dt`.
pub fn point_mass_step(p: &Vector3<f64>, v: &Vector3<f64>, a: &Vector3<f64>, dt: f64) -> (Vector3<f64>, Vector3<f64>) {
    (p + v * dt + a * (0.5 * dt * dt), v + a * dt)
}

/// Dynamics used for one drone in a planning problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VehicleModel {
    Quadrotor(QuadrotorParams),
    PointMass(PointMassParams),
}

impl VehicleModel {
    pub fn state_dim(&self) -> usize {
        match self {
            VehicleModel::Quadrotor(_) => STATE_DIM,
            VehicleModel::PointMass(_) => 6,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            VehicleModel::Quadrotor(_) => INPUT_DIM,
            VehicleModel::PointMass(_) => 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            VehicleModel::Quadrotor(p) => p.validate(),
            VehicleModel::PointMass(p) => p.validate(),
        }
    }

    /// Input that holds the vehicle still.
    pub fn hover_input(&self) -> Vec<f64> {
        match self {
            VehicleModel::Quadrotor(p) => vec![p.hover_thrust(); 4],
            VehicleModel::PointMass(_) => vec![0.0; 3],
        }
    }

    pub fn input_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            VehicleModel::Quadrotor(p) => (vec![p.thrust_min; 4], vec![p.thrust_max; 4]),
            VehicleModel::PointMass(p) => (vec![-p.a_max; 3], vec![p.a_max; 3]),
        }
    }

    /// Packs a rigid-body state into this model's state vector.
    pub fn pack_state(&self, x: &RigidBodyState) -> Vec<f64> {
        match self {
            VehicleModel::Quadrotor(_) => x.to_vector().as_slice().to_vec(),
            VehicleModel::PointMass(_) => vec![x.p.x, x.p.y, x.p.z, x.v.x, x.v.y, x.v.z],
        }
    }

    /// Inverse of [`VehicleModel::pack_state`]; point-mass states come back
    /// level with zero rates.
    pub fn unpack_state(&self, x: &[f64]) -> RigidBodyState {
        match self {
            VehicleModel::Quadrotor(_) => RigidBodyState::from_slice(x),
            VehicleModel::PointMass(_) => RigidBodyState {
                v: Vector3::new(x[3], x[4], x[5]),
                ..RigidBodyState::at_rest(Vector3::new(x[0], x[1], x[2]))
            },
        }
    }

    /// One integrator step with the input held: normalized RK4 for the
    /// quadrotor, the exact update for the point mass.
    pub fn step(&self, x: &[f64], u: &[f64], dt: f64) -> Vec<f64> {
        match self {
            VehicleModel::Quadrotor(p) => {
                let xs = StateVector::from_column_slice(x);
                let us = Vector4::from_column_slice(u);
                normalize_quaternion(&rk4_raw(&xs, &us, p, dt)).as_slice().to_vec()
            }
            VehicleModel::PointMass(_) => {
                let (p, v) = point_mass_step(
                    &Vector3::new(x[0], x[1], x[2]),
                    &Vector3::new(x[3], x[4], x[5]),
                    &Vector3::new(u[0], u[1], u[2]),
                    dt,
                );
                vec![p.x, p.y, p.z, v.x, v.y, v.z]
            }
        }
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_params() -> QuadrotorParams {
        QuadrotorParams {
            mass: 1.0,
            inertia: Matrix3::from_diagonal(&Vector3::new(0.01, 0.01, 0.02)),
            ..QuadrotorParams::default()
        }
    }

    #[test]
    fn wrench_of_symmetric_thrusts_has_no_torque() {
        let p = QuadrotorParams { arm_length: 0.15, c_tau: 0.01, ..Default::default() };
        let (f, t) = rotor_wrench(&RotorThrusts::uniform(1.0), &p).unwrap();
        assert_eq!(f, Vector3::new(0.0, 0.0, 4.0));
        assert!(t.norm() < 1e-15);
    }

    #[test]
    fn wrench_of_single_rotor_excess() {
        let p = QuadrotorParams { arm_length: 0.15, c_tau: 0.01, ..Default::default() };
        let (f, t) = rotor_wrench(&RotorThrusts([2.0, 1.0, 1.0, 1.0]), &p).unwrap();
        assert_eq!(f.z, 5.0);
        assert_relative_eq!(t.x, 0.106_066_017_177_982_1, epsilon = 1e-12);
        assert_relative_eq!(t.y, -0.106_066_017_177_982_1, epsilon = 1e-12);
        assert_relative_eq!(t.z, 0.01, epsilon = 1e-15);

        let (f0, t0) = rotor_wrench(&RotorThrusts::default(), &p).unwrap();
        assert_eq!(f0, Vector3::zeros());
        assert_eq!(t0, Vector3::zeros());
    }

    #[test]
    fn wrench_rejects_nan() {
        let p = QuadrotorParams::default();
        assert!(matches!(
            rotor_wrench(&RotorThrusts([f64::NAN, 0.0, 0.0, 0.0]), &p),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn hover_and_free_fall_accelerations() {
        let p = unit_params();
        let x = RigidBodyState::default();
        let f = quad_dynamics(&x, &RotorThrusts::uniform(9.81 / 4.0), &p).unwrap();
        assert!(f.iter().all(|c| c.abs() < 1e-15));

        let f = quad_dynamics(&x, &RotorThrusts::default(), &p).unwrap();
        assert_relative_eq!(f[5], -9.81, epsilon = 1e-15);
    }

    #[test]
    fn spin_about_principal_axis() {
        let p = unit_params();
        let mut x = RigidBodyState::default();
        x.w = Vector3::new(0.0, 0.0, 1.0);
        let f = quad_dynamics(&x, &RotorThrusts::uniform(2.0), &p).unwrap();
        // ω × Jω = (0,0,1) × (0,0,0.02) = 0; q̇ = ½ (1,0,0,0) ⊗ (0,0,0,1)
        assert!(f.fixed_rows::<3>(10).norm() < 1e-15);
        assert_eq!(f.fixed_rows::<4>(6).as_slice(), &[0.0, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn non_unit_quaternion_is_rejected() {
        let mut x = RigidBodyState::default();
        x.q = Quaternion::new(1.1, 0.0, 0.0, 0.0);
        let r = quad_dynamics(&x, &RotorThrusts::default(), &QuadrotorParams::default());
        assert!(matches!(r, Err(Error::InvalidState(_))));
    }

    fn random_state(rng: &mut ChaCha8Rng) -> RigidBodyState {
        let mut v3 = |s: f64| Vector3::new(rng.gen_range(-s..s), rng.gen_range(-s..s), rng.gen_range(-s..s));
        let p = v3(5.0);
        let v = v3(3.0);
        let w = v3(4.0);
        let q = Quaternion::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )
        .normalize();
        RigidBodyState { p, v, q, w }
    }

    /// Central differences of `dynamics` with step 1e-6.
    fn fd_jacobians(x: &StateVector, u: &Vector4<f64>, p: &QuadrotorParams) -> (StateJacobian, InputJacobian) {
        let h = 1e-6;
        let mut a = StateJacobian::zeros();
        for j in 0..13 {
            let mut xp = *x;
            let mut xm = *x;
            xp[j] += h;
            xm[j] -= h;
            let col = (dynamics(&xp, u, p) - dynamics(&xm, u, p)) / (2.0 * h);
            a.set_column(j, &col);
        }
        let mut b = InputJacobian::zeros();
        for j in 0..4 {
            let mut up = *u;
            let mut um = *u;
            up[j] += h;
            um[j] -= h;
            let col = (dynamics(x, &up, p) - dynamics(x, &um, p)) / (2.0 * h);
            b.set_column(j, &col);
        }
        (a, b)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1.0)
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let p = QuadrotorParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let x = random_state(&mut rng);
            let u = RotorThrusts([
                rng.gen_range(1.0..7.35),
                rng.gen_range(1.0..7.35),
                rng.gen_range(1.0..7.35),
                rng.gen_range(1.0..7.35),
            ]);
            let (a, b) = quad_dynamics_jacobians(&x, &u, &p).unwrap();
            let (fa, fb) = fd_jacobians(&x.to_vector(), &u.as_vector(), &p);
            for (an, fd) in a.iter().zip(fa.iter()).chain(b.iter().zip(fb.iter())) {
                assert!(rel_err(*an, *fd) <= 1e-5, "{an} vs {fd}");
            }
        }
    }

    #[test]
    fn position_rows_of_jacobian() {
        let p = QuadrotorParams::default();
        let (a, b) = quad_dynamics_jacobians(&RigidBodyState::default(), &RotorThrusts::uniform(p.hover_thrust()), &p).unwrap();
        assert_eq!(a.fixed_view::<3, 3>(0, 3).into_owned(), Matrix3::identity());
        for s in 0..4 {
            assert_relative_eq!(b[(5, s)], 1.0 / p.mass, epsilon = 1e-15);
            assert_eq!(b[(3, s)], 0.0);
            assert_eq!(b[(4, s)], 0.0);
        }
    }

    #[test]
    fn rk4_free_fall_is_exact() {
        let p = unit_params();
        let x = RigidBodyState::default();
        let next = rk4_step(&x, &RotorThrusts::default(), &p, 0.03).unwrap();
        assert!((next.v.z - -0.2943).abs() < 1e-12);
        assert!((next.p.z - -0.004_414_5).abs() < 1e-12);
    }

    #[test]
    fn rk4_hover_is_stationary() {
        let p = QuadrotorParams::default();
        let x = RigidBodyState::at_rest(Vector3::new(1.0, 2.0, 3.0));
        let u = RotorThrusts::uniform(p.hover_thrust());
        for dt in [0.01, 0.03, 0.1] {
            let next = rk4_step(&x, &u, &p, dt).unwrap();
            assert!((next.to_vector() - x.to_vector()).norm() < 1e-12);
        }
    }

    #[test]
    fn rk4_pure_spin_matches_axis_angle() {
        let p = unit_params();
        let mut x = RigidBodyState::default();
        x.w = Vector3::new(0.0, 0.0, 1.0);
        let next = rk4_step(&x, &RotorThrusts::default(), &p, 0.03).unwrap();
        // closed form: rotation of 0.03 rad about z
        let exact = Quaternion::new((0.015f64).cos(), 0.0, 0.0, (0.015f64).sin());
        assert!((next.q - exact).norm() < 1e-8);
    }

    #[test]
    fn rk4_rejects_bad_step() {
        let p = QuadrotorParams::default();
        assert!(rk4_step(&RigidBodyState::default(), &RotorThrusts::default(), &p, 0.0).is_err());
    }

    #[test]
    fn rk4_jacobian_matches_finite_differences() {
        let p = QuadrotorParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x = random_state(&mut rng).to_vector();
            let u = Vector4::new(2.0, 3.0, 1.5, 4.0);
            let h = 0.05;
            let (_, dx, du) = rk4_step_with_jacobians(&x, &u, &p, h);
            let step = |x: &StateVector, u: &Vector4<f64>| normalize_quaternion(&rk4_raw(x, u, &p, h));
            let e = 1e-6;
            for j in 0..13 {
                let mut xp = x;
                let mut xm = x;
                xp[j] += e;
                xm[j] -= e;
                let col = (step(&xp, &u) - step(&xm, &u)) / (2.0 * e);
                for i in 0..13 {
                    assert!(rel_err(dx[(i, j)], col[i]) < 1e-6);
                }
            }
            for j in 0..4 {
                let mut up = u;
                let mut um = u;
                up[j] += e;
                um[j] -= e;
                let col = (step(&x, &up) - step(&x, &um)) / (2.0 * e);
                for i in 0..13 {
                    assert!(rel_err(du[(i, j)], col[i]) < 1e-6);
                }
            }
        }
    }

    #[test]
    fn euler_extraction() {
        let e = quat_to_euler_zyx(&Quaternion::identity());
        assert_eq!((e.roll, e.pitch, e.yaw), (0.0, 0.0, 0.0));

        let q = axis_angle(Vector3::x(), std::f64::consts::FRAC_PI_3);
        let e = quat_to_euler_zyx(&q);
        assert_relative_eq!(e.roll, std::f64::consts::FRAC_PI_3, epsilon = 1e-12);
        assert!(e.pitch.abs() < 1e-12 && e.yaw.abs() < 1e-12);

        // yaw 30° then pitch 20° (intrinsic), composed as Rz·Ry
        let q = axis_angle(Vector3::z(), 30f64.to_radians()) * axis_angle(Vector3::y(), 20f64.to_radians());
        let e = quat_to_euler_zyx(&q);
        assert!(e.roll.abs() < 1e-12);
        assert_relative_eq!(e.pitch, 20f64.to_radians(), epsilon = 1e-12);
        assert_relative_eq!(e.yaw, 30f64.to_radians(), epsilon = 1e-12);
        assert!(!e.degenerate);

        let e = quat_to_euler_zyx(&axis_angle(Vector3::y(), std::f64::consts::FRAC_PI_2));
        assert!(e.degenerate);
    }

    #[test]
    fn euler_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let q = random_state(&mut rng).q;
            let c = [q.w, q.i, q.j, q.k];
            let g = euler_gradients(c[0], c[1], c[2], c[3]);
            for j in 0..4 {
                let mut cp = c;
                let mut cm = c;
                cp[j] += 1e-7;
                cm[j] -= 1e-7;
                let ep = euler_components(cp[0], cp[1], cp[2], cp[3]);
                let em = euler_components(cm[0], cm[1], cm[2], cm[3]);
                for a in 0..3 {
                    let mut d = ep[a] - em[a];
                    if d.abs() > 1.0 {
                        continue; // branch cut of atan2
                    }
                    d /= 2e-7;
                    assert!((d - g[a][j]).abs() < 1e-5 * d.abs().max(1.0), "{d} vs {}", g[a][j]);
                }
            }
        }
    }

    #[test]
    fn point_mass_bang_bang_covers_distance() {
        let params = PointMassParams { a_max: 5.0 };
        let t_half = (10.0f64 / 5.0).sqrt();
        let (p1, v1) = point_mass_step(&Vector3::zeros(), &Vector3::zeros(), &Vector3::new(5.0, 0.0, 0.0), t_half);
        let (p2, v2) = point_mass_step(&p1, &v1, &Vector3::new(-5.0, 0.0, 0.0), t_half);
        assert_relative_eq!(p2.x, 10.0, epsilon = 1e-12);
        assert!(v2.norm() < 1e-12);

        let (pd, vd) = point_mass_dynamics(&Vector3::zeros(), &Vector3::zeros(), &Vector3::new(5.0, 0.0, 0.0), &params).unwrap();
        assert_eq!(pd, Vector3::zeros());
        assert_eq!(vd, Vector3::new(5.0, 0.0, 0.0));
        assert!(point_mass_dynamics(&Vector3::zeros(), &Vector3::zeros(), &Vector3::new(5.1, 0.0, 0.0), &params).is_err());
    }

    #[test]
    fn allocation_inverts_wrench() {
        let p = QuadrotorParams::default();
        let u = RotorThrusts([1.5, 2.5, 3.0, 4.0]);
        let (f, t) = rotor_wrench(&u, &p).unwrap();
        let back = p.allocate(f.z, &t);
        for s in 0..4 {
            assert_relative_eq!(back.0[s], u.0[s], epsilon = 1e-12);
        }
    }
}
