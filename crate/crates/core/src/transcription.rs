//! Decision-vector layout on a fixed time grid, shooting defects and
//! initial guesses.
//!
//! Every drone shares the same grid, so node `k` is time `k·dt` for all of
//! them. Each drone owns a contiguous slice of the decision vector:
//!
//! ```text
//! [ x_0 … x_{N−1} | u_0 … u_{N−1} | λ (N×W) | μ ((N−1)×W) | ν ((N−1)×W) ]
//! ```
//!
//! Progress matrices are stored node-major (`k·W + j`).

use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::Track;
use crate::error::{Error, Result};
use crate::vehicle::{QuadrotorParams, VehicleModel, INPUT_DIM, STATE_DIM};

/// `nodes` grid points spaced `dt` seconds apart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nodes: usize,
    pub dt: f64,
}

impl GridSpec {
    pub fn new(nodes: usize, dt: f64) -> Result<Self> {
        let g = Self { nodes, dt };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes < 2 {
            return Err(Error::InvalidConfig(format!("grid.nodes must be at least 2, got {}", self.nodes)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidConfig(format!("grid.dt must be positive, got {}", self.dt)));
        }
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.nodes as f64 * self.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Fails when the horizon does not exceed `estimate` seconds.
    pub fn check_horizon(&self, estimate: f64) -> Result<()> {
        if self.horizon() <= estimate {
            return Err(Error::InvalidConfig(format!(
                "horizon {:.3} s (grid.nodes={} × grid.dt={}) does not exceed the arrival estimate {:.3} s",
                self.horizon(),
                self.nodes,
                self.dt,
                estimate
            )));
        }
        Ok(())
    }
}

/// Offsets of one drone's variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DroneLayout {
    pub offset: usize,
    pub nodes: usize,
    pub nx: usize,
    pub nu: usize,
    pub waypoints: usize,
}

impl DroneLayout {
    pub fn state(&self, k: usize) -> usize {
        self.offset + k * self.nx
    }

    pub fn input(&self, k: usize) -> usize {
        self.offset + self.nodes * self.nx + k * self.nu
    }

    fn lambda_base(&self) -> usize {
        self.offset + self.nodes * (self.nx + self.nu)
    }

    pub fn lambda(&self, k: usize, j: usize) -> usize {
        self.lambda_base() + k * self.waypoints + j
    }

    pub fn mu(&self, k: usize, j: usize) -> usize {
        self.lambda_base() + self.nodes * self.waypoints + k * self.waypoints + j
    }

    pub fn nu(&self, k: usize, j: usize) -> usize {
        self.lambda_base() + (2 * self.nodes - 1) * self.waypoints + k * self.waypoints + j
    }

    pub fn len(&self) -> usize {
        self.nodes * (self.nx + self.nu) + (3 * self.nodes - 2) * self.waypoints
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Where every scalar of the joint decision vector lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecisionLayout {
    pub nodes: usize,
    pub drones: Vec<DroneLayout>,
    pub total: usize,
}

/// λ, μ, ν of one drone; rows are nodes (or transitions), columns waypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgressVariables {
    pub lambda: DMatrix<f64>,
    pub mu: DMatrix<f64>,
    pub nu: DMatrix<f64>,
}

/// One drone's slice of the decision vector, unpacked.
#[derive(Debug, Clone, PartialEq)]
pub struct DroneVariables {
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub progress: ProgressVariables,
}

/// Quadrotor layout for `drones` vehicles with the given waypoint counts.
pub fn layout_variables(drones: usize, grid: &GridSpec, waypoints_per_drone: &[usize]) -> Result<DecisionLayout> {
    if waypoints_per_drone.len() != drones {
        return Err(Error::InvalidConfig(format!(
            "{} waypoint counts given for {drones} drones",
            waypoints_per_drone.len()
        )));
    }
    let dims = vec![(STATE_DIM, INPUT_DIM); drones];
    DecisionLayout::new(grid, &dims, waypoints_per_drone)
}

impl DecisionLayout {
    /// `dims[i]` is `(state_dim, input_dim)` of drone `i`.
    pub fn new(grid: &GridSpec, dims: &[(usize, usize)], waypoints: &[usize]) -> Result<Self> {
        grid.validate()?;
        if dims.is_empty() {
            return Err(Error::InvalidConfig("at least one drone is required".into()));
        }
        if dims.len() != waypoints.len() {
            return Err(Error::InvalidConfig("one waypoint count per drone is required".into()));
        }
        let mut offset = 0;
        let mut drones = Vec::with_capacity(dims.len());
        for (i, (&(nx, nu), &w)) in dims.iter().zip(waypoints).enumerate() {
            if w == 0 {
                return Err(Error::InvalidConfig(format!("drone {i} has no waypoints")));
            }
            let d = DroneLayout {
                offset,
                nodes: grid.nodes,
                nx,
                nu,
                waypoints: w,
            };
            offset += d.len();
            drones.push(d);
        }
        Ok(Self {
            nodes: grid.nodes,
            drones,
            total: offset,
        })
    }

    pub fn for_models(grid: &GridSpec, models: &[VehicleModel], waypoints: &[usize]) -> Result<Self> {
        let dims: Vec<_> = models.iter().map(|m| (m.state_dim(), m.input_dim())).collect();
        Self::new(grid, &dims, waypoints)
    }

    /// Node index of every variable; `μ_k` and `ν_k` belong to node `k+1`,
    /// where their complementarity row is evaluated.
    pub fn stage_hints(&self) -> Vec<usize> {
        let mut s = vec![0; self.total];
        for d in &self.drones {
            for k in 0..self.nodes {
                s[d.state(k)..d.state(k) + d.nx].iter_mut().for_each(|v| *v = k);
                s[d.input(k)..d.input(k) + d.nu].iter_mut().for_each(|v| *v = k);
                for j in 0..d.waypoints {
                    s[d.lambda(k, j)] = k;
                    if k + 1 < self.nodes {
                        s[d.mu(k, j)] = k + 1;
                        s[d.nu(k, j)] = k + 1;
                    }
                }
            }
        }
        s
    }

    fn check_len(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.total {
            return Err(Error::InvalidInput(format!(
                "decision vector has {} entries, layout expects {}",
                z.len(),
                self.total
            )));
        }
        Ok(())
    }

    pub fn unpack(&self, z: &[f64]) -> Result<Vec<DroneVariables>> {
        self.check_len(z)?;
        let n = self.nodes;
        Ok(self
            .drones
            .iter()
            .map(|d| {
                let w = d.waypoints;
                DroneVariables {
                    states: (0..n).map(|k| z[d.state(k)..d.state(k) + d.nx].to_vec()).collect(),
                    inputs: (0..n).map(|k| z[d.input(k)..d.input(k) + d.nu].to_vec()).collect(),
                    progress: ProgressVariables {
                        lambda: DMatrix::from_fn(n, w, |k, j| z[d.lambda(k, j)]),
                        mu: DMatrix::from_fn(n - 1, w, |k, j| z[d.mu(k, j)]),
                        nu: DMatrix::from_fn(n - 1, w, |k, j| z[d.nu(k, j)]),
                    },
                }
            })
            .collect())
    }

    pub fn pack(&self, vars: &[DroneVariables]) -> Result<Vec<f64>> {
        if vars.len() != self.drones.len() {
            return Err(Error::InvalidInput(format!(
                "{} drones given, layout has {}",
                vars.len(),
                self.drones.len()
            )));
        }
        let n = self.nodes;
        let mut z = vec![0.0; self.total];
        for (d, v) in self.drones.iter().zip(vars) {
            let w = d.waypoints;
            let p = &v.progress;
            let shapes_ok = v.states.len() == n
                && v.inputs.len() == n
                && v.states.iter().all(|s| s.len() == d.nx)
                && v.inputs.iter().all(|u| u.len() == d.nu)
                && p.lambda.shape() == (n, w)
                && p.mu.shape() == (n - 1, w)
                && p.nu.shape() == (n - 1, w);
            if !shapes_ok {
                return Err(Error::InvalidInput("drone variables do not match the layout".into()));
            }
            for k in 0..n {
                z[d.state(k)..d.state(k) + d.nx].copy_from_slice(&v.states[k]);
                z[d.input(k)..d.input(k) + d.nu].copy_from_slice(&v.inputs[k]);
                for j in 0..w {
                    z[d.lambda(k, j)] = p.lambda[(k, j)];
                    if k + 1 < n {
                        z[d.mu(k, j)] = p.mu[(k, j)];
                        z[d.nu(k, j)] = p.nu[(k, j)];
                    }
                }
            }
        }
        Ok(z)
    }
}

/// `x_{k+1} − step(x_k, u_k)` for every drone and transition, drone-major.
pub fn shooting_defects(z: &[f64], layout: &DecisionLayout, models: &[VehicleModel], dt: f64) -> Result<Vec<f64>> {
    layout.check_len(z)?;
    if models.len() != layout.drones.len() {
        return Err(Error::InvalidInput("one vehicle model per drone is required".into()));
    }
    let mut out = Vec::new();
    for (d, model) in layout.drones.iter().zip(models) {
        for k in 0..layout.nodes - 1 {
            let x = &z[d.state(k)..d.state(k) + d.nx];
            let u = &z[d.input(k)..d.input(k) + d.nu];
            if x.iter().chain(u).any(|v| !v.is_finite()) {
                return Err(Error::Evaluation(format!("non-finite state or input at node {k}")));
            }
            let next = model.step(x, u, dt);
            let x1 = &z[d.state(k + 1)..d.state(k + 1) + d.nx];
            out.extend(x1.iter().zip(&next).map(|(a, b)| a - b));
        }
    }
    Ok(out)
}

/// Knobs for [`initial_guess`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuessOptions {
    /// Fraction of the horizon the guessed flight should take.
    pub utilization: f64,
    /// Amplitude of the seeded position offset added to the guess, m.
    pub perturbation: f64,
    pub seed: u64,
}

impl Default for GuessOptions {
    fn default() -> Self {
        Self {
            utilization: 0.6,
            perturbation: 0.0,
            seed: 0,
        }
    }
}

/// Seeded generator with one stream per drone.
pub(crate) fn drone_rng(seed: u64, drone: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(drone as u64 + 1);
    rng
}

/// Position along the polyline through `points` at arc length `s`.
fn along_path(points: &[Vector3<f64>], s: f64) -> Vector3<f64> {
    let mut left = s;
    for w in points.windows(2) {
        let seg = (w[1] - w[0]).norm();
        if left <= seg && seg > 0.0 {
            return w[0] + (w[1] - w[0]) * (left / seg);
        }
        left -= seg;
    }
    *points.last().unwrap()
}

/// Straight-line guess along each drone's waypoint polyline.
///
/// The drone flies the polyline at constant speed so that it arrives after
/// `utilization` of the horizon, then holds. λ drops to zero at the first
/// node past each waypoint's arc length; node 0 always keeps λ = 1.
pub fn initial_guess(track: &Track, grid: &GridSpec, models: &[VehicleModel], options: &GuessOptions) -> Result<Vec<f64>> {
    track.validate()?;
    grid.validate()?;
    if models.len() != track.drones.len() {
        return Err(Error::InvalidConfig(format!(
            "{} vehicle models for {} drones",
            models.len(),
            track.drones.len()
        )));
    }
    let waypoints: Vec<usize> = track.drones.iter().map(|d| d.waypoints.len()).collect();
    let layout = DecisionLayout::for_models(grid, models, &waypoints)?;
    let n = grid.nodes;
    let mut vars = Vec::with_capacity(track.drones.len());
    for (i, (dt, model)) in track.drones.iter().zip(models).enumerate() {
        let mut poly = vec![dt.start.p];
        poly.extend(dt.waypoints.iter().copied());
        let cumulative: Vec<f64> = poly
            .windows(2)
            .scan(0.0, |acc, w| {
                *acc += (w[1] - w[0]).norm();
                Some(*acc)
            })
            .collect();
        let length = *cumulative.last().unwrap();
        let flight_nodes = (options.utilization * n as f64).max(1.0);
        let ds = length / flight_nodes;

        let mut rng = drone_rng(options.seed, i);
        let offset = Vector3::new(
            rng.gen_range(-1.0..=1.0),
            rng.gen_range(-1.0..=1.0),
            rng.gen_range(-1.0..=1.0),
        ) * options.perturbation;

        let positions: Vec<Vector3<f64>> = (0..n)
            .map(|k| {
                let bump = (std::f64::consts::PI * k as f64 / (n - 1) as f64).sin();
                along_path(&poly, ds * k as f64) + offset * bump
            })
            .collect();
        let hover = model.hover_input();
        let mut states = Vec::with_capacity(n);
        for k in 0..n {
            let v = if k + 1 < n {
                (positions[k + 1] - positions[k]) / grid.dt
            } else {
                Vector3::zeros()
            };
            let mut x = dt.start;
            x.p = positions[k];
            x.v = if k == 0 { dt.start.v } else { v };
            if k == 0 {
                x.p = dt.start.p;
            }
            states.push(model.pack_state(&x));
        }

        let w = dt.waypoints.len();
        let mut lambda = DMatrix::zeros(n, w);
        let mut mu = DMatrix::zeros(n - 1, w);
        let nu = DMatrix::from_element(n - 1, w, track.tol * track.tol);
        for j in 0..w {
            let pass = if ds > 0.0 {
                (cumulative[j] / ds - 1e-9).ceil() as usize
            } else {
                0
            };
            let pass = pass.clamp(1, n - 1);
            for k in 0..pass {
                lambda[(k, j)] = 1.0;
            }
            mu[(pass - 1, j)] = 1.0;
        }
        vars.push(DroneVariables {
            states,
            inputs: vec![hover.clone(); n],
            progress: ProgressVariables { lambda, mu, nu },
        });
    }
    layout.pack(&vars)
}

/// Default quadrotor models for `q` drones.
pub fn quadrotor_models(q: usize, params: &QuadrotorParams) -> Vec<VehicleModel> {
    vec![VehicleModel::Quadrotor(params.clone()); q]
}
