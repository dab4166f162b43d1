//! Scenario files: strict JSON, SI units except angles, which are degrees.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::constraints::{CollisionSpec, DroneTrack, Track};
use crate::error::{Error, Result};
use crate::solver::SolverOptions;
use crate::tracking::{ControllerGains, SimulationOptions};
use crate::transcription::GridSpec;
use crate::vehicle::{axis_angle, PointMassParams, QuadrotorParams, RigidBodyState, VehicleModel};
use crate::SCHEMA_VERSION;

/// Quadrotor parameters as written in a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadrotorConfig {
    pub mass: f64,
    /// Principal moments of inertia, kg·m².
    pub inertia_diag: [f64; 3],
    pub arm_length: f64,
    pub c_tau: f64,
    pub thrust_min: f64,
    pub thrust_max: f64,
    pub thrust_rate_max: f64,
    pub tilt_max_deg: f64,
    pub yaw_max_deg: f64,
    /// Magnitude of gravity, m/s²; acts along −z.
    pub gravity: f64,
}

impl Default for QuadrotorConfig {
    fn default() -> Self {
        let p = QuadrotorParams::default();
        Self {
            mass: p.mass,
            inertia_diag: [p.inertia[(0, 0)], p.inertia[(1, 1)], p.inertia[(2, 2)]],
            arm_length: p.arm_length,
            c_tau: p.c_tau,
            thrust_min: p.thrust_min,
            thrust_max: p.thrust_max,
            thrust_rate_max: p.thrust_rate_max,
            tilt_max_deg: p.tilt_max.to_degrees(),
            yaw_max_deg: p.yaw_max.to_degrees(),
            gravity: p.gravity.norm(),
        }
    }
}

impl QuadrotorConfig {
    pub fn to_params(&self) -> QuadrotorParams {
        QuadrotorParams {
            mass: self.mass,
            inertia: Matrix3::from_diagonal(&Vector3::from(self.inertia_diag)),
            arm_length: self.arm_length,
            c_tau: self.c_tau,
            thrust_min: self.thrust_min,
            thrust_max: self.thrust_max,
            thrust_rate_max: self.thrust_rate_max,
            tilt_max: self.tilt_max_deg.to_radians(),
            yaw_max: self.yaw_max_deg.to_radians(),
            gravity: Vector3::new(0.0, 0.0, -self.gravity),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VehicleConfig {
    Quadrotor(QuadrotorConfig),
    PointMass(PointMassParams),
}

impl VehicleConfig {
    pub fn to_model(&self) -> VehicleModel {
        match self {
            VehicleConfig::Quadrotor(q) => VehicleModel::Quadrotor(q.to_params()),
            VehicleConfig::PointMass(p) => VehicleModel::PointMass(*p),
        }
    }
}

/// How the first entry of `waypoints` is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstWaypoint {
    /// A waypoint like the others; `start` is required.
    #[default]
    Pass,
    /// The start position; `start` must be absent.
    Start,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DroneConfig {
    /// Start position; the drone starts at rest and level.
    #[serde(default)]
    pub start: Option<[f64; 3]>,
    /// Added to the start position.
    #[serde(default)]
    pub start_offset: [f64; 3],
    #[serde(default)]
    pub start_yaw_deg: f64,
    pub waypoints: Vec<[f64; 3]>,
    #[serde(default)]
    pub first_waypoint: FirstWaypoint,
    #[serde(default)]
    pub stop_at_final: bool,
}

impl DroneConfig {
    /// Start position and the waypoints to pass.
    pub fn resolve(&self) -> std::result::Result<(Vector3<f64>, &[[f64; 3]]), String> {
        let offset = Vector3::from(self.start_offset);
        match (self.first_waypoint, self.start) {
            (FirstWaypoint::Pass, Some(s)) => Ok((Vector3::from(s) + offset, &self.waypoints)),
            (FirstWaypoint::Pass, None) => Err("start: missing field (required unless first_waypoint is \"start\")".into()),
            (FirstWaypoint::Start, Some(_)) => Err("start: must be absent when first_waypoint is \"start\"".into()),
            (FirstWaypoint::Start, None) => match self.waypoints.split_first() {
                Some((s, rest)) if !rest.is_empty() => Ok((Vector3::from(*s) + offset, rest)),
                _ => Err("waypoints: need a start entry and at least one waypoint".into()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackConfig {
    pub tol: f64,
    pub drones: Vec<DroneConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollisionConfig {
    pub enabled: bool,
    pub e_diag: [f64; 3],
    pub delta_col: f64,
    pub coincident_start_exemption: bool,
    pub exempt_nodes: usize,
}

impl Default for CollisionConfig {
    fn default() -> Self {
        let s = CollisionSpec::default();
        Self {
            enabled: true,
            e_diag: s.e_diag,
            delta_col: s.delta_col,
            coincident_start_exemption: s.coincident_start_exemption,
            exempt_nodes: s.exempt_nodes,
        }
    }
}

impl CollisionConfig {
    pub fn spec(&self) -> CollisionSpec {
        CollisionSpec {
            e_diag: self.e_diag,
            delta_col: self.delta_col,
            coincident_start_exemption: self.coincident_start_exemption,
            exempt_nodes: self.exempt_nodes,
        }
    }
}

/// File names, relative to the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub solution: String,
    pub iteration_log: String,
    pub comparison: String,
    pub tracking: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            solution: "solution.csv".into(),
            iteration_log: "iterations.log".into(),
            comparison: "comparison.json".into(),
            tracking: "tracking.csv".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: String,
    #[serde(default)]
    pub name: String,
    /// Marks scenarios that take far longer than a desk-scale run.
    #[serde(default)]
    pub long_running: bool,
    pub grid: GridSpec,
    /// One entry per drone, in track order.
    pub vehicles: Vec<VehicleConfig>,
    pub track: TrackConfig,
    #[serde(default)]
    pub collision: CollisionConfig,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub controller: ControllerGains,
    #[serde(default)]
    pub simulation: SimulationOptions,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "schema_version: expected \"{SCHEMA_VERSION}\", got \"{}\"",
                self.schema_version
            )));
        }
        self.grid
            .validate()
            .map_err(|e| Error::InvalidConfig(format!("grid: {}", bare(&e))))?;
        if self.vehicles.len() != self.track.drones.len() {
            return Err(Error::InvalidConfig(format!(
                "vehicles: {} entries for {} drones in track.drones",
                self.vehicles.len(),
                self.track.drones.len()
            )));
        }
        for (i, v) in self.vehicles.iter().enumerate() {
            v.to_model()
                .validate()
                .map_err(|e| Error::InvalidConfig(format!("vehicles[{i}]: {}", bare(&e))))?;
        }
        for (i, d) in self.track.drones.iter().enumerate() {
            d.resolve()
                .map_err(|m| Error::InvalidConfig(format!("track.drones[{i}].{m}")))?;
        }
        self.track().validate()?;
        if self.collision.enabled {
            self.collision.spec().validate()?;
        }
        self.solver.validate()?;
        self.controller.validate()?;
        if let Some(dt) = self.simulation.sim_dt {
            if !(dt > 0.0 && dt <= self.grid.dt) {
                return Err(Error::InvalidConfig(format!(
                    "simulation.sim_dt must be in (0, grid.dt], got {dt}"
                )));
            }
        }
        Ok(())
    }

    /// The track to plan; call after [`validate`](Self::validate).
    pub fn track(&self) -> Track {
        Track {
            drones: self
                .track
                .drones
                .iter()
                .map(|d| {
                    let (p, waypoints) = d.resolve().unwrap_or((Vector3::zeros(), &[]));
                    let mut start = RigidBodyState::at_rest(p);
                    start.q = axis_angle(Vector3::z(), d.start_yaw_deg.to_radians());
                    DroneTrack {
                        start,
                        waypoints: waypoints.iter().map(|w| Vector3::from(*w)).collect(),
                        stop_at_final: d.stop_at_final,
                    }
                })
                .collect(),
            tol: self.track.tol,
        }
    }

    pub fn models(&self) -> Vec<VehicleModel> {
        self.vehicles.iter().map(|v| v.to_model()).collect()
    }

    pub fn collision_spec(&self) -> Option<CollisionSpec> {
        self.collision.enabled.then(|| self.collision.spec())
    }

    /// Quadrotor parameters of drone `i`, if it is a quadrotor.
    pub fn quadrotor(&self, i: usize) -> Option<QuadrotorParams> {
        match self.vehicles.get(i)? {
            VehicleConfig::Quadrotor(q) => Some(q.to_params()),
            VehicleConfig::PointMass(_) => None,
        }
    }
}

/// The message of a configuration error without its category prefix.
fn bare(e: &Error) -> String {
    match e {
        Error::InvalidConfig(m) | Error::InvalidInput(m) => m.clone(),
        other => other.to_string(),
    }
}

/// Parses and validates a scenario from JSON text. `origin` names the
/// source in error messages.
pub fn parse_scenario(text: &str, origin: &Path) -> Result<ScenarioConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let msg = inner.to_string();
        // name the missing key itself, e.g. grid.dt
        let field = match msg.strip_prefix("missing field `").and_then(|r| r.split('`').next()) {
            Some(f) if path == "." || path.is_empty() => f.to_string(),
            Some(f) => format!("{path}.{f}"),
            None => path,
        };
        Error::Parse {
            path: origin.to_path_buf(),
            message: format!("{field}: {msg}"),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(PathBuf::from(path), e))?;
    parse_scenario(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema_version": "1",
        "grid": {"nodes": 20, "dt": 0.1},
        "vehicles": [{"kind": "quadrotor", "tilt_max_deg": 30}],
        "track": {"tol": 0.3, "drones": [{"start": [0, 0, 1], "waypoints": [[1, 0, 1]]}]}
    }"#;

    fn parse(text: &str) -> Result<ScenarioConfig> {
        parse_scenario(text, Path::new("test.json"))
    }

    #[test]
    fn defaults_and_degrees() {
        let c = parse(MINIMAL).unwrap();
        let p = c.quadrotor(0).unwrap();
        assert!((p.tilt_max - 30f64.to_radians()).abs() < 1e-15);
        assert!((p.yaw_max - 5f64.to_radians()).abs() < 1e-15);
        assert_eq!(c.solver, SolverOptions::default());
        assert_eq!(c.collision_spec(), Some(CollisionSpec::default()));
        assert_eq!(c.track().drones[0].start, RigidBodyState::at_rest(Vector3::new(0.0, 0.0, 1.0)));
    }

    #[test]
    fn missing_dt_names_the_field() {
        let text = MINIMAL.replace(r#", "dt": 0.1"#, "");
        let e = parse(&text).unwrap_err().to_string();
        assert!(e.contains("grid.dt"), "{e}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace(r#""tol": 0.3"#, r#""tol": 0.3, "tolerance": 1"#);
        let e = parse(&text).unwrap_err().to_string();
        assert!(e.contains("track") && e.contains("tolerance"), "{e}");
        let text = MINIMAL.replace(r#""tilt_max_deg": 30"#, r#""tilt_max": 30"#);
        assert!(parse(&text).is_err());
    }

    #[test]
    fn cross_validation() {
        let text = MINIMAL.replace(
            r#"[{"kind": "quadrotor", "tilt_max_deg": 30}]"#,
            r#"[{"kind": "quadrotor"}, {"kind": "quadrotor"}]"#,
        );
        let e = parse(&text).unwrap_err().to_string();
        assert!(e.contains("vehicles"), "{e}");
        let text = MINIMAL.replace(r#""dt": 0.1"#, r#""dt": -0.1"#);
        assert!(parse(&text).unwrap_err().to_string().contains("grid"));
        let text = MINIMAL.replace(r#""schema_version": "1""#, r#""schema_version": "2""#);
        assert!(parse(&text).unwrap_err().to_string().contains("schema_version"));
    }

    #[test]
    fn first_waypoint_as_start() {
        let text = MINIMAL.replace(
            r#"{"start": [0, 0, 1], "waypoints": [[1, 0, 1]]}"#,
            r#"{"waypoints": [[0, 0, 1], [1, 0, 1]], "first_waypoint": "start", "start_offset": [0, -0.5, 0]}"#,
        );
        let c = parse(&text).unwrap();
        let t = c.track();
        assert_eq!(t.drones[0].start.p, Vector3::new(0.0, -0.5, 1.0));
        assert_eq!(t.drones[0].waypoints, vec![Vector3::new(1.0, 0.0, 1.0)]);
        let both = text.replace(r#""first_waypoint""#, r#""start": [0, 0, 0], "first_waypoint""#);
        assert!(parse(&both).unwrap_err().to_string().contains("track.drones[0].start"));
        let none = MINIMAL.replace(r#""start": [0, 0, 1], "#, "");
        assert!(parse(&none).unwrap_err().to_string().contains("track.drones[0].start"));
    }

    #[test]
    fn syntax_errors_carry_a_line() {
        let e = parse("{\n\"grid\": ,\n}").unwrap_err().to_string();
        assert!(e.contains("line 2"), "{e}");
    }
}
