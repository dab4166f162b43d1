use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use swarmrace::io::config::load_scenario;
use swarmrace::vehicle::VehicleModel;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn six_waypoint_track() {
    let c = load_scenario(configs().join("table1_track.json")).unwrap();
    assert!(c.long_running);
    assert_eq!((c.grid.nodes, c.grid.dt), (550, 0.03));
    let t = c.track();
    assert_eq!(t.drones.len(), 5);
    for d in &t.drones {
        assert_eq!(d.waypoints.len(), 6);
        assert_eq!(d.waypoints[0], Vector3::new(5.0, 15.0, 2.0));
        assert_eq!(d.waypoints[5], Vector3::new(5.0, 14.0, 4.0));
    }
    // starts at least 1 m apart
    for (i, a) in t.drones.iter().enumerate() {
        for b in &t.drones[i + 1..] {
            assert!((a.start.p - b.start.p).norm() >= 1.0);
        }
    }
    let p = c.quadrotor(0).unwrap();
    assert_eq!((p.thrust_min, p.thrust_max, p.thrust_rate_max), (1.0, 7.35, 120.0));
    assert!((p.tilt_max - 60f64.to_radians()).abs() < 1e-15);
    assert!((p.yaw_max - 5f64.to_radians()).abs() < 1e-15);
    let s = c.collision_spec().unwrap();
    assert_eq!(s.delta_col, 0.25);
    assert_eq!(s.e_diag, [1.0, 1.0, 1.0 / 3.0]);
}

#[test]
fn two_drone_swap() {
    let c = load_scenario(configs().join("table3_swap.json")).unwrap();
    let listed: Vec<_> = c.track.drones[0].waypoints.clone();
    assert_eq!(listed, [[0.0, 0.0, 1.5], [1.0, -1.0, 1.5], [1.0, 1.0, 1.5]]);
    let t = c.track();
    assert_eq!(t.drones.len(), 2);
    assert_eq!(t.drones[0].waypoints, t.drones[1].waypoints.iter().rev().copied().collect::<Vec<_>>());
    // the shared listed start is split so the pair clears the ellipsoid at node 0
    assert_eq!(t.drones[0].start.p, Vector3::new(0.0, -0.3, 1.5));
    assert_eq!(t.drones[1].start.p, Vector3::new(0.0, 0.3, 1.5));
    assert_eq!(t.tol, 0.3);
}

#[test]
fn point_mass_oracle() {
    let c = load_scenario(configs().join("point_mass_oracle.json")).unwrap();
    assert!(matches!(c.models()[0], VehicleModel::PointMass(p) if p.a_max == 5.0));
    assert!(c.collision_spec().is_none());
    let t = c.track();
    assert_eq!(t.path_length(0), 10.0);
    assert!(t.drones[0].stop_at_final);
}
