//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Criterion 8 (the five-drone, 550-node scenario) runs only with
//! `SWARMRACE_FULL_SCALE=1`; it takes hours on one core.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{Quaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use swarmrace::baselines::{compare, Comparison};
use swarmrace::constraints::{CollisionSpec, DroneTrack, Track};
use swarmrace::io::config::{load_scenario, ScenarioConfig};
use swarmrace::solver::{plan, progress_objective, SolveResult, SolveStatus, SolverOptions, TrajectorySolution};
use swarmrace::tracking::{simulate_tracking, ControllerGains, SimulationOptions};
use swarmrace::transcription::{GridSpec, ProgressVariables};
use swarmrace::vehicle::{
    quad_dynamics, quad_dynamics_jacobians, rk4_step, PointMassParams, QuadrotorParams, RigidBodyState, RotorThrusts,
    VehicleModel,
};

#[derive(Default)]
struct Tally {
    failed: Vec<u32>,
}

impl Tally {
    fn report(&mut self, n: u32, ok: bool, detail: String) {
        println!("criterion {n}: {} | {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failed.push(n);
        }
    }
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn scenario(name: &str) -> ScenarioConfig {
    load_scenario(configs().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn dynamics_oracle(t: &mut Tally) {
    let start = Instant::now();
    let p = QuadrotorParams::default();
    let dt = 0.03;
    let x0 = RigidBodyState::at_rest(Vector3::new(1.0, -2.0, 3.0));
    let hover = RotorThrusts::uniform(p.hover_thrust());
    let mut x = x0;
    for _ in 0..34 {
        x = rk4_step(&x, &hover, &p, dt).unwrap();
    }
    let drift = (x.p - x0.p).norm();

    // zero thrust: p(t) = p0 + v0 t + g t²/2 along the whole run
    let g = p.gravity;
    let mut x = x0;
    x.v = Vector3::new(0.4, -0.2, 1.5);
    let v0 = x.v;
    let mut fall_err: f64 = 0.0;
    for k in 1..=34 {
        x = rk4_step(&x, &RotorThrusts::default(), &p, dt).unwrap();
        let tk = k as f64 * dt;
        let pe = x0.p + v0 * tk + g * (0.5 * tk * tk);
        let ve = v0 + g * tk;
        fall_err = fall_err.max((x.p - pe).norm()).max((x.v - ve).norm());
    }
    let secs = start.elapsed().as_secs_f64();
    t.report(
        1,
        drift < 1e-9 && fall_err <= 1e-10 && secs < 1.0,
        format!("hover drift {drift:.2e} m (< 1e-9), free-fall error {fall_err:.2e} (<= 1e-10), {secs:.3} s (< 1 s)"),
    );
}

fn derivative_check(t: &mut Tally) {
    let start = Instant::now();
    let p = QuadrotorParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let h = 5e-7;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mut v3 = |s: f64| Vector3::new(rng.gen_range(-s..s), rng.gen_range(-s..s), rng.gen_range(-s..s));
        let x = RigidBodyState {
            p: v3(10.0),
            v: v3(5.0),
            w: v3(6.0),
            q: Quaternion::from_vector(v3(1.0).push(0.5)).normalize(),
        };
        let u = RotorThrusts(std::array::from_fn(|_| rng.gen_range(p.thrust_min..p.thrust_max)));
        let (a, b) = quad_dynamics_jacobians(&x, &u, &p).unwrap();
        let f = |x: &RigidBodyState, u: &RotorThrusts| quad_dynamics(x, u, &p).unwrap();
        let rel = |an: f64, fd: f64| (an - fd).abs() / fd.abs().max(1.0);
        let base = x.to_vector();
        for j in 0..13 {
            let mut xp = base;
            let mut xm = base;
            xp[j] += h;
            xm[j] -= h;
            let col = (f(&RigidBodyState::from_vector(&xp), &u) - f(&RigidBodyState::from_vector(&xm), &u)) / (2.0 * h);
            for i in 0..13 {
                worst = worst.max(rel(a[(i, j)], col[i]));
            }
        }
        for j in 0..4 {
            let mut up = u;
            let mut um = u;
            up.0[j] += h;
            um.0[j] -= h;
            let col = (f(&x, &up) - f(&x, &um)) / (2.0 * h);
            for i in 0..13 {
                worst = worst.max(rel(b[(i, j)], col[i]));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    t.report(
        2,
        worst <= 1e-5 && secs < 5.0,
        format!("worst relative Jacobian error {worst:.2e} over 100 pairs (<= 1e-5), {secs:.3} s (< 5 s)"),
    );
}

fn point_mass(d: f64, a_max: f64) -> (SolveResult, f64) {
    let track = Track {
        drones: vec![DroneTrack {
            start: RigidBodyState::at_rest(Vector3::zeros()),
            waypoints: vec![Vector3::new(d, 0.0, 0.0)],
            stop_at_final: true,
        }],
        tol: 0.1,
    };
    let grid = GridSpec::new(60, 0.1).unwrap();
    let models = [VehicleModel::PointMass(PointMassParams { a_max })];
    let r = plan(&track, &grid, &models, None, &SolverOptions::default(), &mut |_| {}).unwrap();
    (r, 2.0 * (d / a_max).sqrt())
}

fn minimum_time_oracle(t: &mut Tally) -> Vec<SolveResult> {
    let start = Instant::now();
    let cfg = scenario("point_mass_oracle.json");
    let mut cases = vec![(10.0, 5.0)];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..5 {
        cases.push((rng.gen_range(3.0..12.0), rng.gen_range(2.0..8.0)));
    }
    let mut ok = true;
    let mut detail = Vec::new();
    let mut results = Vec::new();
    for (i, &(d, a)) in cases.iter().enumerate() {
        let (r, exact) = if i == 0 {
            let r = plan(&cfg.track(), &cfg.grid, &cfg.models(), None, &cfg.solver, &mut |_| {}).unwrap();
            (r, 2.0 * (10.0f64 / 5.0).sqrt())
        } else {
            point_mass(d, a)
        };
        let got = r.solutions[0].arrival_time();
        let good = r.status == SolveStatus::Converged && (got - exact).abs() <= 0.1 + 1e-12;
        ok &= good;
        detail.push(format!("d={d:.2} a={a:.2}: {got:.2} vs {exact:.4}{}", if good { "" } else { " !" }));
        results.push(r);
    }
    let secs = start.elapsed().as_secs_f64();
    t.report(
        3,
        ok && secs < 60.0,
        format!("{} (within dt = 0.1), {secs:.1} s (< 60 s)", detail.join("; ")),
    );
    results
}

fn swap_checks(t: &mut Tally, cmp: &Comparison, secs: f64, spec: &CollisionSpec, tol: f64) {
    let j = &cmp.joint;
    let miss = j.solutions.iter().flat_map(|s| s.miss_distances.iter().copied()).fold(0.0, f64::max);
    let qdev = j
        .solutions
        .iter()
        .flat_map(|s| s.states.iter().map(|x| (x.q.norm() - 1.0).abs()))
        .fold(0.0, f64::max);
    let (a, b) = (&j.solutions[0], &j.solutions[1]);
    let skip = spec.exempt_nodes_for(&a.states[0].p, &b.states[0].p);
    let min_d = (skip..a.nodes())
        .map(|k| spec.scaled_distance_sq(&a.states[k].p, &b.states[k].p))
        .fold(f64::INFINITY, f64::min);
    let ok = j.status == SolveStatus::Converged
        && j.complementarity <= 1e-4
        && miss <= tol
        && qdev <= 1e-6
        && min_d >= spec.delta_col - 1e-6
        && secs < 600.0;
    t.report(
        4,
        ok,
        format!(
            "status {}, complementarity {:.2e} (<= 1e-4), max miss {miss:.4} m (<= {tol}), |q|-1 {qdev:.1e} (<= 1e-6), \
             min |E dp|^2 {min_d:.4} (>= {}), max violation {:.1e}, {secs:.0} s for all three methods (< 600 s)",
            j.status,
            j.complementarity,
            spec.delta_col - 1e-6,
            j.max_violation()
        ),
    );

    let r = &cmp.report;
    let collided = r.independent.first_collision_time;
    let lag = cmp.lag.as_ref().map(|l| l.lag);
    let (jt, lt) = (r.joint.total_arrival_time, r.lag.total_arrival_time);
    let ok = collided.is_some() && lag.is_some() && matches!((jt, lt), (Some(a), Some(b)) if a <= b + 1e-9);
    t.report(
        5,
        ok,
        format!(
            "independent first collision at {}, lag {}, total arrival joint {} vs lag {}",
            collided.map_or("none".into(), |v| format!("{v:.2} s")),
            lag.map_or("none".into(), |v| format!("{v:.2} s")),
            jt.map_or("-".into(), |v| format!("{v:.2} s")),
            lt.map_or("-".into(), |v| format!("{v:.2} s")),
        ),
    );
}

fn progress_algebra(t: &mut Tally, results: &[&SolveResult]) {
    let mut worst_mu: f64 = 0.0;
    let mut ordered = true;
    let mut exact = true;
    let mut count = 0;
    for r in results.iter().filter(|r| r.status == SolveStatus::Converged) {
        count += 1;
        for s in &r.solutions {
            for j in 0..s.progress.mu.ncols() {
                worst_mu = worst_mu.max((s.progress.mu.column(j).sum() - 1.0).abs());
            }
            ordered &= s.pass_nodes.windows(2).all(|w| w[0] <= w[1]);
        }
        exact &= r.objective == progress_objective(&r.solutions);
    }
    t.report(
        6,
        count == results.len() && worst_mu <= 1e-4 && ordered && exact,
        format!(
            "{count}/{} converged solutions; max |sum mu - 1| {worst_mu:.1e} (<= 1e-4), pass nodes ordered: {ordered}, \
             J equals the recomputed sum: {exact}",
            results.len()
        ),
    );
}

fn hover_solution(p: &QuadrotorParams, n: usize, dt: f64) -> TrajectorySolution {
    let at = Vector3::new(0.0, 0.0, 1.5);
    TrajectorySolution {
        dt,
        states: vec![RigidBodyState::at_rest(at); n],
        inputs: vec![vec![p.hover_thrust(); 4]; n],
        progress: ProgressVariables {
            lambda: nalgebra::DMatrix::from_fn(n, 1, |k, _| if k == 0 { 1.0 } else { 0.0 }),
            mu: nalgebra::DMatrix::from_fn(n - 1, 1, |k, _| if k == 0 { 1.0 } else { 0.0 }),
            nu: nalgebra::DMatrix::zeros(n - 1, 1),
        },
        waypoints: vec![at],
        pass_nodes: vec![1],
        miss_distances: vec![0.0],
        arrival_node: 1,
    }
}

fn tracking_replay(t: &mut Tally, cfg: &ScenarioConfig, joint: &SolveResult) {
    let start = Instant::now();
    let mut replay: f64 = 0.0;
    for (i, s) in joint.solutions.iter().enumerate() {
        let params = cfg.quadrotor(i).unwrap();
        let log = simulate_tracking(s, &ControllerGains::zero(), &params, &SimulationOptions::default()).unwrap();
        for (tick, x) in log.ticks.iter().zip(&s.states) {
            replay = replay.max((tick.state.to_vector() - x.to_vector()).abs().max());
        }
    }
    let p = QuadrotorParams::default();
    let dt = cfg.grid.dt;
    let sol = hover_solution(&p, (3.0 / dt) as usize + 1, dt);
    let mut at2: f64 = 0.0;
    for offset in [[0.1, 0.0, 0.0], [0.0, 0.1, 0.0], [0.0, 0.0, 0.1]] {
        let o = SimulationOptions {
            initial_offset: offset,
            ..Default::default()
        };
        let log = simulate_tracking(&sol, &ControllerGains::default(), &p, &o).unwrap();
        let tick = log.ticks.iter().find(|k| k.t >= 2.0 - 1e-9).unwrap();
        at2 = at2.max(tick.position_error.norm());
    }
    let secs = start.elapsed().as_secs_f64();
    t.report(
        7,
        replay <= 1e-6 && at2 < 0.01 && secs < 30.0,
        format!(
            "feedforward replay of the swap deviates {replay:.2e} (<= 1e-6); hover error 2 s after a 0.1 m offset \
             {at2:.2e} m (< 0.01), {secs:.2} s (< 30 s)"
        ),
    );
}

fn full_scale(t: &mut Tally) {
    let cfg = scenario("table1_track.json");
    if std::env::var("SWARMRACE_FULL_SCALE").map_or(true, |v| v != "1") {
        println!(
            "criterion 8: SKIP | opt-in; set SWARMRACE_FULL_SCALE=1 to solve the {}-drone, {}-node scenario",
            cfg.track.drones.len(),
            cfg.grid.nodes
        );
        return;
    }
    let start = Instant::now();
    let spec = cfg.collision.spec();
    let r = plan(&cfg.track(), &cfg.grid, &cfg.models(), Some(&spec), &cfg.solver, &mut |l| {
        if l.iteration % 100 == 0 {
            eprintln!("{l}");
        }
    })
    .unwrap();
    let audit = swarmrace::baselines::audit_collisions(&r.solutions, &spec).unwrap();
    let miss = r.solutions.iter().flat_map(|s| s.miss_distances.iter().copied()).fold(0.0, f64::max);
    let ok = r.status == SolveStatus::Converged
        && r.max_violation() <= cfg.solver.feasibility_tol
        && r.complementarity <= 1e-4
        && miss <= cfg.track.tol
        && audit.min_distance_sq >= spec.delta_col - 1e-6;
    t.report(
        8,
        ok,
        format!(
            "status {}, max violation {:.1e}, complementarity {:.1e}, max miss {miss:.3} m, min |E dp|^2 {:.3}, \
             {:.0} s",
            r.status,
            r.max_violation(),
            r.complementarity,
            audit.min_distance_sq,
            start.elapsed().as_secs_f64()
        ),
    );
}

fn determinism(t: &mut Tally) {
    let dir = tempfile::tempdir().unwrap();
    let config = configs().join("table3_swap.json");
    let mut files = Vec::new();
    let mut codes = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let code = swarmrace::cli::run([
            "swarmrace".as_ref(),
            "solve".as_ref(),
            "--config".as_ref(),
            config.as_os_str(),
            "--out".as_ref(),
            out.as_os_str(),
            "--seed".as_ref(),
            "0".as_ref(),
        ] as [&std::ffi::OsStr; 8]);
        codes.push(code);
        files.push(std::fs::read(out.join("solution.csv")).unwrap_or_default());
    }
    let same = !files[0].is_empty() && files[0] == files[1];
    t.report(
        9,
        codes == [0, 0] && same,
        format!("exit codes {codes:?}, solution CSVs of {} bytes identical: {same}", files[0].len()),
    );
}

fn main() {
    let mut t = Tally::default();
    dynamics_oracle(&mut t);
    derivative_check(&mut t);
    let oracles = minimum_time_oracle(&mut t);

    let cfg = scenario("table3_swap.json");
    let spec = cfg.collision.spec();
    let start = Instant::now();
    let cmp = compare(&cfg.track(), &cfg.grid, &cfg.models(), &spec, &cfg.solver, &mut |_, _| {}).unwrap();
    swap_checks(&mut t, &cmp, start.elapsed().as_secs_f64(), &spec, cfg.track.tol);

    let mut all: Vec<&SolveResult> = vec![&cmp.joint];
    all.extend(cmp.independent.iter());
    all.extend(oracles.iter());
    progress_algebra(&mut t, &all);
    tracking_replay(&mut t, &cfg, &cmp.joint);
    full_scale(&mut t);
    determinism(&mut t);

    if !t.failed.is_empty() {
        println!("failed criteria: {:?}", t.failed);
        std::process::exit(1);
    }
}
