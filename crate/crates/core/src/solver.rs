//! Joint planning problem: assembly, the complementarity homotopy, and
//! trajectory extraction.
//!
//! The objective is the sum of every progress variable λ over all drones,
//! nodes and waypoints. Each complementarity row `μ(d² − ν) = 0` is relaxed
//! to `|μ(d² − ν)| ≤ ε` and ε is tightened stage by stage, each stage
//! warm-started from the last.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::constraints::{drone_blocks, pair_blocks, BlockSettings, CollisionSpec, Track};
use crate::error::{Error, Result};
use crate::nlp::{ipm, ConstraintClass, IpmOptions, IpmStatus, IterationRecord, Multipliers, NlpProblem, QuadraticTerm};
use crate::transcription::{initial_guess, DecisionLayout, GridSpec, GuessOptions, ProgressVariables};
use crate::vehicle::{RigidBodyState, VehicleModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Interior-point iterations allowed per homotopy stage.
    pub max_iterations: usize,
    pub optimality_tol: f64,
    /// Optimality level at which a stage that keeps meeting it for several
    /// iterations is accepted.
    pub acceptable_tol: f64,
    /// Largest constraint violation a converged result may report.
    pub feasibility_tol: f64,
    pub homotopy_start: f64,
    pub homotopy_factor: f64,
    pub homotopy_floor: f64,
    /// Barrier parameter reduction per interior-point update.
    pub barrier_factor: f64,
    /// Optimality tolerance of the stages before the floor.
    pub intermediate_tol: f64,
    pub seed: u64,
    /// Fraction of the horizon the straight-line initial guess occupies.
    pub guess_utilization: f64,
    /// Amplitude of the seeded initial-guess offset, m.
    pub guess_perturbation: f64,
    /// Weight of the optional thrust-rate penalty `w·Σ(T_{k+1} − T_k)²`.
    pub thrust_rate_weight: f64,
    /// Speed used for the horizon check, m/s.
    pub average_speed: f64,
    pub enforce_attitude: bool,
    pub enforce_thrust_rate: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 3000,
            optimality_tol: 1e-8,
            acceptable_tol: 1e-5,
            feasibility_tol: 1e-6,
            homotopy_start: 1.0,
            homotopy_factor: 0.1,
            homotopy_floor: 1e-4,
            barrier_factor: 0.2,
            intermediate_tol: 1e-3,
            seed: 0,
            guess_utilization: 0.6,
            guess_perturbation: 0.05,
            thrust_rate_weight: 0.0,
            average_speed: 5.0,
            enforce_attitude: true,
            enforce_thrust_rate: true,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("solver.optimality_tol", self.optimality_tol),
            ("solver.acceptable_tol", self.acceptable_tol),
            ("solver.feasibility_tol", self.feasibility_tol),
            ("solver.intermediate_tol", self.intermediate_tol),
            ("solver.homotopy_start", self.homotopy_start),
            ("solver.homotopy_floor", self.homotopy_floor),
            ("solver.average_speed", self.average_speed),
            ("solver.guess_utilization", self.guess_utilization),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.acceptable_tol < self.optimality_tol {
            return Err(Error::InvalidConfig("solver.acceptable_tol is below solver.optimality_tol".into()));
        }
        if !(self.homotopy_factor > 0.0 && self.homotopy_factor < 1.0) {
            return Err(Error::InvalidConfig("solver.homotopy_factor must lie in (0,1)".into()));
        }
        if self.homotopy_floor > self.homotopy_start {
            return Err(Error::InvalidConfig("solver.homotopy_floor exceeds solver.homotopy_start".into()));
        }
        if !(self.barrier_factor > 0.0 && self.barrier_factor < 1.0) {
            return Err(Error::InvalidConfig("solver.barrier_factor must lie in (0,1)".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("solver.max_iterations must be positive".into()));
        }
        if !(self.thrust_rate_weight >= 0.0) || !(self.guess_perturbation >= 0.0) {
            return Err(Error::InvalidConfig("solver weights must be non-negative".into()));
        }
        if self.guess_utilization > 1.0 {
            return Err(Error::InvalidConfig("solver.guess_utilization must not exceed 1".into()));
        }
        Ok(())
    }

    /// Strictly decreasing ε values from `homotopy_start` down to
    /// `homotopy_floor`, the floor included.
    pub fn schedule(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut eps = self.homotopy_start;
        while eps > self.homotopy_floor * (1.0 + 1e-9) {
            out.push(eps);
            eps *= self.homotopy_factor;
        }
        out.push(self.homotopy_floor);
        out
    }

    pub fn guess_options(&self) -> GuessOptions {
        GuessOptions {
            utilization: self.guess_utilization,
            perturbation: self.guess_perturbation,
            seed: self.seed,
        }
    }

    fn ipm_options(&self) -> IpmOptions {
        IpmOptions {
            tol: self.optimality_tol,
            constr_viol_tol: (self.feasibility_tol * 1e-2).min(1e-8),
            acceptable_tol: self.acceptable_tol,
            acceptable_constr_viol_tol: self.feasibility_tol,
            max_iter: self.max_iterations,
            kappa_mu: self.barrier_factor,
            ..IpmOptions::default()
        }
    }

    /// Stages above the floor only steer the warm start, so they stop at a
    /// looser optimality level.
    fn intermediate_options(&self, base: &IpmOptions) -> IpmOptions {
        IpmOptions {
            tol: base.tol.max(self.intermediate_tol),
            acceptable_tol: base.acceptable_tol.max(10.0 * self.intermediate_tol),
            acceptable_iter: 5,
            ..base.clone()
        }
    }
}

const WARM_MU_INIT: f64 = 1e-3;

/// Failed stages retried over a whole homotopy, each with ε halfway
/// (geometrically) to the last accepted value.
const HOMOTOPY_RETRIES: usize = 3;

/// An assembled planning problem with the data needed to interpret it.
#[derive(Debug, Clone)]
pub struct PlanningProblem {
    pub nlp: NlpProblem,
    pub layout: DecisionLayout,
    pub grid: GridSpec,
    pub track: Track,
    pub models: Vec<VehicleModel>,
    /// `None` when collision rows were left out.
    pub collision: Option<CollisionSpec>,
}

impl PlanningProblem {
    pub fn initial_guess(&self, options: &SolverOptions) -> Result<Vec<f64>> {
        initial_guess(&self.track, &self.grid, &self.models, &options.guess_options())
    }

    /// Sum of all λ entries.
    pub fn progress_sum(&self, z: &[f64]) -> f64 {
        let mut j = 0.0;
        for d in &self.layout.drones {
            for w in 0..d.waypoints {
                for k in 0..self.layout.nodes {
                    j += z[d.lambda(k, w)];
                }
            }
        }
        j
    }
}

/// Builds the joint problem. Pass `collision = None` to plan without
/// coupling rows.
pub fn assemble(
    track: &Track,
    grid: &GridSpec,
    models: &[VehicleModel],
    collision: Option<&CollisionSpec>,
    options: &SolverOptions,
) -> Result<PlanningProblem> {
    track.validate()?;
    grid.validate()?;
    options.validate()?;
    if let Some(c) = collision {
        c.validate()?;
    }
    if models.len() != track.drones.len() {
        return Err(Error::InvalidConfig(format!(
            "{} vehicle models for {} drones",
            models.len(),
            track.drones.len()
        )));
    }
    for m in models {
        m.validate()?;
    }
    grid.check_horizon(track.arrival_estimate(options.average_speed))?;

    let waypoints: Vec<usize> = track.drones.iter().map(|d| d.waypoints.len()).collect();
    let layout = DecisionLayout::for_models(grid, models, &waypoints)?;
    let n = layout.total;
    let mut lo = vec![f64::NEG_INFINITY; n];
    let mut hi = vec![f64::INFINITY; n];
    let mut linear = vec![0.0; n];
    let mut quadratic = Vec::new();
    let tol2 = track.tol * track.tol;
    for (d, model) in layout.drones.iter().zip(models) {
        let (ulo, uhi) = model.input_bounds();
        for k in 0..grid.nodes {
            for c in 0..d.nu {
                lo[d.input(k) + c] = ulo[c];
                hi[d.input(k) + c] = uhi[c];
            }
            for j in 0..d.waypoints {
                lo[d.lambda(k, j)] = 0.0;
                hi[d.lambda(k, j)] = 1.0;
                linear[d.lambda(k, j)] = 1.0;
                if k + 1 < grid.nodes {
                    lo[d.mu(k, j)] = 0.0;
                    hi[d.mu(k, j)] = 1.0;
                    lo[d.nu(k, j)] = 0.0;
                    // leaves room for the relaxed complementarity at the floor
                    hi[d.nu(k, j)] = tol2 * (1.0 - options.homotopy_floor);
                }
            }
        }
        if options.thrust_rate_weight > 0.0 {
            let w2 = 2.0 * options.thrust_rate_weight;
            let nu = d.nu;
            for k in 0..grid.nodes - 1 {
                let mut vars: Vec<usize> = (0..nu).map(|c| d.input(k) + c).collect();
                vars.extend((0..nu).map(|c| d.input(k + 1) + c));
                let mut h = vec![0.0; 4 * nu * nu];
                for c in 0..nu {
                    h[c * 2 * nu + c] = w2;
                    h[(nu + c) * 2 * nu + nu + c] = w2;
                    h[c * 2 * nu + nu + c] = -w2;
                    h[(nu + c) * 2 * nu + c] = -w2;
                }
                quadratic.push(QuadraticTerm { vars, hessian: h });
            }
        }
    }

    let settings = BlockSettings {
        dt: grid.dt,
        epsilon: options.homotopy_start,
        complementarity_scale: 1.0 / tol2,
        enforce_attitude: options.enforce_attitude,
        enforce_rate: options.enforce_thrust_rate,
    };
    let mut blocks = Vec::new();
    for (i, (dt, model)) in track.drones.iter().zip(models).enumerate() {
        blocks.extend(drone_blocks(&layout, i, model, dt, &settings));
    }
    if let Some(spec) = collision {
        for i in 0..track.drones.len() {
            for r in i + 1..track.drones.len() {
                let exempt = spec.exempt_nodes_for(&track.drones[i].start.p, &track.drones[r].start.p);
                blocks.extend(pair_blocks(&layout, i, r, exempt, spec));
            }
        }
    }
    let nlp = NlpProblem::new(lo, hi, linear, quadratic, blocks, layout.stage_hints());
    Ok(PlanningProblem {
        nlp,
        layout,
        grid: *grid,
        track: track.clone(),
        models: models.to_vec(),
        collision: collision.copied(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    Infeasible,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIterations => "max-iter",
            SolveStatus::Infeasible => "infeasible",
        })
    }
}

/// One line of the solver iteration log.
#[derive(Debug, Clone, Copy)]
pub struct IterationLog {
    pub stage: usize,
    pub epsilon: f64,
    pub iteration: usize,
    pub objective: f64,
    pub feasibility: f64,
    pub complementarity: f64,
    pub step_norm: f64,
}

impl IterationLog {
    pub const HEADER: &'static str = "stage iter epsilon objective feasibility complementarity step_norm";
}

impl fmt::Display for IterationLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {:.1e} {:.9e} {:.3e} {:.3e} {:.3e}",
            self.stage, self.iteration, self.epsilon, self.objective, self.feasibility, self.complementarity, self.step_norm
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageSummary {
    pub epsilon: f64,
    pub status: IpmStatus,
    pub iterations: usize,
    pub objective: f64,
    pub feasibility: f64,
    pub complementarity: f64,
}

/// Trajectory of one drone on the common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySolution {
    pub dt: f64,
    pub states: Vec<RigidBodyState>,
    /// Rotor thrusts for the quadrotor, accelerations for the point mass.
    pub inputs: Vec<Vec<f64>>,
    pub progress: ProgressVariables,
    pub waypoints: Vec<Vector3<f64>>,
    pub pass_nodes: Vec<usize>,
    pub miss_distances: Vec<f64>,
    pub arrival_node: usize,
}

impl TrajectorySolution {
    pub fn nodes(&self) -> usize {
        self.states.len()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn arrival_time(&self) -> f64 {
        self.time(self.arrival_node)
    }

    pub fn is_post_arrival(&self, k: usize) -> bool {
        k > self.arrival_node
    }

    /// This drone's share of the objective.
    pub fn progress_sum(&self) -> f64 {
        self.progress.lambda.sum()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.states.iter().map(|s| s.p).collect()
    }

    /// λ of the final waypoint per node.
    pub fn final_lambda(&self) -> Vec<f64> {
        let w = self.progress.lambda.ncols();
        self.progress.lambda.column(w - 1).iter().copied().collect()
    }
}

/// Sum of every λ, accumulated in the same order as the solver's objective.
pub fn progress_objective(solutions: &[TrajectorySolution]) -> f64 {
    let mut j = 0.0;
    for s in solutions {
        for l in s.progress.lambda.iter() {
            j += l;
        }
    }
    j
}

/// First node with `λ < 0.5`, per waypoint column.
pub fn pass_nodes(lambda: &nalgebra::DMatrix<f64>) -> Result<Vec<usize>> {
    (0..lambda.ncols())
        .map(|j| {
            lambda
                .column(j)
                .iter()
                .position(|&l| l < 0.5)
                .ok_or_else(|| Error::Extraction(format!("λ of waypoint {j} never drops below 0.5")))
        })
        .collect()
}

pub fn extract_solution(
    z: &[f64],
    layout: &DecisionLayout,
    grid: &GridSpec,
    track: &Track,
    models: &[VehicleModel],
) -> Result<Vec<TrajectorySolution>> {
    let vars = layout.unpack(z)?;
    if vars.len() != track.drones.len() || models.len() != vars.len() {
        return Err(Error::InvalidInput("track, models and layout disagree on the drone count".into()));
    }
    vars.into_iter()
        .zip(&track.drones)
        .zip(models)
        .map(|((v, dt), model)| {
            let states: Vec<RigidBodyState> = v.states.iter().map(|x| model.unpack_state(x)).collect();
            let pass = pass_nodes(&v.progress.lambda)?;
            let miss = pass
                .iter()
                .zip(&dt.waypoints)
                .map(|(&k, w)| (states[k].p - w).norm())
                .collect();
            Ok(TrajectorySolution {
                dt: grid.dt,
                states,
                inputs: v.inputs,
                progress: v.progress,
                waypoints: dt.waypoints.clone(),
                arrival_node: *pass.last().expect("validated track has waypoints"),
                pass_nodes: pass,
                miss_distances: miss,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Sum of all λ.
    pub objective: f64,
    /// Max violation per constraint class, plus `"bounds"`.
    pub violations: BTreeMap<String, f64>,
    /// Max |μ(d² − ν)|, unscaled.
    pub complementarity: f64,
    pub solutions: Vec<TrajectorySolution>,
    pub wall_time: f64,
    pub z: Vec<f64>,
    pub multipliers: Option<Multipliers>,
    pub stages: Vec<StageSummary>,
    /// Most violated rows when the solve did not converge.
    pub diagnostics: Vec<String>,
}

impl SolveResult {
    pub fn max_violation(&self) -> f64 {
        self.violations.values().fold(0.0, |a, &v| a.max(v))
    }

    pub fn arrival_total(&self) -> f64 {
        self.solutions.iter().map(|s| s.arrival_time()).sum()
    }
}

/// Violation of each row against the final (tightest) bounds.
fn row_violations(problem: &PlanningProblem, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let c = problem.nlp.constraints(z);
    let (cl, cu) = problem.nlp.constraint_bounds();
    let v = c
        .iter()
        .zip(cl.iter().zip(&cu))
        .map(|(&c, (&l, &u))| (l - c).max(c - u).max(0.0))
        .collect();
    (c, v)
}

fn class_violations(problem: &PlanningProblem, z: &[f64]) -> (BTreeMap<String, f64>, f64, Vec<f64>) {
    let (c, v) = row_violations(problem, z);
    let mut out = BTreeMap::<String, f64>::new();
    let classes = problem.nlp.row_classes();
    let mut compl = 0.0f64;
    let tol2 = problem.track.tol * problem.track.tol;
    for cls in ConstraintClass::ALL {
        if classes.contains(&cls) {
            out.insert(cls.name().to_string(), 0.0);
        }
    }
    for (i, cls) in classes.iter().enumerate() {
        let e: &mut f64 = out.get_mut(cls.name()).expect("inserted above");
        *e = e.max(v[i]);
        if *cls == ConstraintClass::Complementarity {
            compl = compl.max(c[i].abs() * tol2);
        }
    }
    let bounds = z
        .iter()
        .zip(problem.nlp.x_lower.iter().zip(&problem.nlp.x_upper))
        .map(|(&x, (&l, &u))| (l - x).max(x - u).max(0.0))
        .fold(0.0, f64::max);
    out.insert("bounds".to_string(), bounds);
    (out, compl, v)
}

fn worst_rows(problem: &PlanningProblem, violations: &[f64], count: usize) -> Vec<String> {
    let mut rows: Vec<usize> = (0..violations.len()).filter(|&i| violations[i] > 0.0).collect();
    rows.sort_by(|&a, &b| violations[b].total_cmp(&violations[a]).then(a.cmp(&b)));
    rows.into_iter()
        .take(count)
        .map(|i| {
            let b = problem.nlp.block_of_row(i);
            let blk = &problem.nlp.blocks[b];
            format!(
                "{} [{}] row {} violated by {:.3e}",
                blk.label,
                blk.class.name(),
                i - problem.nlp.row_offset(b),
                violations[i]
            )
        })
        .collect()
}

/// Runs the homotopy from `guess`. The problem's complementarity bounds
/// are left at the last stage's ε.
pub fn solve(
    problem: &mut PlanningProblem,
    options: &SolverOptions,
    guess: &[f64],
    log: &mut dyn FnMut(&IterationLog),
) -> Result<SolveResult> {
    options.validate()?;
    let started = Instant::now();
    let n = problem.nlp.num_vars();
    if guess.len() != n {
        return Err(Error::InvalidInput(format!("guess has {} entries, problem has {n}", guess.len())));
    }
    if guess.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("guess contains non-finite entries".into()));
    }
    let mut x: Vec<f64> = guess.to_vec();
    let mut clipped = 0;
    for i in 0..n {
        let c = x[i].clamp(problem.nlp.x_lower[i], problem.nlp.x_upper[i]);
        if c != x[i] {
            clipped += 1;
            x[i] = c;
        }
    }
    if clipped > 0 {
        log::warn!("{clipped} guess entries were outside their bounds and were clipped");
    }

    let ipm_opts = options.ipm_options();
    let mut warm: Option<Multipliers> = None;
    let mut stages = Vec::new();
    let mut last_status = IpmStatus::Converged;
    let mut best: Option<(Vec<f64>, Option<Multipliers>)> = None;
    let schedule = options.schedule();
    let floor = options.homotopy_floor;
    let tol2 = problem.track.tol * problem.track.tol;
    let mut eps = schedule[0];
    let mut accepted: Option<f64> = None;
    let mut retries = 0;
    let mut reached_floor = false;
    for s in 0.. {
        problem.nlp.set_class_bounds(ConstraintClass::Complementarity, -eps, eps);
        let mut observer = |r: &IterationRecord| {
            log(&IterationLog {
                stage: s,
                epsilon: eps,
                iteration: r.iter,
                objective: r.objective,
                feasibility: r.primal_inf,
                complementarity: r.complementarity * tol2,
                step_norm: r.step_norm,
            })
        };
        let at_floor = eps <= floor * (1.0 + 1e-9);
        let mut stage_opts = if at_floor { ipm_opts.clone() } else { options.intermediate_options(&ipm_opts) };
        if warm.is_some() {
            // a large restart barrier pushes the iterate away from the previous stage
            stage_opts.mu_init = WARM_MU_INIT;
        }
        let r = ipm::solve(&problem.nlp, &x, warm.as_ref(), &stage_opts, &mut observer)?;
        if !r.objective.is_finite() {
            return Err(Error::Evaluation(format!("objective became non-finite at ε = {eps:e}")));
        }
        log::info!(
            "stage {s} ε={eps:.1e}: {:?} after {} iterations, J={:.6}",
            r.status,
            r.iterations,
            r.objective
        );
        stages.push(StageSummary {
            epsilon: eps,
            status: r.status,
            iterations: r.iterations,
            objective: r.objective,
            feasibility: r.primal_inf,
            complementarity: class_violations(problem, &r.x).1,
        });
        last_status = r.status;
        if matches!(r.status, IpmStatus::Converged | IpmStatus::Acceptable) {
            x = r.x.clone();
            warm = Some(r.multipliers.clone());
            best = Some((r.x, Some(r.multipliers)));
            if at_floor {
                reached_floor = true;
                break;
            }
            accepted = Some(eps);
            eps = schedule.iter().copied().find(|&e| e < eps * (1.0 - 1e-9)).unwrap_or(floor);
            continue;
        }
        match accepted {
            // retry from the last accepted stage with a shorter step in ε
            Some(prev) if retries < HOMOTOPY_RETRIES => {
                retries += 1;
                eps = (prev * eps).sqrt();
            }
            _ => {
                if best.is_none() {
                    best = Some((r.x, Some(r.multipliers)));
                }
                break;
            }
        }
    }
    let (z, multipliers) = best.expect("schedule is never empty");
    // evaluate against the floor even when an earlier stage stopped
    problem
        .nlp
        .set_class_bounds(ConstraintClass::Complementarity, -options.homotopy_floor, options.homotopy_floor);
    let (violations, complementarity, rows) = class_violations(problem, &z);
    let worst = violations.values().fold(0.0f64, |a, &v| a.max(v));
    let status = if reached_floor && worst <= options.feasibility_tol && complementarity <= options.homotopy_floor * (1.0 + 1e-9) {
        SolveStatus::Converged
    } else if last_status == IpmStatus::MaxIterations {
        SolveStatus::MaxIterations
    } else {
        SolveStatus::Infeasible
    };
    let diagnostics = if status == SolveStatus::Converged {
        Vec::new()
    } else {
        worst_rows(problem, &rows, 5)
    };
    for d in &diagnostics {
        log::warn!("{d}");
    }
    let solutions = match extract_solution(&z, &problem.layout, &problem.grid, &problem.track, &problem.models) {
        Ok(s) => s,
        Err(e) if status != SolveStatus::Converged => {
            log::warn!("{e}");
            Vec::new()
        }
        Err(e) => return Err(e),
    };
    Ok(SolveResult {
        status,
        objective: problem.progress_sum(&z),
        violations,
        complementarity,
        solutions,
        wall_time: started.elapsed().as_secs_f64(),
        z,
        multipliers,
        stages,
        diagnostics,
    })
}

/// Assembles, guesses and solves in one call.
pub fn plan(
    track: &Track,
    grid: &GridSpec,
    models: &[VehicleModel],
    collision: Option<&CollisionSpec>,
    options: &SolverOptions,
    log: &mut dyn FnMut(&IterationLog),
) -> Result<SolveResult> {
    let mut problem = assemble(track, grid, models, collision, options)?;
    let guess = problem.initial_guess(options)?;
    solve(&mut problem, options, &guess, log)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    /// ‖∇f + Jᵀy − z_L + z_U‖∞.
    pub stationarity: f64,
    /// Largest row or bound violation.
    pub feasibility: f64,
    /// Largest |μ(d² − ν)|.
    pub complementarity: f64,
}

/// First-order residuals at `z`; missing multipliers count as zero.
pub fn kkt_residuals(problem: &PlanningProblem, z: &[f64], multipliers: Option<&Multipliers>) -> Result<KktResiduals> {
    let nlp = &problem.nlp;
    let n = nlp.num_vars();
    let m = nlp.num_constraints();
    if z.len() != n {
        return Err(Error::InvalidInput(format!("point has {} entries, problem has {n}", z.len())));
    }
    let mut r = nlp.objective_gradient(z);
    if let Some(mu) = multipliers {
        if mu.y.len() != m || mu.z_lower.len() != n || mu.z_upper.len() != n {
            return Err(Error::InvalidInput("multipliers do not match the problem".into()));
        }
        let jac = nlp.jacobian_values(z);
        let pat = nlp.jacobian_structure();
        for ((&row, &col), v) in pat.rows.iter().zip(&pat.cols).zip(&jac) {
            r[col] += v * mu.y[row];
        }
        for i in 0..n {
            r[i] += mu.z_upper[i] - mu.z_lower[i];
        }
    }
    let (violations, complementarity, _) = class_violations(problem, z);
    Ok(KktResiduals {
        stationarity: r.iter().fold(0.0, |a, v| a.max(v.abs())),
        feasibility: violations.values().fold(0.0, |a, &v| a.max(v)),
        complementarity,
    })
}
