//! Primal-dual interior-point method with a filter line search.
//!
//! Ranged and one-sided rows get a slack `s` with `c(x) − s = 0`; slacks
//! and variables share one bounded primal vector `w = [x; s]`. Each step
//! solves the reduced system `[W + Σₓ + δw  Jᵀ; J  −D]` where slacks are
//! eliminated into `D`. Inertia is read off the LDLᵀ pivots and corrected
//! by raising `δw`.

use serde::{Deserialize, Serialize};

use super::kkt::KktSystem;
use super::problem::{ConstraintClass, NlpProblem};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IpmStatus {
    Converged,
    Acceptable,
    MaxIterations,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct IpmOptions {
    /// Scaled overall optimality tolerance.
    pub tol: f64,
    pub constr_viol_tol: f64,
    pub dual_inf_tol: f64,
    pub compl_inf_tol: f64,
    pub acceptable_tol: f64,
    pub acceptable_constr_viol_tol: f64,
    pub acceptable_iter: usize,
    pub max_iter: usize,
    pub mu_init: f64,
    pub bound_push: f64,
    pub bound_frac: f64,
    pub kappa_mu: f64,
    pub theta_mu: f64,
    pub kappa_eps: f64,
    pub tau_min: f64,
    pub kappa_sigma: f64,
    pub max_soc: usize,
    pub max_restoration_iter: usize,
    pub static_regularization: f64,
    pub dual_regularization: f64,
}

impl Default for IpmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            constr_viol_tol: 1e-8,
            dual_inf_tol: 1.0,
            compl_inf_tol: 1e-4,
            acceptable_tol: 1e-6,
            acceptable_constr_viol_tol: 1e-6,
            acceptable_iter: 15,
            max_iter: 3000,
            mu_init: 0.1,
            bound_push: 1e-2,
            bound_frac: 1e-2,
            kappa_mu: 0.2,
            theta_mu: 1.5,
            kappa_eps: 10.0,
            tau_min: 0.99,
            kappa_sigma: 1e10,
            max_soc: 4,
            max_restoration_iter: 200,
            static_regularization: 1e-8,
            dual_regularization: 1e-9,
        }
    }
}

impl IpmOptions {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("tol", self.tol),
            ("constr_viol_tol", self.constr_viol_tol),
            ("dual_inf_tol", self.dual_inf_tol),
            ("compl_inf_tol", self.compl_inf_tol),
            ("acceptable_tol", self.acceptable_tol),
            ("mu_init", self.mu_init),
            ("bound_push", self.bound_push),
            ("bound_frac", self.bound_frac),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.kappa_mu > 0.0 && self.kappa_mu < 1.0) {
            return Err(Error::InvalidConfig("kappa_mu must lie in (0,1)".into()));
        }
        if !(self.theta_mu > 1.0 && self.theta_mu < 2.0) {
            return Err(Error::InvalidConfig("theta_mu must lie in (1,2)".into()));
        }
        Ok(())
    }
}

/// Multipliers for `c` rows and for the lower/upper variable bounds.
/// Bound multipliers are zero for infinite bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    pub y: Vec<f64>,
    pub z_lower: Vec<f64>,
    pub z_upper: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub objective: f64,
    /// Max constraint residual including slack rows.
    pub primal_inf: f64,
    pub dual_inf: f64,
    pub mu: f64,
    /// Max |c| over complementarity rows.
    pub complementarity: f64,
    pub step_norm: f64,
    pub alpha: f64,
    pub regularization: f64,
    pub restoration: bool,
}

#[derive(Debug, Clone)]
pub struct IpmResult {
    pub status: IpmStatus,
    pub x: Vec<f64>,
    pub multipliers: Multipliers,
    pub objective: f64,
    pub primal_inf: f64,
    pub dual_inf: f64,
    pub compl_inf: f64,
    pub iterations: usize,
}

const KAPPA_D: f64 = 1e-5;
const GAMMA_THETA: f64 = 1e-5;
const GAMMA_PHI: f64 = 1e-8;
const DELTA_SWITCH: f64 = 1.0;
const S_THETA: f64 = 1.1;
const S_PHI: f64 = 2.3;
const ETA_PHI: f64 = 1e-8;
const KAPPA_SOC: f64 = 0.99;
const S_MAX: f64 = 100.0;

struct Eval {
    f: f64,
    grad: Vec<f64>,
    c: Vec<f64>,
    jac: Vec<f64>,
}

struct Filter {
    entries: Vec<(f64, f64)>,
}

impl Filter {
    fn acceptable(&self, theta: f64, phi: f64) -> bool {
        self.entries
            .iter()
            .all(|&(tf, pf)| theta <= (1.0 - GAMMA_THETA) * tf || phi <= pf - GAMMA_PHI * tf)
    }

    fn add(&mut self, theta: f64, phi: f64) {
        let t = (1.0 - GAMMA_THETA) * theta;
        let p = phi - GAMMA_PHI * theta;
        self.entries.retain(|&(tf, pf)| !(tf >= t && pf >= p));
        self.entries.push((t, p));
    }
}

struct Solver<'a> {
    p: &'a NlpProblem,
    o: &'a IpmOptions,
    n: usize,
    m: usize,
    nw: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    has_lo: Vec<bool>,
    has_hi: Vec<bool>,
    /// Slack index per row, `None` for equality rows.
    slack: Vec<Option<usize>>,
    target: Vec<f64>,
    comp_rows: Vec<usize>,
    kkt: KktSystem,
    delta_w_last: f64,
}

/// Minimizes `problem` from `x0`. `warm` seeds the multipliers; without it
/// they are estimated by least squares.
pub fn solve(
    problem: &NlpProblem,
    x0: &[f64],
    warm: Option<&Multipliers>,
    options: &IpmOptions,
    observer: &mut dyn FnMut(&IterationRecord),
) -> Result<IpmResult> {
    options.validate()?;
    let n = problem.num_vars();
    let m = problem.num_constraints();
    if x0.len() != n {
        return Err(Error::InvalidInput(format!("start point has {} entries, expected {n}", x0.len())));
    }
    if let Some(w) = warm {
        if w.y.len() != m || w.z_lower.len() != n || w.z_upper.len() != n {
            return Err(Error::InvalidInput("warm-start multipliers have wrong dimensions".into()));
        }
    }
    let (cl, cu) = problem.constraint_bounds();
    let mut slack = vec![None; m];
    let mut target = vec![0.0; m];
    let mut lo = problem.x_lower.clone();
    let mut hi = problem.x_upper.clone();
    for i in 0..m {
        if cl[i] > cu[i] {
            return Err(Error::InvalidInput(format!("row {i} has lower bound above upper bound")));
        }
        if cl[i] == cu[i] {
            target[i] = cl[i];
        } else {
            if cl[i] == f64::NEG_INFINITY && cu[i] == f64::INFINITY {
                return Err(Error::InvalidInput(format!("row {i} is unbounded on both sides")));
            }
            slack[i] = Some(lo.len() - n);
            lo.push(cl[i]);
            hi.push(cu[i]);
        }
    }
    let nw = lo.len();
    for i in 0..n {
        if lo[i] > hi[i] {
            return Err(Error::InvalidInput(format!("variable {i} has lower bound above upper bound")));
        }
        if lo[i] == hi[i] {
            let r = 1e-8 * lo[i].abs().max(1.0);
            lo[i] -= r;
            hi[i] += r;
        }
    }
    let has_lo = lo.iter().map(|v| v.is_finite()).collect();
    let has_hi = hi.iter().map(|v| v.is_finite()).collect();
    let classes = problem.row_classes();
    let comp_rows = (0..m).filter(|&i| classes[i] == ConstraintClass::Complementarity).collect();
    let kkt = KktSystem::new(problem, &problem.jacobian_structure(), &problem.hessian_structure());
    log::debug!("kkt: {} vars, {} rows, {} stored entries", n, m, kkt.stored());

    let mut s = Solver {
        p: problem,
        o: options,
        n,
        m,
        nw,
        lo,
        hi,
        has_lo,
        has_hi,
        slack,
        target,
        comp_rows,
        kkt,
        delta_w_last: 0.0,
    };
    s.run(x0, warm, observer)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

impl<'a> Solver<'a> {
    fn evaluate(&self, x: &[f64]) -> Option<Eval> {
        let f = self.p.objective(x);
        let c = self.p.constraints(x);
        if !f.is_finite() || !all_finite(&c) {
            return None;
        }
        let grad = self.p.objective_gradient(x);
        let jac = self.p.jacobian_values(x);
        if !all_finite(&grad) || !all_finite(&jac) {
            return None;
        }
        Some(Eval { f, grad, c, jac })
    }

    fn residual_c(&self, w: &[f64], c: &[f64]) -> Vec<f64> {
        (0..self.m)
            .map(|i| match self.slack[i] {
                Some(k) => c[i] - w[self.n + k],
                None => c[i] - self.target[i],
            })
            .collect()
    }

    fn theta(&self, w: &[f64], c: &[f64]) -> f64 {
        self.residual_c(w, c).iter().map(|v| v.abs()).sum()
    }

    fn barrier(&self, w: &[f64], f: f64, mu: f64) -> f64 {
        let mut phi = f;
        for i in 0..self.nw {
            match (self.has_lo[i], self.has_hi[i]) {
                (true, true) => phi -= mu * ((w[i] - self.lo[i]).ln() + (self.hi[i] - w[i]).ln()),
                (true, false) => phi += mu * (KAPPA_D * (w[i] - self.lo[i]) - (w[i] - self.lo[i]).ln()),
                (false, true) => phi += mu * (KAPPA_D * (self.hi[i] - w[i]) - (self.hi[i] - w[i]).ln()),
                (false, false) => {}
            }
        }
        phi
    }

    fn barrier_gradient(&self, w: &[f64], grad: &[f64], mu: f64) -> Vec<f64> {
        let mut g = vec![0.0; self.nw];
        g[..self.n].copy_from_slice(grad);
        for i in 0..self.nw {
            match (self.has_lo[i], self.has_hi[i]) {
                (true, true) => g[i] += -mu / (w[i] - self.lo[i]) + mu / (self.hi[i] - w[i]),
                (true, false) => g[i] += mu * KAPPA_D - mu / (w[i] - self.lo[i]),
                (false, true) => g[i] += -mu * KAPPA_D + mu / (self.hi[i] - w[i]),
                (false, false) => {}
            }
        }
        g
    }

    /// `Aᵀy` for `A = [J, −I_slack]`.
    fn at_y(&self, jac: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nw];
        let mut pos = 0;
        for (bi, b) in self.p.blocks.iter().enumerate() {
            let off = self.p.row_offset(bi);
            for r in 0..b.rows() {
                let yr = y[off + r];
                for &v in &b.vars {
                    out[v] += jac[pos] * yr;
                    pos += 1;
                }
            }
        }
        for i in 0..self.m {
            if let Some(k) = self.slack[i] {
                out[self.n + k] -= y[i];
            }
        }
        out
    }

    fn sigma(&self, w: &[f64], zl: &[f64], zu: &[f64]) -> Vec<f64> {
        (0..self.nw)
            .map(|i| {
                let mut s = 0.0;
                if self.has_lo[i] {
                    s += zl[i] / (w[i] - self.lo[i]);
                }
                if self.has_hi[i] {
                    s += zu[i] / (self.hi[i] - w[i]);
                }
                s
            })
            .collect()
    }

    /// Returns (dual inf, primal inf, complementarity) at barrier `mu`,
    /// plus the scaled overall error.
    fn errors(&self, w: &[f64], y: &[f64], zl: &[f64], zu: &[f64], ev: &Eval, mu: f64) -> (f64, f64, f64, f64) {
        let mut r = self.at_y(&ev.jac, y);
        for i in 0..self.n {
            r[i] += ev.grad[i];
        }
        for i in 0..self.nw {
            r[i] += zu[i] - zl[i];
        }
        let dual = inf_norm(&r);
        let primal = inf_norm(&self.residual_c(w, &ev.c));
        let mut compl = 0.0f64;
        let mut zsum = 0.0;
        let mut zcount = 0usize;
        for i in 0..self.nw {
            if self.has_lo[i] {
                compl = compl.max(((w[i] - self.lo[i]) * zl[i] - mu).abs());
                zsum += zl[i].abs();
                zcount += 1;
            }
            if self.has_hi[i] {
                compl = compl.max(((self.hi[i] - w[i]) * zu[i] - mu).abs());
                zsum += zu[i].abs();
                zcount += 1;
            }
        }
        let ysum: f64 = y.iter().map(|v| v.abs()).sum();
        let sd = (S_MAX.max((ysum + zsum) / ((self.m + zcount).max(1) as f64))) / S_MAX;
        let sc = (S_MAX.max(zsum / (zcount.max(1) as f64))) / S_MAX;
        let overall = (dual / sd).max(primal).max(compl / sc);
        (dual, primal, compl, overall)
    }

    fn complementarity_rows(&self, c: &[f64]) -> f64 {
        self.comp_rows.iter().fold(0.0f64, |a, &i| a.max(c[i].abs()))
    }

    /// Least-squares estimate of `y` for fixed bound multipliers.
    fn least_squares_y(&mut self, ev: &Eval, zl: &[f64], zu: &[f64]) -> Vec<f64> {
        let mut g: Vec<f64> = (0..self.nw).map(|i| zu[i] - zl[i]).collect();
        for i in 0..self.n {
            g[i] += ev.grad[i];
        }
        let diag_x = vec![1.0; self.n];
        let mut diag_c = vec![-self.o.dual_regularization; self.m];
        let rhs_x: Vec<f64> = g[..self.n].iter().map(|v| -v).collect();
        let mut rhs_c = vec![0.0; self.m];
        for i in 0..self.m {
            if let Some(k) = self.slack[i] {
                diag_c[i] -= 1.0;
                rhs_c[i] = -g[self.n + k];
            }
        }
        self.kkt.assemble(None, &ev.jac, &diag_x, &diag_c, 0.0, self.o.dual_regularization);
        let inertia = self.kkt.factorize();
        if !self.kkt.inertia_is_correct(inertia) {
            return vec![0.0; self.m];
        }
        let (_, y) = self.kkt.solve(&rhs_x, &rhs_c);
        if !all_finite(&y) || inf_norm(&y) > 1e3 {
            vec![0.0; self.m]
        } else {
            y
        }
    }

    fn push_into_interior(&self, w: &mut [f64], push: f64, frac: f64) {
        for i in 0..self.nw {
            let (l, u) = (self.lo[i], self.hi[i]);
            match (self.has_lo[i], self.has_hi[i]) {
                (true, true) => {
                    let pl = (push * l.abs().max(1.0)).min(frac * (u - l));
                    let pu = (push * u.abs().max(1.0)).min(frac * (u - l));
                    w[i] = w[i].max(l + pl).min(u - pu);
                }
                (true, false) => w[i] = w[i].max(l + push * l.abs().max(1.0)),
                (false, true) => w[i] = w[i].min(u - push * u.abs().max(1.0)),
                (false, false) => {}
            }
        }
    }

    /// Assembles and factors with inertia correction. Returns `δw`, or
    /// `None` when no shift up to 1e40 fixes the inertia.
    fn factor_with_correction(&mut self, hess: Option<&[f64]>, jac: &[f64], sigma: &[f64], mu: f64, min_shift: f64) -> Option<(f64, Vec<f64>)> {
        let mut dw = min_shift;
        let mut dc = self.o.dual_regularization;
        let mut tries = 0;
        loop {
            let diag_x: Vec<f64> = (0..self.n).map(|i| sigma[i] + dw).collect();
            let d: Vec<f64> = (0..self.nw - self.n).map(|k| sigma[self.n + k] + dw).collect();
            let diag_c: Vec<f64> = (0..self.m)
                .map(|i| match self.slack[i] {
                    Some(k) => -(1.0 / d[k].max(1e-300) + dc),
                    None => -dc,
                })
                .collect();
            self.kkt.assemble(hess, jac, &diag_x, &diag_c, self.o.static_regularization, self.o.dual_regularization);
            let inertia = self.kkt.factorize();
            if self.kkt.inertia_is_correct(inertia) {
                if dw > min_shift {
                    self.delta_w_last = dw;
                }
                return Some((dw, d));
            }
            tries += 1;
            if inertia.zero > 0 && dc < 1e-8 * mu.powf(0.25) {
                dc = 1e-8 * mu.powf(0.25);
                continue;
            }
            if dw <= min_shift {
                dw = if self.delta_w_last == 0.0 {
                    1e-4f64.max(min_shift)
                } else {
                    (self.delta_w_last / 3.0).max(1e-20).max(min_shift)
                };
            } else {
                dw *= if self.delta_w_last == 0.0 { 100.0 } else { 8.0 };
            }
            if dw > 1e40 || tries > 200 {
                return None;
            }
        }
    }

    /// Newton direction in `w` and `y` from constraint residual `rc` and
    /// barrier-stationarity residual `rw`.
    fn direction(&self, rw: &[f64], rc: &[f64], d: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let rhs_x: Vec<f64> = rw[..self.n].iter().map(|v| -v).collect();
        let rhs_c: Vec<f64> = (0..self.m)
            .map(|i| match self.slack[i] {
                Some(k) => -rc[i] - rw[self.n + k] / d[k],
                None => -rc[i],
            })
            .collect();
        let (dx, dy) = self.kkt.solve(&rhs_x, &rhs_c);
        let mut dw = dx;
        dw.resize(self.nw, 0.0);
        for i in 0..self.m {
            if let Some(k) = self.slack[i] {
                dw[self.n + k] = (dy[i] - rw[self.n + k]) / d[k];
            }
        }
        (dw, dy)
    }

    fn bound_dual_steps(&self, w: &[f64], zl: &[f64], zu: &[f64], dw: &[f64], mu: f64) -> (Vec<f64>, Vec<f64>) {
        let mut dzl = vec![0.0; self.nw];
        let mut dzu = vec![0.0; self.nw];
        for i in 0..self.nw {
            if self.has_lo[i] {
                let g = w[i] - self.lo[i];
                dzl[i] = mu / g - zl[i] - zl[i] / g * dw[i];
            }
            if self.has_hi[i] {
                let g = self.hi[i] - w[i];
                dzu[i] = mu / g - zu[i] + zu[i] / g * dw[i];
            }
        }
        (dzl, dzu)
    }

    fn max_primal_step(&self, w: &[f64], dw: &[f64], tau: f64) -> f64 {
        let mut a = 1.0f64;
        for i in 0..self.nw {
            if self.has_lo[i] && dw[i] < 0.0 {
                a = a.min(-tau * (w[i] - self.lo[i]) / dw[i]);
            }
            if self.has_hi[i] && dw[i] > 0.0 {
                a = a.min(tau * (self.hi[i] - w[i]) / dw[i]);
            }
        }
        a
    }

    fn max_dual_step(&self, z: &[f64], dz: &[f64], mask: &[bool], tau: f64) -> f64 {
        let mut a = 1.0f64;
        for i in 0..self.nw {
            if mask[i] && dz[i] < 0.0 {
                a = a.min(-tau * z[i] / dz[i]);
            }
        }
        a
    }

    fn safeguard_duals(&self, w: &[f64], zl: &mut [f64], zu: &mut [f64], mu: f64) {
        let k = self.o.kappa_sigma;
        for i in 0..self.nw {
            if self.has_lo[i] {
                let g = w[i] - self.lo[i];
                zl[i] = zl[i].max(mu / (k * g)).min(k * mu / g);
            }
            if self.has_hi[i] {
                let g = self.hi[i] - w[i];
                zu[i] = zu[i].max(mu / (k * g)).min(k * mu / g);
            }
        }
    }

    fn run(&mut self, x0: &[f64], warm: Option<&Multipliers>, observer: &mut dyn FnMut(&IterationRecord)) -> Result<IpmResult> {
        let n = self.n;
        let nw = self.nw;
        let o = self.o.clone();
        let mut mu = o.mu_init;

        let mut w = vec![0.0; nw];
        w[..n].copy_from_slice(x0);
        for i in 0..n {
            if !w[i].is_finite() {
                return Err(Error::InvalidInput(format!("start point entry {i} is not finite")));
            }
            if (self.has_lo[i] && w[i] < self.lo[i]) || (self.has_hi[i] && w[i] > self.hi[i]) {
                log::warn!("start point entry {i} outside its bounds; clipped");
            }
        }
        let (push, frac) = if warm.is_some() { (1e-9, 1e-9) } else { (o.bound_push, o.bound_frac) };
        {
            let mut tmp = w.clone();
            self.push_into_interior(&mut tmp, push, frac);
            w[..n].copy_from_slice(&tmp[..n]);
        }
        let mut ev = self
            .evaluate(&w[..n])
            .ok_or_else(|| Error::Evaluation("non-finite objective or constraints at start point".into()))?;
        for i in 0..self.m {
            if let Some(k) = self.slack[i] {
                w[n + k] = ev.c[i];
            }
        }
        {
            let mut tmp = w.clone();
            self.push_into_interior(&mut tmp, push, frac);
            w[n..].copy_from_slice(&tmp[n..]);
        }

        let mut zl = vec![0.0; nw];
        let mut zu = vec![0.0; nw];
        let y;
        match warm {
            Some(wm) => {
                for i in 0..n {
                    if self.has_lo[i] {
                        zl[i] = wm.z_lower[i].max(0.0);
                    }
                    if self.has_hi[i] {
                        zu[i] = wm.z_upper[i].max(0.0);
                    }
                }
                for i in 0..self.m {
                    if let Some(k) = self.slack[i] {
                        if self.has_lo[n + k] {
                            zl[n + k] = (-wm.y[i]).max(0.0);
                        }
                        if self.has_hi[n + k] {
                            zu[n + k] = wm.y[i].max(0.0);
                        }
                    }
                }
                self.safeguard_duals(&w, &mut zl, &mut zu, mu);
                y = wm.y.clone();
            }
            None => {
                for i in 0..nw {
                    if self.has_lo[i] {
                        zl[i] = 1.0;
                    }
                    if self.has_hi[i] {
                        zu[i] = 1.0;
                    }
                }
                y = self.least_squares_y(&ev, &zl, &zu);
            }
        }
        let mut y = y;

        let theta0 = self.theta(&w, &ev.c);
        let theta_max = 1e4 * theta0.max(1.0);
        let theta_min = 1e-4 * theta0.max(1.0);
        let mut filter = Filter { entries: Vec::new() };
        let mut tau = o.tau_min.max(1.0 - mu);
        let mu_min = (o.tol / (o.kappa_eps + 1.0)).min(1e-9);
        let mut acceptable_count = 0usize;
        let mut last = IterationRecord {
            iter: 0,
            objective: ev.f,
            primal_inf: 0.0,
            dual_inf: 0.0,
            mu,
            complementarity: self.complementarity_rows(&ev.c),
            step_norm: 0.0,
            alpha: 0.0,
            regularization: 0.0,
            restoration: false,
        };
        let mut tiny_steps = 0usize;

        for iter in 0..=o.max_iter {
            let (dual, primal, compl, overall) = self.errors(&w, &y, &zl, &zu, &ev, 0.0);
            last.iter = iter;
            last.objective = ev.f;
            last.primal_inf = primal;
            last.dual_inf = dual;
            last.mu = mu;
            last.complementarity = self.complementarity_rows(&ev.c);
            observer(&last);
            if iter % 100 == 0 {
                log::trace!("iter {iter}: dual {dual:.2e} primal {primal:.2e} compl {compl:.2e} overall {overall:.2e} mu {mu:.1e}");
            }

            if overall <= o.tol && primal <= o.constr_viol_tol && dual <= o.dual_inf_tol && compl <= o.compl_inf_tol {
                return Ok(self.result(IpmStatus::Converged, &w, &y, &zl, &zu, ev.f, (primal, dual, compl), iter));
            }
            if overall <= o.acceptable_tol && primal <= o.acceptable_constr_viol_tol {
                acceptable_count += 1;
                if acceptable_count >= o.acceptable_iter {
                    return Ok(self.result(IpmStatus::Acceptable, &w, &y, &zl, &zu, ev.f, (primal, dual, compl), iter));
                }
            } else {
                acceptable_count = 0;
            }
            if iter == o.max_iter {
                return Ok(self.result(IpmStatus::MaxIterations, &w, &y, &zl, &zu, ev.f, (primal, dual, compl), iter));
            }

            // monotone barrier update
            loop {
                let (_, _, _, e_mu) = self.errors(&w, &y, &zl, &zu, &ev, mu);
                if !(e_mu <= o.kappa_eps * mu || tiny_steps >= 2) || mu <= mu_min {
                    break;
                }
                let new_mu = mu_min.max((o.kappa_mu * mu).min(mu.powf(o.theta_mu)));
                tiny_steps = 0;
                filter.entries.clear();
                if new_mu >= mu {
                    break;
                }
                mu = new_mu;
                tau = o.tau_min.max(1.0 - mu);
            }

            let hess = self.p.hessian_values(&w[..n], 1.0, &y);
            let sigma = self.sigma(&w, &zl, &zu);
            let (dw_reg, d) = match self.factor_with_correction(Some(&hess), &ev.jac, &sigma, mu, 0.0) {
                Some(v) => v,
                None => return Ok(self.result(IpmStatus::NumericalFailure, &w, &y, &zl, &zu, ev.f, (primal, dual, compl), iter)),
            };
            let gphi = self.barrier_gradient(&w, &ev.grad, mu);
            let aty = self.at_y(&ev.jac, &y);
            let rw: Vec<f64> = (0..nw).map(|i| gphi[i] + aty[i]).collect();
            let rc = self.residual_c(&w, &ev.c);
            let (dw, dy) = self.direction(&rw, &rc, &d);
            if !all_finite(&dw) || !all_finite(&dy) {
                return Ok(self.result(IpmStatus::NumericalFailure, &w, &y, &zl, &zu, ev.f, (primal, dual, compl), iter));
            }
            let (dzl, dzu) = self.bound_dual_steps(&w, &zl, &zu, &dw, mu);

            let alpha_max = self.max_primal_step(&w, &dw, tau);
            let alpha_z = self
                .max_dual_step(&zl, &dzl, &self.has_lo, tau)
                .min(self.max_dual_step(&zu, &dzu, &self.has_hi, tau));

            let theta = self.theta(&w, &ev.c);
            let phi = self.barrier(&w, ev.f, mu);
            let gd: f64 = gphi.iter().zip(&dw).map(|(a, b)| a * b).sum();

            let tiny = (0..nw).all(|i| dw[i].abs() / (1.0 + w[i].abs()) < 10.0 * f64::EPSILON);
            let mut accepted: Option<(Vec<f64>, Option<Vec<f64>>, f64, Eval)> = None;
            if tiny {
                tiny_steps += 1;
                let wt: Vec<f64> = (0..nw).map(|i| w[i] + alpha_max * dw[i]).collect();
                if let Some(et) = self.evaluate(&wt[..n]) {
                    accepted = Some((wt, None, alpha_max, et));
                }
            } else {
                tiny_steps = 0;
            }

            if accepted.is_none() {
                let alpha_min = {
                    let base = if gd < 0.0 {
                        if theta <= theta_min {
                            GAMMA_THETA
                                .min(GAMMA_PHI * theta / -gd)
                                .min(DELTA_SWITCH * theta.powf(S_THETA) / (-gd).powf(S_PHI))
                        } else {
                            GAMMA_THETA.min(GAMMA_PHI * theta / -gd)
                        }
                    } else {
                        GAMMA_THETA
                    };
                    0.05 * base
                };
                let mut alpha = alpha_max;
                let mut first = true;
                while alpha >= alpha_min {
                    let wt: Vec<f64> = (0..nw).map(|i| w[i] + alpha * dw[i]).collect();
                    let et = match self.evaluate(&wt[..n]) {
                        Some(e) => e,
                        None => {
                            alpha *= 0.5;
                            first = false;
                            continue;
                        }
                    };
                    let theta_t = self.theta(&wt, &et.c);
                    let phi_t = self.barrier(&wt, et.f, mu);
                    match self.acceptance(theta, phi, gd, alpha, theta_t, phi_t, theta_max, theta_min, &filter) {
                        Some(f_type) => {
                            if !f_type {
                                filter.add(theta, phi);
                            }
                            accepted = Some((wt, None, alpha, et));
                            break;
                        }
                        None => {}
                    }
                    if first && theta_t >= theta && o.max_soc > 0 {
                        if let Some((wt, dws, a, et, f_type)) =
                            self.second_order_correction(&w, &rw, &rc, &d, alpha, &et, &wt, theta, phi, gd, theta_max, theta_min, &filter, tau, mu)
                        {
                            if !f_type {
                                filter.add(theta, phi);
                            }
                            accepted = Some((wt, Some(dws), a, et));
                            break;
                        }
                    }
                    first = false;
                    alpha *= 0.5;
                }
            }

            match accepted {
                Some((wt, soc, alpha, et)) => {
                    let (dzl, dzu, alpha_z) = match &soc {
                        None => (dzl, dzu, alpha_z),
                        Some(ds) => {
                            let (a, b) = self.bound_dual_steps(&w, &zl, &zu, ds, mu);
                            let az = self
                                .max_dual_step(&zl, &a, &self.has_lo, tau)
                                .min(self.max_dual_step(&zu, &b, &self.has_hi, tau));
                            (a, b, az)
                        }
                    };
                    let dws = soc.as_ref().unwrap_or(&dw);
                    let step_norm = (0..n).fold(0.0f64, |a, i| a.max((alpha * dws[i]).abs()));
                    for i in 0..self.m {
                        y[i] += alpha * dy[i];
                    }
                    for i in 0..nw {
                        zl[i] += alpha_z * dzl[i];
                        zu[i] += alpha_z * dzu[i];
                    }
                    w = wt;
                    ev = et;
                    self.safeguard_duals(&w, &mut zl, &mut zu, mu);
                    last.step_norm = step_norm;
                    last.alpha = alpha;
                    last.regularization = dw_reg;
                    last.restoration = false;
                }
                None => {
                    filter.add(theta, phi);
                    match self.restoration(&mut w, &mut zl, &mut zu, &mut ev, mu, tau, &filter) {
                        Some(step_norm) => {
                            y = self.least_squares_y(&ev, &zl, &zu);
                            last.step_norm = step_norm;
                            last.alpha = 0.0;
                            last.regularization = 0.0;
                            last.restoration = true;
                        }
                        None => return Ok(self.result(IpmStatus::Infeasible, &w, &y, &zl, &zu, ev.f, (primal, dual, compl), iter)),
                    }
                }
            }
        }
        unreachable!("loop returns at max_iter")
    }

    #[allow(clippy::too_many_arguments)]
    fn result(&self, status: IpmStatus, w: &[f64], y: &[f64], zl: &[f64], zu: &[f64], f: f64, errs: (f64, f64, f64), iter: usize) -> IpmResult {
        let n = self.n;
        let x = (0..n).map(|i| w[i].max(self.p.x_lower[i]).min(self.p.x_upper[i])).collect();
        IpmResult {
            status,
            x,
            multipliers: Multipliers {
                y: y.to_vec(),
                z_lower: zl[..n].to_vec(),
                z_upper: zu[..n].to_vec(),
            },
            objective: f,
            primal_inf: errs.0,
            dual_inf: errs.1,
            compl_inf: errs.2,
            iterations: iter,
        }
    }

    /// `Some(true)` for an f-type accept (no filter update), `Some(false)`
    /// for an h-type accept, `None` to reject.
    #[allow(clippy::too_many_arguments)]
    fn acceptance(
        &self,
        theta: f64,
        phi: f64,
        gd: f64,
        alpha: f64,
        theta_t: f64,
        phi_t: f64,
        theta_max: f64,
        theta_min: f64,
        filter: &Filter,
    ) -> Option<bool> {
        if theta_t > theta_max || !filter.acceptable(theta_t, phi_t) {
            return None;
        }
        let switching = gd < 0.0 && alpha * (-gd).powf(S_PHI) > DELTA_SWITCH * theta.powf(S_THETA);
        if switching && theta <= theta_min {
            let tol = 10.0 * f64::EPSILON * phi.abs();
            if phi_t - phi - ETA_PHI * alpha * gd <= tol {
                return Some(true);
            }
            return None;
        }
        if theta_t <= (1.0 - GAMMA_THETA) * theta || phi_t <= phi - GAMMA_PHI * theta {
            Some(false)
        } else {
            None
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn second_order_correction(
        &self,
        w: &[f64],
        rw: &[f64],
        rc: &[f64],
        d: &[f64],
        alpha: f64,
        first_eval: &Eval,
        first_trial: &[f64],
        theta: f64,
        phi: f64,
        gd: f64,
        theta_max: f64,
        theta_min: f64,
        filter: &Filter,
        tau: f64,
        mu: f64,
    ) -> Option<(Vec<f64>, Vec<f64>, f64, Eval, bool)> {
        let n = self.n;
        let mut c_soc: Vec<f64> = rc.to_vec();
        let mut rc_trial = self.residual_c(first_trial, &first_eval.c);
        let mut theta_old = theta;
        let mut theta_trial = self.theta(first_trial, &first_eval.c);
        let mut a_soc = alpha;
        for p in 0..self.o.max_soc {
            if p > 0 && theta_trial > KAPPA_SOC * theta_old {
                return None;
            }
            for i in 0..self.m {
                c_soc[i] = a_soc * c_soc[i] + rc_trial[i];
            }
            let (dws, _) = self.direction(rw, &c_soc, d);
            if !all_finite(&dws) {
                return None;
            }
            a_soc = self.max_primal_step(w, &dws, tau);
            let wt: Vec<f64> = (0..self.nw).map(|i| w[i] + a_soc * dws[i]).collect();
            let et = self.evaluate(&wt[..n])?;
            let theta_t = self.theta(&wt, &et.c);
            let phi_t = self.barrier(&wt, et.f, mu);
            if let Some(f_type) = self.acceptance(theta, phi, gd, alpha, theta_t, phi_t, theta_max, theta_min, filter) {
                return Some((wt, dws, a_soc, et, f_type));
            }
            theta_old = theta_trial;
            theta_trial = theta_t;
            rc_trial = self.residual_c(&wt, &et.c);
        }
        None
    }

    /// Gauss-Newton feasibility iterations. Returns the last step norm once
    /// the constraint violation has dropped enough and the point is
    /// acceptable to the filter.
    #[allow(clippy::too_many_arguments)]
    fn restoration(
        &mut self,
        w: &mut Vec<f64>,
        zl: &mut Vec<f64>,
        zu: &mut Vec<f64>,
        ev: &mut Eval,
        mu: f64,
        tau: f64,
        filter: &Filter,
    ) -> Option<f64> {
        let n = self.n;
        let theta_start = self.theta(w, &ev.c);
        log::debug!("restoration phase from theta={theta_start:.3e}");
        let mut zeta = mu.sqrt().max(1e-6);
        for _ in 0..self.o.max_restoration_iter {
            let theta = self.theta(w, &ev.c);
            let sigma = self.sigma(w, zl, zu);
            let (_, d) = self.factor_with_correction(None, &ev.jac, &sigma, mu, zeta)?;
            let rc = self.residual_c(w, &ev.c);
            // barrier centering only, no objective
            let zero_grad = vec![0.0; n];
            let rw = self.barrier_gradient(w, &zero_grad, mu);
            let (dw, _) = self.direction(&rw, &rc, &d);
            if !all_finite(&dw) {
                return None;
            }
            let amax = self.max_primal_step(w, &dw, tau);
            let mut alpha = amax;
            let mut next = None;
            while alpha > 1e-4 * amax {
                let wt: Vec<f64> = (0..self.nw).map(|i| w[i] + alpha * dw[i]).collect();
                if let Some(et) = self.evaluate(&wt[..n]) {
                    let tt = self.theta(&wt, &et.c);
                    if tt <= (1.0 - 1e-4 * alpha) * theta {
                        next = Some((wt, et));
                        break;
                    }
                }
                alpha *= 0.5;
            }
            let (wt, et) = match next {
                Some(v) => {
                    zeta = (zeta * 0.1).max(mu.sqrt().max(1e-6));
                    v
                }
                None => {
                    // shorter, better-conditioned Gauss-Newton steps
                    zeta *= 10.0;
                    if zeta > 1e10 {
                        return None;
                    }
                    continue;
                }
            };
            let (dzl, dzu) = self.bound_dual_steps(w, zl, zu, &dw, mu);
            let az = self
                .max_dual_step(zl, &dzl, &self.has_lo, tau)
                .min(self.max_dual_step(zu, &dzu, &self.has_hi, tau));
            for i in 0..self.nw {
                zl[i] += az * dzl[i];
                zu[i] += az * dzu[i];
            }
            let step_norm = (0..n).fold(0.0f64, |a, i| a.max((alpha * dw[i]).abs()));
            *w = wt;
            *ev = et;
            self.safeguard_duals(w, zl, zu, mu);
            let tt = self.theta(w, &ev.c);
            let phi = self.barrier(w, ev.f, mu);
            if (tt <= 0.9 * theta_start && filter.acceptable(tt, phi)) || tt <= 1e-2 * self.o.constr_viol_tol {
                return Some(step_norm);
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::nlp::problem::test_functions::*;
    use crate::nlp::problem::{BlockFunction, ConstraintBlock, QuadraticTerm};

    fn quiet() -> impl FnMut(&IterationRecord) {
        |_r: &IterationRecord| {}
    }

    /// Hock–Schittkowski 71 with a quadratic-free objective rewritten as a
    /// constraint: min x0 x3 (x0+x1+x2) + x2, optimum 17.014017.
    #[test]
    fn hs071() {
        let obj = Closure {
            rows: 1,
            nl: 5,
            f: |x: &[f64], o: &mut [f64]| o[0] = x[0] * x[3] * (x[0] + x[1] + x[2]) + x[2] - x[4],
            j: |x: &[f64], o: &mut [f64]| {
                o[0] = x[3] * (2.0 * x[0] + x[1] + x[2]);
                o[1] = x[0] * x[3];
                o[2] = x[0] * x[3] + 1.0;
                o[3] = x[0] * (x[0] + x[1] + x[2]);
                o[4] = -1.0;
            },
        };
        let prod = Closure {
            rows: 1,
            nl: 4,
            f: |x: &[f64], o: &mut [f64]| o[0] = x[0] * x[1] * x[2] * x[3],
            j: |x: &[f64], o: &mut [f64]| {
                o[0] = x[1] * x[2] * x[3];
                o[1] = x[0] * x[2] * x[3];
                o[2] = x[0] * x[1] * x[3];
                o[3] = x[0] * x[1] * x[2];
            },
        };
        let sq = Closure {
            rows: 1,
            nl: 4,
            f: |x: &[f64], o: &mut [f64]| o[0] = x.iter().map(|v| v * v).sum(),
            j: |x: &[f64], o: &mut [f64]| {
                for i in 0..4 {
                    o[i] = 2.0 * x[i];
                }
            },
        };
        let blocks = vec![
            ConstraintBlock::equality(ConstraintClass::Other, "obj", vec![0, 1, 2, 3, 4], Arc::new(obj)),
            ConstraintBlock::ranged(ConstraintClass::Other, "prod", vec![0, 1, 2, 3], Arc::new(prod), vec![25.0], vec![f64::INFINITY]),
            ConstraintBlock::equality(ConstraintClass::Other, "sq", vec![0, 1, 2, 3], Arc::new(sq)),
        ];
        let mut blocks = blocks;
        blocks[2].lower = vec![40.0];
        blocks[2].upper = vec![40.0];
        let inf = f64::INFINITY;
        let p = NlpProblem::new(
            vec![1.0, 1.0, 1.0, 1.0, -inf],
            vec![5.0, 5.0, 5.0, 5.0, inf],
            vec![0.0, 0.0, 0.0, 0.0, 1.0],
            vec![],
            blocks,
            vec![0; 5],
        );
        let r = solve(&p, &[1.0, 5.0, 5.0, 1.0, 16.0], None, &IpmOptions::default(), &mut quiet()).unwrap();
        assert_eq!(r.status, IpmStatus::Converged);
        assert!((r.objective - 17.0140173).abs() < 1e-6, "{}", r.objective);
        let expect = [1.0, 4.7429994, 3.8211503, 1.3794082];
        for i in 0..4 {
            assert!((r.x[i] - expect[i]).abs() < 1e-6, "{:?}", r.x);
        }
    }

    /// Convex QP with a known solution: min ½‖x‖² s.t. x0 + x1 = 1.
    #[test]
    fn equality_qp() {
        let blocks = vec![ConstraintBlock::equality(
            ConstraintClass::Other,
            "sum",
            vec![0, 1],
            Arc::new(Affine { a: vec![1.0, 1.0], b: vec![-1.0] }),
        )];
        let inf = f64::INFINITY;
        let p = NlpProblem::new(
            vec![-inf; 2],
            vec![inf; 2],
            vec![0.0; 2],
            vec![QuadraticTerm { vars: vec![0, 1], hessian: vec![1.0, 0.0, 0.0, 1.0] }],
            blocks,
            vec![0, 1],
        );
        let r = solve(&p, &[3.0, -7.0], None, &IpmOptions::default(), &mut quiet()).unwrap();
        assert_eq!(r.status, IpmStatus::Converged);
        assert!((r.x[0] - 0.5).abs() < 1e-9 && (r.x[1] - 0.5).abs() < 1e-9, "{:?} {:?}", r.x, r);
        assert!((r.multipliers.y[0] + 0.5).abs() < 1e-7);
    }

    /// Active bound: min −x0 − x1 s.t. x0² + x1² ≤ 1, x0 ≤ 0.5.
    #[test]
    fn active_bound_and_inequality() {
        let circle = Closure {
            rows: 1,
            nl: 2,
            f: |x: &[f64], o: &mut [f64]| o[0] = x[0] * x[0] + x[1] * x[1],
            j: |x: &[f64], o: &mut [f64]| {
                o[0] = 2.0 * x[0];
                o[1] = 2.0 * x[1];
            },
        };
        let blocks = vec![ConstraintBlock::ranged(
            ConstraintClass::Other,
            "circle",
            vec![0, 1],
            Arc::new(circle),
            vec![f64::NEG_INFINITY],
            vec![1.0],
        )];
        let p = NlpProblem::new(
            vec![-10.0, -10.0],
            vec![0.5, 10.0],
            vec![-1.0, -1.0],
            vec![],
            blocks,
            vec![0, 0],
        );
        let r = solve(&p, &[0.0, 0.0], None, &IpmOptions::default(), &mut quiet()).unwrap();
        assert_eq!(r.status, IpmStatus::Converged);
        assert!((r.x[0] - 0.5).abs() < 1e-7);
        assert!((r.x[1] - 0.75f64.sqrt()).abs() < 1e-7);
    }

    /// Infeasible: x0 = 1 and x0 = 2.
    #[test]
    fn detects_infeasibility() {
        let mk = |b: f64| -> Arc<dyn BlockFunction> { Arc::new(Affine { a: vec![1.0], b: vec![-b] }) };
        let blocks = vec![
            ConstraintBlock::equality(ConstraintClass::Other, "a", vec![0], mk(1.0)),
            ConstraintBlock::equality(ConstraintClass::Other, "b", vec![0], mk(2.0)),
        ];
        let p = NlpProblem::new(vec![-5.0], vec![5.0], vec![1.0], vec![], blocks, vec![0]);
        let opts = IpmOptions {
            max_iter: 200,
            ..IpmOptions::default()
        };
        let r = solve(&p, &[0.0], None, &opts, &mut quiet()).unwrap();
        assert_ne!(r.status, IpmStatus::Converged);
        assert_ne!(r.status, IpmStatus::Acceptable);
    }

    #[test]
    fn redundant_equalities_are_tolerated() {
        // the same row twice, consistent
        let mk = || -> Arc<dyn BlockFunction> { Arc::new(Affine { a: vec![1.0, 1.0], b: vec![-2.0] }) };
        let blocks = vec![
            ConstraintBlock::equality(ConstraintClass::Other, "a", vec![0, 1], mk()),
            ConstraintBlock::equality(ConstraintClass::Other, "b", vec![0, 1], mk()),
        ];
        let p = NlpProblem::new(vec![0.0, 0.0], vec![5.0, 5.0], vec![1.0, 2.0], vec![], blocks, vec![0, 0]);
        let r = solve(&p, &[1.0, 1.0], None, &IpmOptions::default(), &mut quiet()).unwrap();
        assert!(matches!(r.status, IpmStatus::Converged | IpmStatus::Acceptable), "{:?}", r.status);
        assert!((r.x[0] - 2.0).abs() < 1e-6 && r.x[1].abs() < 1e-6);
    }
}
