//! Reduced KKT system `[H Jᵀ; J −D]` in skyline storage.
//!
//! Variables are sorted by their stage hint and each constraint row is
//! placed directly after the last variable it touches. For trajectory
//! problems this makes the envelope a band whose width is about one stage.

use super::problem::{NlpProblem, SparsityPattern};
use super::skyline::{Inertia, LdlFactor, SkylineMatrix};

pub(crate) struct KktSystem {
    n: usize,
    m: usize,
    var_pos: Vec<usize>,
    row_pos: Vec<usize>,
    mat: SkylineMatrix,
    jac_off: Vec<usize>,
    hess_off: Vec<usize>,
    static_primal: f64,
    static_dual: f64,
    factor: Option<LdlFactor>,
}

impl KktSystem {
    pub fn new(problem: &NlpProblem, jac: &SparsityPattern, hess: &SparsityPattern) -> Self {
        let n = problem.num_vars();
        let m = problem.num_constraints();
        let mut vars: Vec<usize> = (0..n).collect();
        vars.sort_by_key(|&v| (problem.stage[v], v));
        let mut var_rank = vec![0; n];
        for (r, &v) in vars.iter().enumerate() {
            var_rank[v] = r;
        }

        // rows_after[r] holds the blocks whose last variable has rank r
        let mut leading_blocks = Vec::new();
        let mut rows_after: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (bi, b) in problem.blocks.iter().enumerate() {
            match b.vars.iter().map(|&v| var_rank[v]).max() {
                Some(r) => rows_after[r].push(bi),
                None => leading_blocks.push(bi),
            }
        }

        let mut var_pos = vec![0; n];
        let mut row_pos = vec![0; m];
        let mut pos = 0;
        let place_block = |bi: usize, pos: &mut usize, row_pos: &mut Vec<usize>| {
            let off = problem.row_offset(bi);
            for r in 0..problem.blocks[bi].rows() {
                row_pos[off + r] = *pos;
                *pos += 1;
            }
        };
        for &bi in &leading_blocks {
            place_block(bi, &mut pos, &mut row_pos);
        }
        for (r, &v) in vars.iter().enumerate() {
            var_pos[v] = pos;
            pos += 1;
            for &bi in &rows_after[r] {
                place_block(bi, &mut pos, &mut row_pos);
            }
        }
        debug_assert_eq!(pos, n + m);

        let mut first: Vec<usize> = (0..n + m).collect();
        let mut touch = |a: usize, b: usize| {
            let (hi, lo) = if a > b { (a, b) } else { (b, a) };
            if lo < first[hi] {
                first[hi] = lo;
            }
        };
        for (&r, &c) in jac.rows.iter().zip(&jac.cols) {
            touch(row_pos[r], var_pos[c]);
        }
        for (&r, &c) in hess.rows.iter().zip(&hess.cols) {
            touch(var_pos[r], var_pos[c]);
        }
        let mat = SkylineMatrix::new(first);
        let jac_off = jac
            .rows
            .iter()
            .zip(&jac.cols)
            .map(|(&r, &c)| mat.offset(row_pos[r], var_pos[c]))
            .collect();
        let hess_off = hess
            .rows
            .iter()
            .zip(&hess.cols)
            .map(|(&r, &c)| mat.offset(var_pos[r], var_pos[c]))
            .collect();
        Self {
            n,
            m,
            var_pos,
            row_pos,
            mat,
            jac_off,
            hess_off,
            static_primal: 0.0,
            static_dual: 0.0,
            factor: None,
        }
    }

    pub fn stored(&self) -> usize {
        self.mat.stored()
    }

    /// `diag_x` is the primal diagonal without `static_primal`; `diag_c`
    /// holds the (negative) dual diagonal, which already includes
    /// `−static_dual`.
    pub fn assemble(
        &mut self,
        hess_vals: Option<&[f64]>,
        jac_vals: &[f64],
        diag_x: &[f64],
        diag_c: &[f64],
        static_primal: f64,
        static_dual: f64,
    ) {
        self.mat.clear();
        self.factor = None;
        self.static_primal = static_primal;
        self.static_dual = static_dual;
        if let Some(h) = hess_vals {
            for (&o, &v) in self.hess_off.iter().zip(h) {
                self.mat.add_at(o, v);
            }
        }
        for (&o, &v) in self.jac_off.iter().zip(jac_vals) {
            self.mat.add_at(o, v);
        }
        for i in 0..self.n {
            self.mat.add_diagonal(self.var_pos[i], diag_x[i] + static_primal);
        }
        for i in 0..self.m {
            self.mat.add_diagonal(self.row_pos[i], diag_c[i]);
        }
    }

    pub fn factorize(&mut self) -> Inertia {
        let f = self.mat.factor();
        let inertia = f.inertia(1e-300);
        self.factor = Some(f);
        inertia
    }

    pub fn inertia_is_correct(&self, inertia: Inertia) -> bool {
        inertia.positive == self.n && inertia.negative == self.m && inertia.zero == 0
    }

    /// Solves with the factored matrix and refines against the matrix
    /// without the static shifts.
    pub fn solve(&self, rhs_x: &[f64], rhs_c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let f = self.factor.as_ref().expect("factorize before solve");
        let dim = self.n + self.m;
        let mut b = vec![0.0; dim];
        for i in 0..self.n {
            b[self.var_pos[i]] = rhs_x[i];
        }
        for i in 0..self.m {
            b[self.row_pos[i]] = rhs_c[i];
        }
        let mut sol = b.clone();
        f.solve_in_place(&mut sol);

        let bnorm = b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut res = vec![0.0; dim];
        let mut best = self.residual(&b, &sol, &mut res);
        for _ in 0..8 {
            if best <= 1e-15 * (1.0 + bnorm) {
                break;
            }
            let mut corr = res.clone();
            f.solve_in_place(&mut corr);
            let trial: Vec<f64> = sol.iter().zip(&corr).map(|(s, c)| s + c).collect();
            let mut tres = vec![0.0; dim];
            let r = self.residual(&b, &trial, &mut tres);
            if !(r < 0.5 * best) {
                if r < best {
                    sol = trial;
                }
                break;
            }
            sol = trial;
            res = tres;
            best = r;
        }

        let dx = (0..self.n).map(|i| sol[self.var_pos[i]]).collect();
        let dy = (0..self.m).map(|i| sol[self.row_pos[i]]).collect();
        (dx, dy)
    }

    fn residual(&self, b: &[f64], x: &[f64], out: &mut [f64]) -> f64 {
        self.mat.mul_vec(x, out);
        for i in 0..self.n {
            let p = self.var_pos[i];
            out[p] -= self.static_primal * x[p];
        }
        for i in 0..self.m {
            let p = self.row_pos[i];
            out[p] += self.static_dual * x[p];
        }
        let mut worst = 0.0f64;
        for (o, bi) in out.iter_mut().zip(b) {
            *o = bi - *o;
            worst = worst.max(o.abs());
        }
        if worst.is_finite() {
            worst
        } else {
            f64::INFINITY
        }
    }
}
