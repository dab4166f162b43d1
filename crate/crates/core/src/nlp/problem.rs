//! Block-structured nonlinear programs.
//!
//! A problem is a list of small dense constraint blocks, each a function of
//! a handful of decision variables. Sparsity follows from the blocks: the
//! declared Jacobian pattern of a block is dense over its own variables, so
//! it always covers the true nonzeros.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Which family a constraint row belongs to. Used for reporting and for
/// retargeting the complementarity rows between homotopy stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConstraintClass {
    Dynamics,
    QuaternionNorm,
    Initial,
    Progress,
    Complementarity,
    Collision,
    ActuatorRate,
    Attitude,
    Other,
}

impl ConstraintClass {
    pub const ALL: [ConstraintClass; 9] = [
        ConstraintClass::Dynamics,
        ConstraintClass::QuaternionNorm,
        ConstraintClass::Initial,
        ConstraintClass::Progress,
        ConstraintClass::Complementarity,
        ConstraintClass::Collision,
        ConstraintClass::ActuatorRate,
        ConstraintClass::Attitude,
        ConstraintClass::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ConstraintClass::Dynamics => "dynamics",
            ConstraintClass::QuaternionNorm => "quaternion_norm",
            ConstraintClass::Initial => "initial",
            ConstraintClass::Progress => "progress",
            ConstraintClass::Complementarity => "complementarity",
            ConstraintClass::Collision => "collision",
            ConstraintClass::ActuatorRate => "actuator_rate",
            ConstraintClass::Attitude => "attitude",
            ConstraintClass::Other => "other",
        }
    }
}

impl fmt::Display for ConstraintClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A vector-valued function of a few local variables.
///
/// Only the first [`BlockFunction::nonlinear_vars`] locals may appear
/// nonlinearly; the rest must enter additively with constant coefficients,
/// so the block's curvature lives in that leading square.
pub trait BlockFunction: Send + Sync {
    fn rows(&self) -> usize;

    fn eval(&self, x: &[f64], out: &mut [f64]);

    /// Dense row-major Jacobian, `rows × x.len()`.
    fn jacobian(&self, x: &[f64], out: &mut [f64]);

    fn nonlinear_vars(&self) -> usize;

    /// Writes `Σᵢ yᵢ ∇²cᵢ` over the leading nonlinear locals (dense,
    /// row-major, `nl × nl`) and returns true; returning false asks the
    /// caller for a finite-difference estimate instead.
    fn hessian(&self, _x: &[f64], _y: &[f64], _out: &mut [f64]) -> bool {
        false
    }
}

/// Constraint rows `lower ≤ c(x[vars]) ≤ upper`.
#[derive(Clone)]
pub struct ConstraintBlock {
    pub class: ConstraintClass,
    pub label: String,
    pub vars: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub func: Arc<dyn BlockFunction>,
}

impl fmt::Debug for ConstraintBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstraintBlock")
            .field("class", &self.class)
            .field("label", &self.label)
            .field("vars", &self.vars)
            .finish()
    }
}

impl ConstraintBlock {
    pub fn equality(class: ConstraintClass, label: impl Into<String>, vars: Vec<usize>, func: Arc<dyn BlockFunction>) -> Self {
        let rows = func.rows();
        Self::ranged(class, label, vars, func, vec![0.0; rows], vec![0.0; rows])
    }

    pub fn ranged(
        class: ConstraintClass,
        label: impl Into<String>,
        vars: Vec<usize>,
        func: Arc<dyn BlockFunction>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Self {
        assert_eq!(lower.len(), func.rows());
        assert_eq!(upper.len(), func.rows());
        assert!(func.nonlinear_vars() <= vars.len());
        Self {
            class,
            label: label.into(),
            vars,
            lower,
            upper,
            func,
        }
    }

    pub fn rows(&self) -> usize {
        self.lower.len()
    }

    fn gather(&self, x: &[f64]) -> Vec<f64> {
        self.vars.iter().map(|&v| x[v]).collect()
    }
}

/// `½ xₗᵀ H xₗ` over a few variables.
#[derive(Debug, Clone)]
pub struct QuadraticTerm {
    pub vars: Vec<usize>,
    /// Dense symmetric, row-major.
    pub hessian: Vec<f64>,
}

/// `min cᵀx + Σ quadratic terms` subject to blocks and variable bounds.
#[derive(Debug, Clone)]
pub struct NlpProblem {
    pub x_lower: Vec<f64>,
    pub x_upper: Vec<f64>,
    pub linear_objective: Vec<f64>,
    pub quadratic_objective: Vec<QuadraticTerm>,
    pub blocks: Vec<ConstraintBlock>,
    /// Elimination hint: variables are ordered by stage in the KKT
    /// factorization. Problems with a time axis put the node index here.
    pub stage: Vec<usize>,
    row_offsets: Vec<usize>,
}

/// Jacobian entries in block order, with their global coordinates.
#[derive(Debug, Clone)]
pub struct SparsityPattern {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

impl NlpProblem {
    pub fn new(
        x_lower: Vec<f64>,
        x_upper: Vec<f64>,
        linear_objective: Vec<f64>,
        quadratic_objective: Vec<QuadraticTerm>,
        blocks: Vec<ConstraintBlock>,
        stage: Vec<usize>,
    ) -> Self {
        let n = x_lower.len();
        assert_eq!(x_upper.len(), n);
        assert_eq!(linear_objective.len(), n);
        assert_eq!(stage.len(), n);
        let mut row_offsets = Vec::with_capacity(blocks.len() + 1);
        let mut off = 0;
        for b in &blocks {
            assert!(b.vars.iter().all(|&v| v < n), "block {} references unknown variable", b.label);
            row_offsets.push(off);
            off += b.rows();
        }
        row_offsets.push(off);
        Self {
            x_lower,
            x_upper,
            linear_objective,
            quadratic_objective,
            blocks,
            stage,
            row_offsets,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.x_lower.len()
    }

    pub fn num_constraints(&self) -> usize {
        *self.row_offsets.last().unwrap()
    }

    pub fn row_offset(&self, block: usize) -> usize {
        self.row_offsets[block]
    }

    pub fn constraint_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = Vec::with_capacity(self.num_constraints());
        let mut hi = Vec::with_capacity(self.num_constraints());
        for b in &self.blocks {
            lo.extend_from_slice(&b.lower);
            hi.extend_from_slice(&b.upper);
        }
        (lo, hi)
    }

    /// Per-row constraint class.
    pub fn row_classes(&self) -> Vec<ConstraintClass> {
        self.blocks
            .iter()
            .flat_map(|b| std::iter::repeat(b.class).take(b.rows()))
            .collect()
    }

    /// Block index owning global row `row`.
    pub fn block_of_row(&self, row: usize) -> usize {
        match self.row_offsets.binary_search(&row) {
            Ok(mut i) => {
                // skip empty blocks sharing the offset
                while self.row_offsets[i + 1] == row {
                    i += 1;
                }
                i
            }
            Err(i) => i - 1,
        }
    }

    /// Sets the bounds of every row in blocks of `class`.
    pub fn set_class_bounds(&mut self, class: ConstraintClass, lower: f64, upper: f64) {
        for b in self.blocks.iter_mut().filter(|b| b.class == class) {
            b.lower.iter_mut().for_each(|v| *v = lower);
            b.upper.iter_mut().for_each(|v| *v = upper);
        }
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut f: f64 = self.linear_objective.iter().zip(x).map(|(c, v)| c * v).sum();
        for t in &self.quadratic_objective {
            let k = t.vars.len();
            for a in 0..k {
                for b in 0..k {
                    f += 0.5 * x[t.vars[a]] * t.hessian[a * k + b] * x[t.vars[b]];
                }
            }
        }
        f
    }

    pub fn objective_gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.linear_objective.clone();
        for t in &self.quadratic_objective {
            let k = t.vars.len();
            for a in 0..k {
                let mut s = 0.0;
                for b in 0..k {
                    s += t.hessian[a * k + b] * x[t.vars[b]];
                }
                g[t.vars[a]] += s;
            }
        }
        g
    }

    pub fn constraints(&self, x: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; self.num_constraints()];
        for (bi, b) in self.blocks.iter().enumerate() {
            let local = b.gather(x);
            let off = self.row_offsets[bi];
            b.func.eval(&local, &mut c[off..off + b.rows()]);
        }
        c
    }

    pub fn jacobian_structure(&self) -> SparsityPattern {
        let mut rows = Vec::new();
        let mut cols = Vec::new();
        for (bi, b) in self.blocks.iter().enumerate() {
            let off = self.row_offsets[bi];
            for r in 0..b.rows() {
                for &v in &b.vars {
                    rows.push(off + r);
                    cols.push(v);
                }
            }
        }
        SparsityPattern { rows, cols }
    }

    /// Values matching [`NlpProblem::jacobian_structure`].
    pub fn jacobian_values(&self, x: &[f64]) -> Vec<f64> {
        let nnz: usize = self.blocks.iter().map(|b| b.rows() * b.vars.len()).sum();
        let mut out = vec![0.0; nnz];
        let mut pos = 0;
        for b in &self.blocks {
            let local = b.gather(x);
            let len = b.rows() * b.vars.len();
            b.func.jacobian(&local, &mut out[pos..pos + len]);
            pos += len;
        }
        out
    }

    /// Lower-triangle Hessian pattern: per block the nonlinear square, then
    /// the quadratic objective terms. Entries may repeat.
    pub fn hessian_structure(&self) -> SparsityPattern {
        let mut rows = Vec::new();
        let mut cols = Vec::new();
        for b in &self.blocks {
            let nl = b.func.nonlinear_vars();
            for a in 0..nl {
                for c in 0..=a {
                    let (i, j) = (b.vars[a], b.vars[c]);
                    rows.push(i.max(j));
                    cols.push(i.min(j));
                }
            }
        }
        for t in &self.quadratic_objective {
            let k = t.vars.len();
            for a in 0..k {
                for c in 0..=a {
                    let (i, j) = (t.vars[a], t.vars[c]);
                    rows.push(i.max(j));
                    cols.push(i.min(j));
                }
            }
        }
        SparsityPattern { rows, cols }
    }

    /// Values of `σ∇²f + Σ yᵢ∇²cᵢ` matching [`NlpProblem::hessian_structure`].
    pub fn hessian_values(&self, x: &[f64], obj_factor: f64, y: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        for (bi, b) in self.blocks.iter().enumerate() {
            let nl = b.func.nonlinear_vars();
            if nl == 0 {
                continue;
            }
            let off = self.row_offsets[bi];
            let yb = &y[off..off + b.rows()];
            let local = b.gather(x);
            let mut h = vec![0.0; nl * nl];
            if yb.iter().all(|v| *v == 0.0) {
                // nothing to add
            } else if !b.func.hessian(&local, yb, &mut h) {
                fd_block_hessian(b.func.as_ref(), &local, yb, &mut h);
            }
            for a in 0..nl {
                for c in 0..=a {
                    out.push(0.5 * (h[a * nl + c] + h[c * nl + a]));
                }
            }
        }
        for t in &self.quadratic_objective {
            let k = t.vars.len();
            for a in 0..k {
                for c in 0..=a {
                    out.push(obj_factor * t.hessian[a * k + c]);
                }
            }
        }
        out
    }
}

/// Forward differences of `Jᵀy` over the nonlinear locals.
fn fd_block_hessian(func: &dyn BlockFunction, x: &[f64], y: &[f64], out: &mut [f64]) {
    let nv = x.len();
    let nl = func.nonlinear_vars();
    let rows = func.rows();
    let mut jac = vec![0.0; rows * nv];
    let mut xp = x.to_vec();
    let jty = |jac: &[f64], col: usize| -> f64 { (0..rows).map(|r| y[r] * jac[r * nv + col]).sum() };
    func.jacobian(x, &mut jac);
    let g0: Vec<f64> = (0..nl).map(|c| jty(&jac, c)).collect();
    for j in 0..nl {
        let h = 1e-7 * x[j].abs().max(1.0);
        xp[j] = x[j] + h;
        let h = xp[j] - x[j];
        func.jacobian(&xp, &mut jac);
        for c in 0..nl {
            out[c * nl + j] = (jty(&jac, c) - g0[c]) / h;
        }
        xp[j] = x[j];
    }
}
