//! Symmetric matrices stored by row envelope ("skyline") and their LDLᵀ
//! factorization without pivoting.
//!
//! Fill-in of an LDLᵀ factorization never leaves the envelope, so a good
//! ordering (banded, stage by stage) keeps both storage and work linear in
//! the number of stages. Quasidefinite KKT matrices `[H Aᵀ; A −D]` with
//! `H ≻ 0`, `D ≻ 0` factor stably in any order; the interior-point solver
//! relies on that and checks inertia from the pivot signs.

#[derive(Debug, Clone)]
pub(crate) struct SkylineMatrix {
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
}

impl SkylineMatrix {
    /// `first[i]` is the leftmost stored column of row `i` (`first[i] <= i`).
    pub fn new(first: Vec<usize>) -> Self {
        let mut start = Vec::with_capacity(first.len() + 1);
        let mut off = 0;
        for (i, &f) in first.iter().enumerate() {
            assert!(f <= i, "envelope start beyond diagonal in row {i}");
            start.push(off);
            off += i - f + 1;
        }
        start.push(off);
        Self {
            first,
            start,
            data: vec![0.0; off],
        }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    pub fn stored(&self) -> usize {
        self.data.len()
    }

    /// Storage offset of entry `(i, j)`; the pair is symmetrized.
    pub fn offset(&self, i: usize, j: usize) -> usize {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        debug_assert!(j >= self.first[i], "({i},{j}) outside envelope");
        self.start[i] + j - self.first[i]
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn add_at(&mut self, offset: usize, v: f64) {
        self.data[offset] += v;
    }

    #[cfg(test)]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let o = self.offset(i, j);
        self.data[o] += v;
    }

    pub fn add_diagonal(&mut self, i: usize, v: f64) {
        let o = self.start[i] + i - self.first[i];
        self.data[o] += v;
    }

    /// `y = A x` using the symmetric envelope.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.dim() {
            let f = self.first[i];
            let row = &self.data[self.start[i]..self.start[i + 1]];
            let (off, diag) = row.split_at(row.len() - 1);
            let mut acc = diag[0] * x[i];
            for (k, &a) in off.iter().enumerate() {
                let j = f + k;
                acc += a * x[j];
                y[j] += a * x[i];
            }
            y[i] += acc;
        }
    }

    pub fn factor(&self) -> LdlFactor {
        let n = self.dim();
        let mut l = self.data.clone();
        let mut d = vec![0.0; n];
        for i in 0..n {
            let fi = self.first[i];
            let si = self.start[i];
            // Row i holds t_ij = L_ij·D_j while it is being built.
            for j in fi..i {
                let fj = self.first[j];
                let k0 = fi.max(fj);
                let sj = self.start[j];
                let mut s = l[si + j - fi];
                if k0 < j {
                    let ti = &l[si + k0 - fi..si + j - fi];
                    let lj = &l[sj + k0 - fj..sj + j - fj];
                    s -= dot(ti, lj);
                }
                l[si + j - fi] = s;
            }
            let mut di = l[si + i - fi];
            for j in fi..i {
                let t = l[si + j - fi];
                let lij = t / d[j];
                di -= t * lij;
                l[si + j - fi] = lij;
            }
            l[si + i - fi] = 1.0;
            d[i] = di;
        }
        LdlFactor {
            first: self.first.clone(),
            start: self.start.clone(),
            l,
            d,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators; the fixed pairing keeps results reproducible.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..a.len() {
        s += a[k] * b[k];
    }
    s
}

#[derive(Debug, Clone)]
pub(crate) struct LdlFactor {
    first: Vec<usize>,
    start: Vec<usize>,
    l: Vec<f64>,
    d: Vec<f64>,
}

/// Counts of positive, negative and (numerically) zero pivots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

impl LdlFactor {
    pub fn inertia(&self, zero_tol: f64) -> Inertia {
        let mut out = Inertia {
            positive: 0,
            negative: 0,
            zero: 0,
        };
        for &d in &self.d {
            if !d.is_finite() || d.abs() <= zero_tol {
                out.zero += 1;
            } else if d > 0.0 {
                out.positive += 1;
            } else {
                out.negative += 1;
            }
        }
        out
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.d.len();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.l[self.start[i]..self.start[i] + i - fi];
            b[i] -= dot(row, &b[fi..i]);
        }
        for i in 0..n {
            b[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let xi = b[i];
            let row = &self.l[self.start[i]..self.start[i] + i - fi];
            for (k, &lik) in row.iter().enumerate() {
                b[fi + k] -= lik * xi;
            }
        }
    }
}
