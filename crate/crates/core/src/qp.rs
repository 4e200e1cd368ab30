//! Dense strictly convex QP solver (Goldfarb–Idnani dual active set).
//!
//! ```text
//!     minimize    1/2 x' G x + g' x
//!     subject to  c_i' x >= b_i,   i = 0..m
//! ```
//!
//! The method starts from the unconstrained minimizer and adds violated
//! constraints one at a time, dropping previously active ones when their
//! multiplier would turn negative. It keeps `J = L^-T Q` and the triangular
//! factor `R` of the active normals (`J' N = [R; 0]`) up to date with Givens
//! rotations, so every iteration costs `O(n^2)` after the initial Cholesky.

// Index loops mirror the textbook recurrences.
#![allow(clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("Hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("constraints are infeasible (constraint {0} cannot be satisfied)")]
    Infeasible(usize),
    #[error("active-set iteration limit {0} reached")]
    IterationLimit(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Inequality-constrained QP. Constraint rows are stored row-major.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    rows: Vec<f64>,
    lower: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// One multiplier per constraint, zero when inactive.
    pub multipliers: Vec<f64>,
    pub active: Vec<usize>,
    pub iterations: usize,
}

impl QpProblem {
    pub fn new(hessian: DMatrix<f64>, gradient: DVector<f64>) -> Result<Self, QpError> {
        if !hessian.is_square() || hessian.nrows() != gradient.len() {
            return Err(QpError::Dimension(format!(
                "hessian {}x{} with gradient of length {}",
                hessian.nrows(),
                hessian.ncols(),
                gradient.len()
            )));
        }
        Ok(Self {
            hessian,
            gradient,
            rows: Vec::new(),
            lower: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.lower.len()
    }

    /// Add `row' x >= lower`.
    pub fn push_constraint(&mut self, row: &[f64], lower: f64) {
        assert_eq!(row.len(), self.dim(), "constraint row length");
        self.rows.extend_from_slice(row);
        self.lower.push(lower);
    }

    /// Add `x[i] >= lower` as a row.
    pub fn push_lower_bound(&mut self, i: usize, lower: f64) {
        let n = self.dim();
        let start = self.rows.len();
        self.rows.resize(start + n, 0.0);
        self.rows[start + i] = 1.0;
        self.lower.push(lower);
    }

    /// Add `x[i] <= upper` as a row.
    pub fn push_upper_bound(&mut self, i: usize, upper: f64) {
        let n = self.dim();
        let start = self.rows.len();
        self.rows.resize(start + n, 0.0);
        self.rows[start + i] = -1.0;
        self.lower.push(-upper);
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.dim();
        &self.rows[i * n..(i + 1) * n]
    }

    pub fn lower(&self, i: usize) -> f64 {
        self.lower[i]
    }

    /// `row_i' x - lower_i`; negative when violated.
    pub fn slack(&self, i: usize, x: &[f64]) -> f64 {
        dot(self.row(i), x) - self.lower[i]
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.gradient.dot(x)
    }

    pub fn solve(&self) -> Result<QpSolution, QpError> {
        Solver::new(self)?.run()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Rotation `(c, s)` with `c a + s b = hypot(a, b)` and `-s a + c b = 0`.
fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    let h = a.hypot(b);
    if h == 0.0 {
        (1.0, 0.0, 0.0)
    } else {
        (a / h, b / h, h)
    }
}

struct Solver<'a> {
    qp: &'a QpProblem,
    n: usize,
    x: DVector<f64>,
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    active: Vec<usize>,
    u: Vec<f64>,
    is_active: Vec<bool>,
    row_norms: Vec<f64>,
}

const FEAS_TOL: f64 = 1e-11;
const DEPENDENCE_TOL: f64 = 1e-13;

impl<'a> Solver<'a> {
    fn new(qp: &'a QpProblem) -> Result<Self, QpError> {
        let n = qp.dim();
        let chol = qp
            .hessian
            .clone()
            .cholesky()
            .ok_or(QpError::NotPositiveDefinite)?;
        let l = chol.l();
        // J = L^-T, upper triangular.
        let l_inv = l
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .ok_or(QpError::NotPositiveDefinite)?;
        let j = l_inv.transpose();
        let x = -chol.solve(&qp.gradient);
        let m = qp.num_constraints();
        let row_norms = (0..m)
            .map(|i| {
                qp.row(i)
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt()
                    .max(1e-300)
            })
            .collect();
        Ok(Self {
            qp,
            n,
            x,
            j,
            r: DMatrix::zeros(n, n),
            active: Vec::with_capacity(n),
            u: Vec::with_capacity(n),
            is_active: vec![false; m],
            row_norms,
        })
    }

    fn q(&self) -> usize {
        self.active.len()
    }

    fn most_violated(&self) -> Option<usize> {
        let x = self.x.as_slice();
        let mut best = None;
        let mut worst = -FEAS_TOL;
        for i in 0..self.qp.num_constraints() {
            if self.is_active[i] {
                continue;
            }
            let s = self.qp.slack(i, x) / self.row_norms[i];
            let tol_scale = 1.0 + self.qp.lower(i).abs() / self.row_norms[i];
            if s < worst * tol_scale {
                worst = s / tol_scale;
                best = Some(i);
            }
        }
        best
    }

    /// `d = J' n`.
    fn project(&self, normal: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| dot(self.j.column(i).as_slice(), normal))
            .collect()
    }

    /// Solve `R[..q, ..q] r = d[..q]`.
    fn dual_direction(&self, d: &[f64]) -> Vec<f64> {
        let q = self.q();
        let mut r = vec![0.0; q];
        for i in (0..q).rev() {
            let mut acc = d[i];
            for k in i + 1..q {
                acc -= self.r[(i, k)] * r[k];
            }
            r[i] = acc / self.r[(i, i)];
        }
        r
    }

    fn primal_direction(&self, d: &[f64]) -> DVector<f64> {
        let mut z = DVector::zeros(self.n);
        for i in self.q()..self.n {
            if d[i] != 0.0 {
                z.axpy(d[i], &self.j.column(i), 1.0);
            }
        }
        z
    }

    fn rotate_j_columns(&mut self, a: usize, b: usize, c: f64, s: f64) {
        for row in 0..self.n {
            let ja = self.j[(row, a)];
            let jb = self.j[(row, b)];
            self.j[(row, a)] = c * ja + s * jb;
            self.j[(row, b)] = -s * ja + c * jb;
        }
    }

    fn add_constraint(&mut self, p: usize, mut d: Vec<f64>) {
        let q = self.q();
        for i in (q + 1..self.n).rev() {
            if d[i] == 0.0 {
                continue;
            }
            let (c, s, h) = givens(d[i - 1], d[i]);
            d[i - 1] = h;
            d[i] = 0.0;
            self.rotate_j_columns(i - 1, i, c, s);
        }
        for i in 0..=q {
            self.r[(i, q)] = d[i];
        }
        self.active.push(p);
        self.is_active[p] = true;
    }

    fn drop_constraint(&mut self, k: usize) {
        let q = self.q();
        let removed = self.active.remove(k);
        self.is_active[removed] = false;
        self.u.remove(k);
        for col in k..q - 1 {
            for row in 0..=col + 1 {
                self.r[(row, col)] = self.r[(row, col + 1)];
            }
        }
        for row in 0..q {
            self.r[(row, q - 1)] = 0.0;
        }
        for col in k..q - 1 {
            let (c, s, h) = givens(self.r[(col, col)], self.r[(col + 1, col)]);
            self.r[(col, col)] = h;
            self.r[(col + 1, col)] = 0.0;
            for l in col + 1..q - 1 {
                let a = self.r[(col, l)];
                let b = self.r[(col + 1, l)];
                self.r[(col, l)] = c * a + s * b;
                self.r[(col + 1, l)] = -s * a + c * b;
            }
            self.rotate_j_columns(col, col + 1, c, s);
        }
    }

    fn run(mut self) -> Result<QpSolution, QpError> {
        let m = self.qp.num_constraints();
        let max_iter = 10 * (self.n + m) + 100;
        let mut iterations = 0;
        while let Some(p) = self.most_violated() {
            let normal = self.qp.row(p).to_vec();
            // Multiplier of the constraint being added, carried through the
            // partial steps below.
            let mut u_p = 0.0;
            loop {
                iterations += 1;
                if iterations > max_iter {
                    return Err(QpError::IterationLimit(max_iter));
                }
                let d = self.project(&normal);
                let q = self.q();
                let z = self.primal_direction(&d);
                let r = self.dual_direction(&d);

                let d_norm2: f64 = d.iter().map(|v| v * v).sum();
                let d2_norm2: f64 = d[q..].iter().map(|v| v * v).sum();
                let full_step = if d2_norm2 <= DEPENDENCE_TOL * d_norm2 {
                    None
                } else {
                    let s_p = self.qp.slack(p, self.x.as_slice());
                    Some(-s_p / z.dot(&DVector::from_column_slice(&normal)))
                };

                let mut partial: Option<(f64, usize)> = None;
                for (idx, (&rj, &uj)) in r.iter().zip(&self.u).enumerate() {
                    if rj > 0.0 {
                        let t = uj / rj;
                        if partial.is_none_or(|(best, _)| t < best) {
                            partial = Some((t, idx));
                        }
                    }
                }

                match (full_step, partial) {
                    (None, None) => return Err(QpError::Infeasible(p)),
                    (None, Some((t, k))) => {
                        for (uj, rj) in self.u.iter_mut().zip(&r) {
                            *uj -= t * rj;
                        }
                        u_p += t;
                        self.drop_constraint(k);
                    }
                    (Some(t2), partial) => {
                        let (t, drop) = match partial {
                            Some((t1, k)) if t1 < t2 => (t1, Some(k)),
                            _ => (t2, None),
                        };
                        self.x.axpy(t, &z, 1.0);
                        for (uj, rj) in self.u.iter_mut().zip(&r) {
                            *uj -= t * rj;
                        }
                        u_p += t;
                        match drop {
                            Some(k) => self.drop_constraint(k),
                            None => {
                                self.add_constraint(p, d);
                                self.u.push(u_p);
                                break;
                            }
                        }
                    }
                }
            }
        }

        let mut multipliers = vec![0.0; m];
        for (&i, &ui) in self.active.iter().zip(&self.u) {
            multipliers[i] = ui;
        }
        Ok(QpSolution {
            x: self.x,
            multipliers,
            active: self.active,
            iterations,
        })
    }
}
