//! Small semidefinite-programming layer: affine matrix expressions over a
//! vector of scalar decision variables, equality and PSD constraints, a
//! linear objective, and a backend trait with a Clarabel implementation.

use std::fmt;
use std::ops::{Add, Neg, Sub};

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
    SupportedConeT::{PSDTriangleConeT, ZeroConeT},
};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;

/// `sum_i c_i x_i + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn var(i: usize) -> Self {
        Self { terms: vec![(i, 1.0)], constant: 0.0 }
    }

    fn add_scaled(&mut self, other: &LinExpr, c: f64) {
        if c == 0.0 {
            return;
        }
        self.terms.extend(other.terms.iter().map(|&(i, v)| (i, v * c)));
        self.constant += other.constant * c;
    }

    /// Sorts by variable index, merging duplicates and dropping zeros.
    fn compact(&mut self) {
        self.terms.sort_by_key(|t| t.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for &(i, v) in &self.terms {
            match out.last_mut() {
                Some(last) if last.0 == i => last.1 += v,
                _ => out.push((i, v)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        self.terms = out;
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, v)| v * x[i]).sum::<f64>()
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = LinExpr::default();
        out.add_scaled(self, c);
        out
    }
}

impl Add for LinExpr {
    type Output = LinExpr;
    fn add(mut self, rhs: LinExpr) -> LinExpr {
        self.add_scaled(&rhs, 1.0);
        self.compact();
        self
    }
}

/// Dense matrix of affine expressions, stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MatExpr {
    rows: usize,
    cols: usize,
    entries: Vec<LinExpr>,
}

impl MatExpr {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, entries: vec![LinExpr::default(); rows * cols] }
    }

    pub fn from_constant(m: &DMatrix<f64>) -> Self {
        let entries = m.iter().map(|&v| LinExpr::constant(v)).collect();
        Self { rows: m.nrows(), cols: m.ncols(), entries }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_constant(&DMatrix::identity(n, n))
    }

    /// `e I_n`.
    pub fn scaled_identity(e: &LinExpr, n: usize) -> Self {
        let mut out = Self::zeros(n, n);
        for i in 0..n {
            out.entries[i * n + i] = e.clone();
        }
        out
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> &LinExpr {
        &self.entries[j * self.rows + i]
    }

    fn get_mut(&mut self, i: usize, j: usize) -> &mut LinExpr {
        &mut self.entries[j * self.rows + i]
    }

    /// `A * self`.
    pub fn left_mul(&self, a: &DMatrix<f64>) -> Self {
        assert_eq!(a.ncols(), self.rows, "left factor shape");
        let mut out = Self::zeros(a.nrows(), self.cols);
        for j in 0..self.cols {
            for i in 0..a.nrows() {
                let e = out.get_mut(i, j);
                for k in 0..self.rows {
                    e.add_scaled(&self.entries[j * self.rows + k], a[(i, k)]);
                }
                e.compact();
            }
        }
        out
    }

    /// `self * B`.
    pub fn right_mul(&self, b: &DMatrix<f64>) -> Self {
        assert_eq!(b.nrows(), self.cols, "right factor shape");
        let mut out = Self::zeros(self.rows, b.ncols());
        for j in 0..b.ncols() {
            for i in 0..self.rows {
                let e = out.get_mut(i, j);
                for k in 0..self.cols {
                    e.add_scaled(&self.entries[k * self.rows + i], b[(k, j)]);
                }
                e.compact();
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for j in 0..self.cols {
            for i in 0..self.rows {
                *out.get_mut(j, i) = self.get(i, j).clone();
            }
        }
        out
    }

    pub fn scale(&self, c: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, entries: self.entries.iter().map(|e| e.scaled(c)).collect() }
    }

    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        assert!(r0 + rows <= self.rows && c0 + cols <= self.cols, "block out of range");
        let mut out = Self::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                *out.get_mut(i, j) = self.get(r0 + i, c0 + j).clone();
            }
        }
        out
    }

    pub fn rows_range(&self, r0: usize, rows: usize) -> Self {
        self.block(r0, 0, rows, self.cols)
    }

    pub fn columns_range(&self, c0: usize, cols: usize) -> Self {
        self.block(0, c0, self.rows, cols)
    }

    pub fn vstack(parts: &[&MatExpr]) -> Self {
        let cols = parts.first().map_or(0, |p| p.cols);
        let rows = parts.iter().map(|p| p.rows).sum();
        let mut out = Self::zeros(rows, cols);
        let mut r0 = 0;
        for p in parts {
            assert_eq!(p.cols, cols, "vstack column mismatch");
            for j in 0..cols {
                for i in 0..p.rows {
                    *out.get_mut(r0 + i, j) = p.get(i, j).clone();
                }
            }
            r0 += p.rows;
        }
        out
    }

    pub fn hstack(parts: &[&MatExpr]) -> Self {
        let rows = parts.first().map_or(0, |p| p.rows);
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut out = Self::zeros(rows, cols);
        let mut c0 = 0;
        for p in parts {
            assert_eq!(p.rows, rows, "hstack row mismatch");
            for j in 0..p.cols {
                for i in 0..rows {
                    *out.get_mut(i, c0 + j) = p.get(i, j).clone();
                }
            }
            c0 += p.cols;
        }
        out
    }

    pub fn trace(&self) -> LinExpr {
        let mut t = LinExpr::default();
        for i in 0..self.rows.min(self.cols) {
            t.add_scaled(self.get(i, i), 1.0);
        }
        t.compact();
        t
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j).eval(x))
    }

    fn zip_with(&self, other: &MatExpr, c: f64) -> Self {
        assert_eq!(self.shape(), other.shape(), "elementwise shape mismatch");
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| {
                let mut e = a.clone();
                e.add_scaled(b, c);
                e.compact();
                e
            })
            .collect();
        Self { rows: self.rows, cols: self.cols, entries }
    }
}

impl Add for &MatExpr {
    type Output = MatExpr;
    fn add(self, rhs: &MatExpr) -> MatExpr {
        self.zip_with(rhs, 1.0)
    }
}

impl Sub for &MatExpr {
    type Output = MatExpr;
    fn sub(self, rhs: &MatExpr) -> MatExpr {
        self.zip_with(rhs, -1.0)
    }
}

impl Neg for &MatExpr {
    type Output = MatExpr;
    fn neg(self) -> MatExpr {
        self.scale(-1.0)
    }
}

/// Linear objective over affine equalities and PSD constraints.
#[derive(Debug, Clone, Default)]
pub struct SdpProblem {
    n_vars: usize,
    equalities: Vec<(String, LinExpr)>,
    psd: Vec<(String, MatExpr)>,
    objective: LinExpr,
}

impl SdpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    /// Unstructured `rows x cols` variable.
    pub fn matrix_var(&mut self, rows: usize, cols: usize) -> MatExpr {
        let mut m = MatExpr::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                *m.get_mut(i, j) = LinExpr::var(self.n_vars);
                self.n_vars += 1;
            }
        }
        m
    }

    /// Symmetric `n x n` variable with `n(n+1)/2` scalars.
    pub fn symmetric_var(&mut self, n: usize) -> MatExpr {
        let mut m = MatExpr::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                let v = LinExpr::var(self.n_vars);
                self.n_vars += 1;
                *m.get_mut(i, j) = v.clone();
                *m.get_mut(j, i) = v;
            }
        }
        m
    }

    /// `lhs == rhs` entrywise.
    pub fn equal(&mut self, label: &str, lhs: &MatExpr, rhs: &MatExpr) {
        let d = lhs - rhs;
        for (k, e) in d.entries.into_iter().enumerate() {
            if e.terms.is_empty() && e.constant == 0.0 {
                continue;
            }
            self.equalities.push((format!("{label}[{}]", k), e));
        }
    }

    /// `m` (symmetrized) is positive semidefinite.
    pub fn psd(&mut self, label: &str, m: &MatExpr) {
        assert_eq!(m.rows, m.cols, "PSD constraint needs a square expression");
        let sym = (m + &m.transpose()).scale(0.5);
        self.psd.push((label.to_string(), sym));
    }

    pub fn minimize(&mut self, objective: LinExpr) {
        self.objective = objective;
    }

    pub fn constraint_summary(&self) -> (usize, Vec<usize>) {
        (self.equalities.len(), self.psd.iter().map(|p| p.1.rows).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SdpStatus {
    Solved,
    AlmostSolved,
    Infeasible,
    AlmostInfeasible,
    Unbounded,
    Failed(String),
}

impl SdpStatus {
    pub fn is_solved(&self) -> bool {
        matches!(self, SdpStatus::Solved | SdpStatus::AlmostSolved)
    }

    pub fn is_infeasible(&self) -> bool {
        matches!(self, SdpStatus::Infeasible | SdpStatus::AlmostInfeasible)
    }
}

impl fmt::Display for SdpStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SdpStatus::Solved => write!(f, "solved"),
            SdpStatus::AlmostSolved => write!(f, "solved (reduced accuracy)"),
            SdpStatus::Infeasible => write!(f, "primal infeasible"),
            SdpStatus::AlmostInfeasible => write!(f, "primal infeasible (reduced accuracy)"),
            SdpStatus::Unbounded => write!(f, "dual infeasible"),
            SdpStatus::Failed(s) => write!(f, "{s}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: u32,
    pub solve_time: f64,
}

pub trait SdpSolver {
    fn solve(&self, problem: &SdpProblem) -> Result<SdpSolution>;
}

/// Interior-point backend.
#[derive(Debug, Clone, Copy)]
pub struct ClarabelBackend {
    pub tolerance: f64,
    pub max_iter: u32,
}

impl Default for ClarabelBackend {
    fn default() -> Self {
        Self { tolerance: 1e-9, max_iter: 400 }
    }
}

/// Affine parametrization `x = x0 + N z` of the equality-constrained set.
struct Reduction {
    x0: DVector<f64>,
    basis: DMatrix<f64>,
}

impl Reduction {
    /// `None` when the equalities are inconsistent.
    fn new(problem: &SdpProblem) -> Option<Self> {
        let n = problem.n_vars;
        if problem.equalities.is_empty() {
            return Some(Self { x0: DVector::zeros(n), basis: DMatrix::identity(n, n) });
        }
        let rows = problem.equalities.len();
        let mut a = DMatrix::zeros(rows, n);
        let mut b = DVector::zeros(rows);
        for (r, (_, e)) in problem.equalities.iter().enumerate() {
            for &(i, v) in &e.terms {
                a[(r, i)] += v;
            }
            b[r] = -e.constant;
        }
        let x0 = linalg::pinv(&a) * &b;
        let scale = 1f64.max(b.amax()).max(linalg::max_abs(&a) * x0.amax());
        if (&a * &x0 - &b).amax() > EQUALITY_TOL * scale {
            return None;
        }
        Some(Self { x0, basis: linalg::null_space(&a) })
    }

    fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Coefficients over `z` and the constant of `e(x0 + N z)`.
    fn map(&self, e: &LinExpr) -> (Vec<(usize, f64)>, f64) {
        let mut coef = vec![0.0; self.dim()];
        let mut constant = e.constant;
        for &(i, v) in &e.terms {
            constant += v * self.x0[i];
            for (j, c) in coef.iter_mut().enumerate() {
                *c += v * self.basis[(i, j)];
            }
        }
        (coef.into_iter().enumerate().filter(|(_, c)| *c != 0.0).collect(), constant)
    }

    fn lift(&self, z: &[f64]) -> Vec<f64> {
        (&self.x0 + &self.basis * DVector::from_column_slice(z)).as_slice().to_vec()
    }
}

/// Relative residual above which the equality block counts as inconsistent.
const EQUALITY_TOL: f64 = 1e-8;

impl SdpSolver for ClarabelBackend {
    /// Equalities are eliminated before the cone solve: data-driven programs
    /// carry redundant equality rows that stall interior-point iterations.
    fn solve(&self, problem: &SdpProblem) -> Result<SdpSolution> {
        let Some(red) = Reduction::new(problem) else {
            return Ok(SdpSolution {
                status: SdpStatus::Infeasible,
                x: vec![0.0; problem.n_vars],
                objective: f64::NAN,
                iterations: 0,
                solve_time: 0.0,
            });
        };
        let n = red.dim().max(1);
        let mut rows = Vec::new();
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut b = Vec::new();
        let mut cones: Vec<SupportedConeT<f64>> = Vec::new();

        // PSD: s = svec(M(x)) = b - A z with b = svec(C), A = -svec(M_i).
        for (_, m) in &problem.psd {
            for j in 0..m.cols {
                for i in 0..=j {
                    let w = if i == j { 1.0 } else { std::f64::consts::SQRT_2 };
                    let (terms, constant) = red.map(m.get(i, j));
                    let r = b.len();
                    for (k, v) in terms {
                        rows.push(r);
                        cols.push(k);
                        vals.push(-w * v);
                    }
                    b.push(w * constant);
                }
            }
            cones.push(PSDTriangleConeT(m.rows));
        }
        if cones.is_empty() {
            // Keep the problem well posed when only equalities were given.
            cones.push(ZeroConeT(1));
            b.push(0.0);
        }

        let a = CscMatrix::new_from_triplets(b.len(), n, rows, cols, vals);
        let p = CscMatrix::<f64>::zeros((n, n));
        let (obj_terms, obj_constant) = red.map(&problem.objective);
        let mut q = vec![0.0; n];
        for (i, v) in obj_terms {
            q[i] += v;
        }
        let tol = self.tolerance;
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(self.max_iter)
            .tol_gap_abs(tol)
            .tol_gap_rel(tol)
            .tol_feas(tol)
            .tol_infeas_abs(tol)
            .tol_infeas_rel(tol)
            .max_threads(1)
            .build()
            .map_err(|e| Error::Solver(format!("solver settings: {e}")))?;
        let mut solver =
            DefaultSolver::new(&p, &q, &a, &b, &cones, settings).map_err(|e| Error::Solver(format!("{e:?}")))?;
        solver.solve();
        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::Solved => SdpStatus::Solved,
            SolverStatus::AlmostSolved => SdpStatus::AlmostSolved,
            SolverStatus::PrimalInfeasible => SdpStatus::Infeasible,
            SolverStatus::AlmostPrimalInfeasible => SdpStatus::AlmostInfeasible,
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SdpStatus::Unbounded,
            other => SdpStatus::Failed(format!("{other:?}")),
        };
        let z = &sol.x[..red.dim()];
        Ok(SdpSolution {
            status,
            x: red.lift(z),
            objective: sol.obj_val + obj_constant,
            iterations: sol.iterations,
            solve_time: sol.solve_time,
        })
    }
}
