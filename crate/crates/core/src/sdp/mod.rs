//! Semidefinite programming: an affine-expression builder over scalar,
//! matrix, symmetric and diagonal decision variables, and a dense
//! primal-dual interior-point solver for the resulting conic program.
//!
//! Every constraint is affine in the declared variables. Linear objectives
//! are supported directly; Frobenius-norm objectives go through a
//! second-order-cone epigraph (see [`SdpProblem::frobenius_epigraph`]).

mod cones;
mod ipm;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::{Add, Neg, Sub};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};

pub use ipm::SolverSettings;

/// Strict inequalities are encoded with this margin, scaled by the data norm.
pub const EPS_STRICT: f64 = 1e-6;
/// Absolute tolerance on `λ_min` of every PSD constraint after a solve.
pub const FEAS_TOL: f64 = 1e-7;

/// Shape of a decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarShape {
    Scalar,
    Full { rows: usize, cols: usize },
    Symmetric { n: usize },
    Diagonal { n: usize },
}

impl VarShape {
    /// Number of scalar unknowns.
    pub fn len(&self) -> usize {
        match *self {
            VarShape::Scalar => 1,
            VarShape::Full { rows, cols } => rows * cols,
            VarShape::Symmetric { n } => n * (n + 1) / 2,
            VarShape::Diagonal { n } => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> (usize, usize) {
        match *self {
            VarShape::Scalar => (1, 1),
            VarShape::Full { rows, cols } => (rows, cols),
            VarShape::Symmetric { n } | VarShape::Diagonal { n } => (n, n),
        }
    }
}

/// Handle to a declared decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    offset: usize,
    shape: VarShape,
}

impl Var {
    pub fn shape(&self) -> VarShape {
        self.shape
    }

    /// The variable as an affine expression.
    pub fn expr(&self) -> Affine {
        let (rows, cols) = self.shape.dims();
        let mut terms = BTreeMap::new();
        let mut k = self.offset;
        match self.shape {
            VarShape::Scalar | VarShape::Full { .. } => {
                for i in 0..rows {
                    for j in 0..cols {
                        let mut e = Mat::zeros(rows, cols);
                        e[(i, j)] = 1.0;
                        terms.insert(k, e);
                        k += 1;
                    }
                }
            }
            VarShape::Symmetric { n } => {
                for i in 0..n {
                    for j in i..n {
                        let mut e = Mat::zeros(n, n);
                        e[(i, j)] = 1.0;
                        e[(j, i)] = 1.0;
                        terms.insert(k, e);
                        k += 1;
                    }
                }
            }
            VarShape::Diagonal { n } => {
                for i in 0..n {
                    let mut e = Mat::zeros(n, n);
                    e[(i, i)] = 1.0;
                    terms.insert(k, e);
                    k += 1;
                }
            }
        }
        Affine { constant: Mat::zeros(rows, cols), terms }
    }

    /// Reads the variable's value from a flat solution vector.
    pub fn value(&self, x: &[f64]) -> Mat {
        self.expr().eval(x)
    }

    /// Writes `m` into a flat vector (used for warm values and tests).
    /// Symmetric variables read the upper triangle; diagonal ones the diagonal.
    pub fn write(&self, m: &Mat, x: &mut [f64]) {
        let mut k = self.offset;
        match self.shape {
            VarShape::Scalar | VarShape::Full { .. } => {
                let (rows, cols) = self.shape.dims();
                for i in 0..rows {
                    for j in 0..cols {
                        x[k] = m[(i, j)];
                        k += 1;
                    }
                }
            }
            VarShape::Symmetric { n } => {
                for i in 0..n {
                    for j in i..n {
                        x[k] = m[(i, j)];
                        k += 1;
                    }
                }
            }
            VarShape::Diagonal { n } => {
                for i in 0..n {
                    x[k] = m[(i, i)];
                    k += 1;
                }
            }
        }
    }
}

/// Matrix-valued affine function `C + Σ_k x_k·A_k` of the flat decision vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    constant: Mat,
    terms: BTreeMap<usize, Mat>,
}

impl Affine {
    pub fn constant(m: Mat) -> Self {
        Self { constant: m, terms: BTreeMap::new() }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(Mat::zeros(rows, cols))
    }

    pub fn scalar(v: f64) -> Self {
        Self::constant(Mat::from_element(1, 1, v))
    }

    pub fn rows(&self) -> usize {
        self.constant.nrows()
    }

    pub fn cols(&self) -> usize {
        self.constant.ncols()
    }

    pub fn constant_part(&self) -> &Mat {
        &self.constant
    }

    /// Coefficient matrices keyed by flat variable index.
    pub fn terms(&self) -> &BTreeMap<usize, Mat> {
        &self.terms
    }

    pub fn eval(&self, x: &[f64]) -> Mat {
        let mut out = self.constant.clone();
        for (&k, a) in &self.terms {
            out += a * x[k];
        }
        out
    }

    fn map(&self, f: impl Fn(&Mat) -> Mat) -> Self {
        Self {
            constant: f(&self.constant),
            terms: self.terms.iter().map(|(&k, a)| (k, f(a))).collect(),
        }
    }

    /// `left · self`.
    pub fn lmul(&self, left: &Mat) -> Self {
        assert_eq!(left.ncols(), self.rows(), "lmul shape");
        self.map(|a| left * a)
    }

    /// `self · right`.
    pub fn rmul(&self, right: &Mat) -> Self {
        assert_eq!(self.cols(), right.nrows(), "rmul shape");
        self.map(|a| a * right)
    }

    pub fn transpose(&self) -> Self {
        self.map(|a| a.transpose())
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|a| a * s)
    }

    /// `s · m` for a 1x1 expression `s`.
    pub fn scalar_times(&self, m: &Mat) -> Self {
        assert_eq!((self.rows(), self.cols()), (1, 1), "scalar_times needs a 1x1 expression");
        self.map(|a| m * a[(0, 0)])
    }

    /// Diagonal of a square expression as a column.
    pub fn diagonal(&self) -> Self {
        let n = self.rows().min(self.cols());
        let col = |a: &Mat| Mat::from_iterator(n, 1, (0..n).map(|i| a[(i, i)]));
        Self {
            constant: col(&self.constant),
            terms: self.terms.iter().map(|(&k, a)| (k, col(a))).filter(|(_, a)| a.iter().any(|v| *v != 0.0)).collect(),
        }
    }

    /// `self + selfᵀ`.
    pub fn sym(&self) -> Self {
        self.clone() + self.transpose()
    }

    pub fn add_constant(mut self, m: &Mat) -> Self {
        self.constant += m;
        self
    }

    /// Entry `(i, j)` as a 1x1 expression.
    pub fn entry(&self, i: usize, j: usize) -> Self {
        Self {
            constant: Mat::from_element(1, 1, self.constant[(i, j)]),
            terms: self
                .terms
                .iter()
                .filter(|(_, a)| a[(i, j)] != 0.0)
                .map(|(&k, a)| (k, Mat::from_element(1, 1, a[(i, j)])))
                .collect(),
        }
    }

    /// Block assembly with explicit partition sizes; absent blocks are zero.
    pub fn blocks(row_sizes: &[usize], col_sizes: &[usize], entries: Vec<(usize, usize, Affine)>) -> Self {
        let rows: usize = row_sizes.iter().sum();
        let cols: usize = col_sizes.iter().sum();
        let ro = offsets(row_sizes);
        let co = offsets(col_sizes);
        let mut out = Affine::zeros(rows, cols);
        for (i, j, e) in entries {
            assert_eq!((e.rows(), e.cols()), (row_sizes[i], col_sizes[j]), "block ({i},{j}) shape");
            out.constant.view_mut((ro[i], co[j]), (e.rows(), e.cols())).copy_from(&e.constant);
            for (k, a) in e.terms {
                let t = out.terms.entry(k).or_insert_with(|| Mat::zeros(rows, cols));
                t.view_mut((ro[i], co[j]), (a.nrows(), a.ncols())).copy_from(&a);
            }
        }
        out
    }

    fn accumulate(mut self, other: &Affine, sign: f64) -> Self {
        assert_eq!((self.rows(), self.cols()), (other.rows(), other.cols()), "affine add shape");
        self.constant += &other.constant * sign;
        for (&k, a) in &other.terms {
            match self.terms.get_mut(&k) {
                Some(t) => *t += a * sign,
                None => {
                    self.terms.insert(k, a * sign);
                }
            }
        }
        self
    }
}

fn offsets(sizes: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(sizes.len());
    let mut acc = 0;
    for &s in sizes {
        out.push(acc);
        acc += s;
    }
    out
}

impl Add for Affine {
    type Output = Affine;
    fn add(self, rhs: Affine) -> Affine {
        self.accumulate(&rhs, 1.0)
    }
}

impl Add<&Affine> for Affine {
    type Output = Affine;
    fn add(self, rhs: &Affine) -> Affine {
        self.accumulate(rhs, 1.0)
    }
}

impl Sub for Affine {
    type Output = Affine;
    fn sub(self, rhs: Affine) -> Affine {
        self.accumulate(&rhs, -1.0)
    }
}

impl Sub<&Affine> for Affine {
    type Output = Affine;
    fn sub(self, rhs: &Affine) -> Affine {
        self.accumulate(rhs, -1.0)
    }
}

impl Neg for Affine {
    type Output = Affine;
    fn neg(self) -> Affine {
        self.scale(-1.0)
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Constraint {
    /// `F(x) ⪰ 0`.
    Psd(Affine),
    /// Every entry `≥ 0`.
    Nonneg(Affine),
    /// `‖v(x)‖₂ ≤ t(x)` over the entries of every `v` block.
    Soc { t: Affine, v: Vec<Affine> },
}

/// A conic program over declared variables.
#[derive(Debug, Clone, Default)]
pub struct SdpProblem {
    n: usize,
    constraints: Vec<(String, Constraint)>,
    objective: Option<Affine>,
}

impl SdpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_scalars(&self) -> usize {
        self.n
    }

    fn declare(&mut self, shape: VarShape) -> Var {
        let v = Var { offset: self.n, shape };
        self.n += shape.len();
        v
    }

    pub fn scalar(&mut self) -> Var {
        self.declare(VarShape::Scalar)
    }

    pub fn matrix(&mut self, rows: usize, cols: usize) -> Var {
        self.declare(VarShape::Full { rows, cols })
    }

    pub fn symmetric(&mut self, n: usize) -> Var {
        self.declare(VarShape::Symmetric { n })
    }

    pub fn diagonal(&mut self, n: usize) -> Var {
        self.declare(VarShape::Diagonal { n })
    }

    fn check_refs(&self, e: &Affine) -> Result<()> {
        if let Some((&k, _)) = e.terms.iter().next_back() {
            if k >= self.n {
                return Err(Error::InvalidArgument(String::from("constraint references an undeclared variable")));
            }
        }
        if !linalg::all_finite(&e.constant) || e.terms.values().any(|a| !linalg::all_finite(a)) {
            return Err(Error::NonFinite("SDP constraint data"));
        }
        Ok(())
    }

    fn check_sym(e: &Affine) -> Result<()> {
        if e.rows() != e.cols() {
            return Err(Error::NonSquare { rows: e.rows(), cols: e.cols() });
        }
        let tol = 1e-9 * (1.0 + linalg::max_abs(&e.constant));
        let asym = linalg::max_abs(&(&e.constant - e.constant.transpose()));
        if asym > tol {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        for a in e.terms.values() {
            let asym = linalg::max_abs(&(a - a.transpose()));
            if asym > 1e-9 * (1.0 + linalg::max_abs(a)) {
                return Err(Error::NotSymmetric { asymmetry: asym });
            }
        }
        Ok(())
    }

    /// `f(x) ⪰ 0`.
    pub fn psd(&mut self, label: &str, f: Affine) -> Result<()> {
        Self::check_sym(&f)?;
        self.check_refs(&f)?;
        if f.rows() > 0 {
            self.constraints.push((String::from(label), Constraint::Psd(f)));
        }
        Ok(())
    }

    /// `f(x) ⪯ 0`.
    pub fn nsd(&mut self, label: &str, f: Affine) -> Result<()> {
        self.psd(label, -f)
    }

    /// Entrywise `f(x) ≥ 0`.
    pub fn nonneg(&mut self, label: &str, f: Affine) -> Result<()> {
        self.check_refs(&f)?;
        if f.rows() * f.cols() > 0 {
            self.constraints.push((String::from(label), Constraint::Nonneg(f)));
        }
        Ok(())
    }

    /// `‖(v₁, v₂, …)‖₂ ≤ t` where every entry of every `vᵢ` is one coordinate.
    pub fn soc(&mut self, label: &str, t: Affine, v: Vec<Affine>) -> Result<()> {
        if t.rows() != 1 || t.cols() != 1 {
            return Err(crate::error::mismatch("SOC head must be scalar"));
        }
        self.check_refs(&t)?;
        for e in &v {
            self.check_refs(e)?;
        }
        self.constraints.push((String::from(label), Constraint::Soc { t, v }));
        Ok(())
    }

    /// Declares `t` with `‖(d₁, d₂, …)‖_F ≤ t` and returns it; minimizing `t`
    /// minimizes the Frobenius norm of the stacked differences.
    pub fn frobenius_epigraph(&mut self, label: &str, diffs: Vec<Affine>) -> Result<Var> {
        let t = self.scalar();
        self.soc(label, t.expr(), diffs)?;
        Ok(t)
    }

    pub fn minimize(&mut self, objective: Affine) -> Result<()> {
        if objective.rows() != 1 || objective.cols() != 1 {
            return Err(crate::error::mismatch("objective must be scalar"));
        }
        self.check_refs(&objective)?;
        self.objective = Some(objective);
        Ok(())
    }

    pub fn maximize(&mut self, objective: Affine) -> Result<()> {
        self.minimize(-objective)
    }

    /// Largest violation of any constraint at `x` (0 when all hold).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.constraints.iter().map(|(_, c)| violation(c, x)).fold(0.0, f64::max)
    }

    /// Violation per labelled constraint.
    pub fn violations(&self, x: &[f64]) -> Vec<(String, f64)> {
        self.constraints.iter().map(|(l, c)| (l.clone(), violation(c, x))).collect()
    }
}

fn violation(c: &Constraint, x: &[f64]) -> f64 {
    match c {
        Constraint::Psd(f) => (-linalg::min_eigenvalue(&f.eval(x))).max(0.0),
        Constraint::Nonneg(f) => f.eval(x).iter().fold(0.0_f64, |acc, &v| acc.max(-v)),
        Constraint::Soc { t, v } => {
            let head = t.eval(x)[(0, 0)];
            let tail: f64 = v.iter().map(|e| e.eval(x).norm_squared()).sum();
            (libm::sqrt(tail) - head).max(0.0)
        }
    }
}

/// Termination quality of a solved problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    /// Stopped on a stall with residuals inside the relaxed tolerances.
    Inaccurate,
}

/// Solution of a feasible program.
#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Largest constraint violation measured on the unscaled problem.
    pub max_violation: f64,
    pub iterations: usize,
    pub status: SolveStatus,
}

impl SdpSolution {
    pub fn value(&self, v: &Var) -> Mat {
        v.value(&self.x)
    }

    pub fn scalar(&self, v: &Var) -> f64 {
        v.value(&self.x)[(0, 0)]
    }

    pub fn eval(&self, e: &Affine) -> Mat {
        e.eval(&self.x)
    }
}

/// Evidence that no point satisfies the constraints.
#[derive(Debug, Clone)]
pub struct Infeasibility {
    /// Normalized residual of the Farkas certificate (small means reliable).
    pub certificate_residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub enum SdpOutcome {
    Solved(SdpSolution),
    Infeasible(Infeasibility),
    /// The objective is unbounded below.
    Unbounded,
}

impl SdpOutcome {
    pub fn solution(self) -> Option<SdpSolution> {
        match self {
            SdpOutcome::Solved(s) => Some(s),
            _ => None,
        }
    }
}

/// Solves the program with default settings.
pub fn solve_sdp(p: &SdpProblem) -> Result<SdpOutcome> {
    solve_sdp_with(p, &SolverSettings::default())
}

pub fn solve_sdp_with(p: &SdpProblem, settings: &SolverSettings) -> Result<SdpOutcome> {
    let conic = cones::ConicForm::build(p);
    let raw = ipm::solve(&conic, settings)?;
    Ok(match raw {
        ipm::RawOutcome::Optimal { x, iterations, inaccurate } => {
            let objective = p.objective.as_ref().map(|o| o.eval(&x)[(0, 0)]).unwrap_or(0.0);
            let max_violation = p.max_violation(&x);
            SdpOutcome::Solved(SdpSolution {
                x,
                objective,
                max_violation,
                iterations,
                status: if inaccurate { SolveStatus::Inaccurate } else { SolveStatus::Optimal },
            })
        }
        ipm::RawOutcome::PrimalInfeasible { residual, iterations } => {
            SdpOutcome::Infeasible(Infeasibility { certificate_residual: residual, iterations })
        }
        ipm::RawOutcome::DualInfeasible => SdpOutcome::Unbounded,
    })
}
