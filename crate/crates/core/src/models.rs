//! Plant, generic uncertain system and implicit neural network controller.

use alloc::vec::Vec;
use alloc::format;

use crate::error::{mismatch, Error, Result};
use crate::linalg::{self, Mat, Vector};

fn check_shape(name: &str, m: &Mat, rows: usize, cols: usize) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::DimensionMismatch(format!(
            "{name} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !linalg::all_finite(m) {
        return Err(Error::NonFinite("model matrix"));
    }
    Ok(())
}

/// Channel sizes of an uncertain plant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PlantDims {
    pub n_p: usize,
    pub n_v: usize,
    pub n_w: usize,
    pub n_d: usize,
    pub n_e: usize,
    pub n_u: usize,
    pub n_y: usize,
}

/// LTI part of the plant in feedback with an uncertainty `w_p = Δ_p(v_p)`.
///
/// The `(y, u)` feedthrough is zero by construction, so there is no field for it.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertainLtiPlant {
    pub a_p: Mat,
    pub b_pw: Mat,
    pub b_pd: Mat,
    pub b_pu: Mat,
    pub c_pv: Mat,
    pub d_pvw: Mat,
    pub d_pvd: Mat,
    pub d_pvu: Mat,
    pub c_pe: Mat,
    pub d_pew: Mat,
    pub d_ped: Mat,
    pub d_peu: Mat,
    pub c_py: Mat,
    pub d_pyw: Mat,
    pub d_pyd: Mat,
}

impl UncertainLtiPlant {
    pub fn zeros(d: PlantDims) -> Self {
        let z = Mat::zeros;
        Self {
            a_p: z(d.n_p, d.n_p),
            b_pw: z(d.n_p, d.n_w),
            b_pd: z(d.n_p, d.n_d),
            b_pu: z(d.n_p, d.n_u),
            c_pv: z(d.n_v, d.n_p),
            d_pvw: z(d.n_v, d.n_w),
            d_pvd: z(d.n_v, d.n_d),
            d_pvu: z(d.n_v, d.n_u),
            c_pe: z(d.n_e, d.n_p),
            d_pew: z(d.n_e, d.n_w),
            d_ped: z(d.n_e, d.n_d),
            d_peu: z(d.n_e, d.n_u),
            c_py: z(d.n_y, d.n_p),
            d_pyw: z(d.n_y, d.n_w),
            d_pyd: z(d.n_y, d.n_d),
        }
    }

    /// Dimensions read off the blocks, without validation.
    pub fn dims(&self) -> PlantDims {
        PlantDims {
            n_p: self.a_p.nrows(),
            n_v: self.c_pv.nrows(),
            n_w: self.b_pw.ncols(),
            n_d: self.b_pd.ncols(),
            n_e: self.c_pe.nrows(),
            n_u: self.b_pu.ncols(),
            n_y: self.c_py.nrows(),
        }
    }

    pub fn validate(&self) -> Result<PlantDims> {
        let d = self.dims();
        check_shape("A_p", &self.a_p, d.n_p, d.n_p)?;
        check_shape("B_pw", &self.b_pw, d.n_p, d.n_w)?;
        check_shape("B_pd", &self.b_pd, d.n_p, d.n_d)?;
        check_shape("B_pu", &self.b_pu, d.n_p, d.n_u)?;
        check_shape("C_pv", &self.c_pv, d.n_v, d.n_p)?;
        check_shape("D_pvw", &self.d_pvw, d.n_v, d.n_w)?;
        check_shape("D_pvd", &self.d_pvd, d.n_v, d.n_d)?;
        check_shape("D_pvu", &self.d_pvu, d.n_v, d.n_u)?;
        check_shape("C_pe", &self.c_pe, d.n_e, d.n_p)?;
        check_shape("D_pew", &self.d_pew, d.n_e, d.n_w)?;
        check_shape("D_ped", &self.d_ped, d.n_e, d.n_d)?;
        check_shape("D_peu", &self.d_peu, d.n_e, d.n_u)?;
        check_shape("C_py", &self.c_py, d.n_y, d.n_p)?;
        check_shape("D_pyw", &self.d_pyw, d.n_y, d.n_w)?;
        check_shape("D_pyd", &self.d_pyd, d.n_y, d.n_d)?;
        Ok(d)
    }

    /// Named blocks in a fixed order, for serialization.
    pub fn named_blocks(&self) -> [(&'static str, &Mat); 15] {
        [
            ("A_p", &self.a_p),
            ("B_pw", &self.b_pw),
            ("B_pd", &self.b_pd),
            ("B_pu", &self.b_pu),
            ("C_pv", &self.c_pv),
            ("D_pvw", &self.d_pvw),
            ("D_pvd", &self.d_pvd),
            ("D_pvu", &self.d_pvu),
            ("C_pe", &self.c_pe),
            ("D_pew", &self.d_pew),
            ("D_ped", &self.d_ped),
            ("D_peu", &self.d_peu),
            ("C_py", &self.c_py),
            ("D_pyw", &self.d_pyw),
            ("D_pyd", &self.d_pyd),
        ]
    }

    pub fn named_blocks_mut(&mut self) -> [(&'static str, &mut Mat); 15] {
        [
            ("A_p", &mut self.a_p),
            ("B_pw", &mut self.b_pw),
            ("B_pd", &mut self.b_pd),
            ("B_pu", &mut self.b_pu),
            ("C_pv", &mut self.c_pv),
            ("D_pvw", &mut self.d_pvw),
            ("D_pvd", &mut self.d_pvd),
            ("D_pvu", &mut self.d_pvu),
            ("C_pe", &mut self.c_pe),
            ("D_pew", &mut self.d_pew),
            ("D_ped", &mut self.d_ped),
            ("D_peu", &mut self.d_peu),
            ("C_py", &mut self.c_py),
            ("D_pyw", &mut self.d_pyw),
            ("D_pyd", &mut self.d_pyd),
        ]
    }
}

/// Sizes of the plant and controller parts inside a closed-loop system.
/// Closed-loop channels are stacked plant first: `x = (x_p, x_k)`,
/// `v = (v_p, v_k)`, `w = (w_p, w_k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoopPartition {
    pub n_p: usize,
    pub n_k: usize,
    pub n_vp: usize,
    pub n_wp: usize,
    pub n_phi: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SystemDims {
    pub n: usize,
    pub n_v: usize,
    pub n_w: usize,
    pub n_d: usize,
    pub n_e: usize,
}

/// `ẋ = Ax + B_w w + B_d d`, `v = C_v x + D_vw w + D_vd d`,
/// `e = C_e x + D_ew w + D_ed d`, with `w = Δ(v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertainLtiSystem {
    pub a: Mat,
    pub b_w: Mat,
    pub b_d: Mat,
    pub c_v: Mat,
    pub d_vw: Mat,
    pub d_vd: Mat,
    pub c_e: Mat,
    pub d_ew: Mat,
    pub d_ed: Mat,
    /// Set when the system is a plant/controller closed loop.
    pub partition: Option<LoopPartition>,
}

impl UncertainLtiSystem {
    pub fn zeros(d: SystemDims) -> Self {
        let z = Mat::zeros;
        Self {
            a: z(d.n, d.n),
            b_w: z(d.n, d.n_w),
            b_d: z(d.n, d.n_d),
            c_v: z(d.n_v, d.n),
            d_vw: z(d.n_v, d.n_w),
            d_vd: z(d.n_v, d.n_d),
            c_e: z(d.n_e, d.n),
            d_ew: z(d.n_e, d.n_w),
            d_ed: z(d.n_e, d.n_d),
            partition: None,
        }
    }

    pub fn dims(&self) -> SystemDims {
        SystemDims {
            n: self.a.nrows(),
            n_v: self.c_v.nrows(),
            n_w: self.b_w.ncols(),
            n_d: self.b_d.ncols(),
            n_e: self.c_e.nrows(),
        }
    }

    pub fn validate(&self) -> Result<SystemDims> {
        let d = self.dims();
        check_shape("A", &self.a, d.n, d.n)?;
        check_shape("B_w", &self.b_w, d.n, d.n_w)?;
        check_shape("B_d", &self.b_d, d.n, d.n_d)?;
        check_shape("C_v", &self.c_v, d.n_v, d.n)?;
        check_shape("D_vw", &self.d_vw, d.n_v, d.n_w)?;
        check_shape("D_vd", &self.d_vd, d.n_v, d.n_d)?;
        check_shape("C_e", &self.c_e, d.n_e, d.n)?;
        check_shape("D_ew", &self.d_ew, d.n_e, d.n_w)?;
        check_shape("D_ed", &self.d_ed, d.n_e, d.n_d)?;
        if let Some(p) = self.partition {
            if p.n_p + p.n_k != d.n || p.n_vp + p.n_phi != d.n_v || p.n_wp + p.n_phi != d.n_w {
                return Err(mismatch("loop partition does not match system channels"));
            }
        }
        Ok(d)
    }

    /// State derivative for given `(x, w, d)`.
    pub fn state_derivative(&self, x: &Vector, w: &Vector, d: &Vector) -> Vector {
        &self.a * x + &self.b_w * w + &self.b_d * d
    }

    /// Uncertainty input `v` for given `(x, w, d)`.
    pub fn v_output(&self, x: &Vector, w: &Vector, d: &Vector) -> Vector {
        &self.c_v * x + &self.d_vw * w + &self.d_vd * d
    }

    /// Performance output `e` for given `(x, w, d)`.
    pub fn e_output(&self, x: &Vector, w: &Vector, d: &Vector) -> Vector {
        &self.c_e * x + &self.d_ew * w + &self.d_ed * d
    }

    pub fn named_blocks(&self) -> [(&'static str, &Mat); 9] {
        [
            ("A", &self.a),
            ("B_w", &self.b_w),
            ("B_d", &self.b_d),
            ("C_v", &self.c_v),
            ("D_vw", &self.d_vw),
            ("D_vd", &self.d_vd),
            ("C_e", &self.c_e),
            ("D_ew", &self.d_ew),
            ("D_ed", &self.d_ed),
        ]
    }

    pub fn named_blocks_mut(&mut self) -> [(&'static str, &mut Mat); 9] {
        [
            ("A", &mut self.a),
            ("B_w", &mut self.b_w),
            ("B_d", &mut self.b_d),
            ("C_v", &mut self.c_v),
            ("D_vw", &mut self.d_vw),
            ("D_vd", &mut self.d_vd),
            ("C_e", &mut self.c_e),
            ("D_ew", &mut self.d_ew),
            ("D_ed", &mut self.d_ed),
        ]
    }

    /// Largest entrywise difference over the nine blocks (∞ on shape mismatch).
    pub fn max_deviation(&self, other: &Self) -> f64 {
        let mut dev = 0.0_f64;
        for ((_, a), (_, b)) in self.named_blocks().iter().zip(other.named_blocks().iter()) {
            if a.shape() != b.shape() {
                return f64::INFINITY;
            }
            dev = dev.max(linalg::max_abs(&(*a - *b)));
        }
        dev
    }
}

/// Scalar activation of the implicit layer; all are sector- and
/// slope-restricted in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    /// `φ ≡ 0`, which turns the controller into an LTI system.
    Zero,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => libm::tanh(v),
            Activation::Relu => v.max(0.0),
            Activation::Zero => 0.0,
        }
    }

    pub fn derivative(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = libm::tanh(v);
                1.0 - t * t
            }
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Zero => 0.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Zero => "zero",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "zero" | "identity-zero" | "none" => Ok(Activation::Zero),
            other => Err(Error::InvalidArgument(format!("unknown activation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ControllerDims {
    pub n_k: usize,
    pub n_phi: usize,
    pub n_y: usize,
    pub n_u: usize,
}

/// Recurrent implicit neural network controller:
/// `ẋ_k = A_k x_k + B_kw w_k + B_ky y`, `v_k = C_kv x_k + D_kvw w_k + D_kvy y`,
/// `u = C_ku x_k + D_kuw w_k + D_kuy y`, `w_k = φ(v_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RinnController {
    pub a_k: Mat,
    pub b_kw: Mat,
    pub b_ky: Mat,
    pub c_kv: Mat,
    pub d_kvw: Mat,
    pub d_kvy: Mat,
    pub c_ku: Mat,
    pub d_kuw: Mat,
    pub d_kuy: Mat,
    pub activation: Activation,
}

/// The controller parameters as one object.
pub type Theta = RinnController;

pub const THETA_BLOCK_NAMES: [&str; 9] = ["A_k", "B_kw", "B_ky", "C_kv", "D_kvw", "D_kvy", "C_ku", "D_kuw", "D_kuy"];

impl RinnController {
    pub fn zeros(d: ControllerDims, activation: Activation) -> Self {
        let z = Mat::zeros;
        Self {
            a_k: z(d.n_k, d.n_k),
            b_kw: z(d.n_k, d.n_phi),
            b_ky: z(d.n_k, d.n_y),
            c_kv: z(d.n_phi, d.n_k),
            d_kvw: z(d.n_phi, d.n_phi),
            d_kvy: z(d.n_phi, d.n_y),
            c_ku: z(d.n_u, d.n_k),
            d_kuw: z(d.n_u, d.n_phi),
            d_kuy: z(d.n_u, d.n_y),
            activation,
        }
    }

    pub fn dims(&self) -> ControllerDims {
        ControllerDims { n_k: self.a_k.nrows(), n_phi: self.c_kv.nrows(), n_y: self.b_ky.ncols(), n_u: self.c_ku.nrows() }
    }

    pub fn validate(&self) -> Result<ControllerDims> {
        let d = self.dims();
        check_shape("A_k", &self.a_k, d.n_k, d.n_k)?;
        check_shape("B_kw", &self.b_kw, d.n_k, d.n_phi)?;
        check_shape("B_ky", &self.b_ky, d.n_k, d.n_y)?;
        check_shape("C_kv", &self.c_kv, d.n_phi, d.n_k)?;
        check_shape("D_kvw", &self.d_kvw, d.n_phi, d.n_phi)?;
        check_shape("D_kvy", &self.d_kvy, d.n_phi, d.n_y)?;
        check_shape("C_ku", &self.c_ku, d.n_u, d.n_k)?;
        check_shape("D_kuw", &self.d_kuw, d.n_u, d.n_phi)?;
        check_shape("D_kuy", &self.d_kuy, d.n_u, d.n_y)?;
        Ok(d)
    }

    pub fn blocks(&self) -> [&Mat; 9] {
        [&self.a_k, &self.b_kw, &self.b_ky, &self.c_kv, &self.d_kvw, &self.d_kvy, &self.c_ku, &self.d_kuw, &self.d_kuy]
    }

    pub fn blocks_mut(&mut self) -> [&mut Mat; 9] {
        [
            &mut self.a_k,
            &mut self.b_kw,
            &mut self.b_ky,
            &mut self.c_kv,
            &mut self.d_kvw,
            &mut self.d_kvy,
            &mut self.c_ku,
            &mut self.d_kuw,
            &mut self.d_kuy,
        ]
    }

    /// Number of scalar parameters.
    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|m| m.len()).sum()
    }

    /// All parameters, block by block in [`THETA_BLOCK_NAMES`] order, each block row-major.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for m in self.blocks() {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    out.push(m[(i, j)]);
                }
            }
        }
        out
    }

    /// Inverse of [`to_vec`](Self::to_vec) using this controller's shapes.
    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        if params.len() != self.num_params() {
            return Err(mismatch("parameter vector length"));
        }
        let mut out = self.clone();
        let mut k = 0;
        for m in out.blocks_mut() {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    m[(i, j)] = params[k];
                    k += 1;
                }
            }
        }
        Ok(out)
    }

    /// Frobenius norm of the parameter difference.
    pub fn distance(&self, other: &Self) -> f64 {
        let a = self.to_vec();
        let b = other.to_vec();
        libm::sqrt(a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum())
    }

    /// True when every neural block is zero.
    pub fn is_lti(&self) -> bool {
        [&self.b_kw, &self.c_kv, &self.d_kvw, &self.d_kvy, &self.d_kuw].iter().all(|m| m.iter().all(|&v| v == 0.0))
            || self.activation == Activation::Zero
    }
}

/// Settings of the implicit-layer solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointCfg {
    /// Picard damping.
    pub alpha: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FixedPointCfg {
    fn default() -> Self {
        Self { alpha: 0.5, tol: 1e-10, max_iter: 500 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerOutput {
    pub u: Vector,
    pub v_k: Vector,
    pub w_k: Vector,
    pub xdot_k: Vector,
    /// `‖w_k − φ(v_k)‖_∞` at the returned point.
    pub residual: f64,
    pub iterations: usize,
}

fn apply_phi(act: Activation, v: &Vector) -> Vector {
    v.map(|x| act.apply(x))
}

fn fp_residual(k: &RinnController, b: &Vector, w: &Vector) -> f64 {
    let v = b + &k.d_kvw * w;
    (w - apply_phi(k.activation, &v)).amax()
}

fn is_strictly_lower(m: &Mat) -> bool {
    (0..m.nrows()).all(|i| (i..m.ncols()).all(|j| m[(i, j)] == 0.0))
}

/// Solves the implicit layer and evaluates the controller outputs.
pub fn eval_controller(k: &RinnController, x_k: &Vector, y: &Vector, fp: &FixedPointCfg) -> Result<ControllerOutput> {
    let d = k.validate()?;
    if x_k.len() != d.n_k || y.len() != d.n_y {
        return Err(mismatch("controller state or measurement length"));
    }
    let b = &k.c_kv * x_k + &k.d_kvy * y;
    let n = d.n_phi;
    let (w, iterations) = if n == 0 || k.activation == Activation::Zero {
        (Vector::zeros(n), 0)
    } else if is_strictly_lower(&k.d_kvw) {
        // Explicit network: forward substitution is exact.
        let mut w = Vector::zeros(n);
        for i in 0..n {
            let mut v = b[i];
            for j in 0..i {
                v += k.d_kvw[(i, j)] * w[j];
            }
            w[i] = k.activation.apply(v);
        }
        (w, 1)
    } else {
        solve_fixed_point(k, &b, fp)?
    };
    let v_k = &b + &k.d_kvw * &w;
    let residual = (&w - apply_phi(k.activation, &v_k)).amax();
    let u = &k.c_ku * x_k + &k.d_kuw * &w + &k.d_kuy * y;
    let xdot_k = &k.a_k * x_k + &k.b_kw * &w + &k.b_ky * y;
    Ok(ControllerOutput { u, v_k, w_k: w, xdot_k, residual, iterations })
}

fn solve_fixed_point(k: &RinnController, b: &Vector, fp: &FixedPointCfg) -> Result<(Vector, usize)> {
    let act = k.activation;
    let mut w = Vector::zeros(b.len());
    let mut best = f64::INFINITY;
    let mut stall = 0;
    for it in 1..=fp.max_iter {
        let target = apply_phi(act, &(b + &k.d_kvw * &w));
        w = &w * (1.0 - fp.alpha) + target * fp.alpha;
        let r = fp_residual(k, b, &w);
        if r <= fp.tol {
            return Ok((w, it));
        }
        if !r.is_finite() {
            break;
        }
        if r < 0.999 * best {
            best = r;
            stall = 0;
        } else {
            stall += 1;
            if stall >= 20 {
                break;
            }
        }
    }
    // Newton on F(w) = w − φ(b + D w).
    let n = b.len();
    let mut w_newton = if w.iter().all(|v| v.is_finite()) { w } else { Vector::zeros(n) };
    let mut r = fp_residual(k, b, &w_newton);
    for it in 1..=50 {
        let v = b + &k.d_kvw * &w_newton;
        let f = &w_newton - apply_phi(act, &v);
        let mut jac = Mat::identity(n, n);
        for i in 0..n {
            let dphi = act.derivative(v[i]);
            for j in 0..n {
                jac[(i, j)] -= dphi * k.d_kvw[(i, j)];
            }
        }
        let step = match jac.lu().solve(&f) {
            Some(s) => s,
            None => break,
        };
        // Backtracking on the residual.
        let mut t = 1.0;
        loop {
            let cand = &w_newton - &step * t;
            let rc = fp_residual(k, b, &cand);
            if rc < r || t < 1e-4 {
                w_newton = cand;
                r = rc;
                break;
            }
            t *= 0.5;
        }
        if r <= fp.tol {
            return Ok((w_newton, fp.max_iter + it));
        }
    }
    Err(Error::FixedPointDiverged { residual: r, iterations: fp.max_iter + 50 })
}

/// `Λ D_kvw + D_kvwᵀ Λ − 2Λ ≺ −ε_strict I`.
pub fn check_wellposed(k: &RinnController, lambda: &[f64]) -> bool {
    let n = k.d_kvw.nrows();
    if lambda.len() != n || k.d_kvw.ncols() != n {
        return false;
    }
    if n == 0 {
        return true;
    }
    let l = linalg::diag(lambda);
    let m = &l * &k.d_kvw + k.d_kvw.transpose() * &l - &l * 2.0;
    linalg::max_eigenvalue(&linalg::symmetrize(&m)) < -crate::sdp::EPS_STRICT
}

/// Quadratic supply rate `s(d, e) = [d; e]ᵀ X [d; e]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SupplyRate {
    pub x_dd: Mat,
    pub x_de: Mat,
    pub x_ee: Mat,
}

impl SupplyRate {
    pub fn new(x_dd: Mat, x_de: Mat, x_ee: Mat) -> Result<Self> {
        let s = Self { x_dd, x_de, x_ee };
        s.validate()?;
        Ok(s)
    }

    /// `s = 0`: plain stability.
    pub fn stability(n_d: usize, n_e: usize) -> Self {
        Self { x_dd: Mat::zeros(n_d, n_d), x_de: Mat::zeros(n_d, n_e), x_ee: Mat::zeros(n_e, n_e) }
    }

    /// `s = γ²‖d‖² − ‖e‖²`.
    pub fn l2_gain(gamma_sq: f64, n_d: usize, n_e: usize) -> Self {
        Self { x_dd: Mat::identity(n_d, n_d) * gamma_sq, x_de: Mat::zeros(n_d, n_e), x_ee: -Mat::identity(n_e, n_e) }
    }

    /// `s = 2 dᵀe` (requires `n_d = n_e`).
    pub fn passivity(n: usize) -> Self {
        Self { x_dd: Mat::zeros(n, n), x_de: Mat::identity(n, n), x_ee: Mat::zeros(n, n) }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { x_dd: &self.x_dd * s, x_de: &self.x_de * s, x_ee: &self.x_ee * s }
    }

    pub fn n_d(&self) -> usize {
        self.x_dd.nrows()
    }

    pub fn n_e(&self) -> usize {
        self.x_ee.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let (nd, ne) = (self.x_dd.nrows(), self.x_ee.nrows());
        check_shape("X_dd", &self.x_dd, nd, nd)?;
        check_shape("X_de", &self.x_de, nd, ne)?;
        check_shape("X_ee", &self.x_ee, ne, ne)?;
        linalg::check_symmetric(&self.x_dd, 1e-10)?;
        linalg::check_symmetric(&self.x_ee, 1e-10)?;
        Ok(())
    }

    pub fn matrix(&self) -> Mat {
        let (nd, ne) = (self.n_d(), self.n_e());
        let xt = self.x_de.transpose();
        linalg::block(&[nd, ne], &[nd, ne], &[&[Some(&self.x_dd), Some(&self.x_de)], &[Some(&xt), Some(&self.x_ee)]])
            .expect("validated shapes")
    }

    pub fn eval(&self, d: &Vector, e: &Vector) -> f64 {
        d.dot(&(&self.x_dd * d)) + 2.0 * d.dot(&(&self.x_de * e)) + e.dot(&(&self.x_ee * e))
    }
}

/// Storage `S(x) = xᵀPx` with the multipliers that certify it.
#[derive(Debug, Clone, PartialEq)]
pub struct StorageCertificate {
    pub p: Mat,
    /// Diagonal of the controller multiplier `Λ`.
    pub lambda: Vec<f64>,
    /// Plant IQC scaling `λ`.
    pub lambda_p: f64,
    /// `λ_max` of the dissipation LMI at the certificate.
    pub feasibility_residual: f64,
}

impl StorageCertificate {
    pub fn storage(&self, x: &Vector) -> f64 {
        x.dot(&(&self.p * x))
    }

    pub fn lambda_matrix(&self) -> Mat {
        linalg::diag(&self.lambda)
    }
}

/// Converts a plant to the generic system form, closing the loop with `k`
/// when given and otherwise dropping the `u`, `y` channels.
pub fn plant_to_system(p: &UncertainLtiPlant, k: Option<&RinnController>) -> Result<UncertainLtiSystem> {
    p.validate()?;
    match k {
        Some(k) => crate::interconnect::close_loop(p, k),
        None => Ok(UncertainLtiSystem {
            a: p.a_p.clone(),
            b_w: p.b_pw.clone(),
            b_d: p.b_pd.clone(),
            c_v: p.c_pv.clone(),
            d_vw: p.d_pvw.clone(),
            d_vd: p.d_pvd.clone(),
            c_e: p.c_pe.clone(),
            d_ew: p.d_pew.clone(),
            d_ed: p.d_ped.clone(),
            partition: None,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{diag, mat};

    fn scalar_controller(d_kvw: f64, d_kvy: f64) -> RinnController {
        let mut k = RinnController::zeros(ControllerDims { n_k: 0, n_phi: 1, n_y: 1, n_u: 1 }, Activation::Tanh);
        k.d_kvw = mat(1, 1, &[d_kvw]);
        k.d_kvy = mat(1, 1, &[d_kvy]);
        k.d_kuw = mat(1, 1, &[1.0]);
        k
    }

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (f(lo) < 0.0) == (f(mid) < 0.0) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn fixed_point_matches_bisection() {
        // w = tanh(0.5 w + 1)
        let k = scalar_controller(0.5, 1.0);
        let out = eval_controller(&k, &Vector::zeros(0), &Vector::from_element(1, 1.0), &FixedPointCfg::default()).unwrap();
        let oracle = bisect(|w| w - libm::tanh(0.5 * w + 1.0), -2.0, 2.0);
        assert!((out.w_k[0] - oracle).abs() < 1e-9);
        assert!(out.residual <= 1e-10);
    }

    #[test]
    fn zero_input_gives_zero_in_one_step() {
        let mut k = scalar_controller(0.0, 1.0);
        k.d_kvw = Mat::zeros(1, 1);
        let out = eval_controller(&k, &Vector::zeros(0), &Vector::zeros(1), &FixedPointCfg::default()).unwrap();
        assert_eq!(out.w_k[0], 0.0);
        assert!(out.iterations <= 1);
    }

    #[test]
    fn lti_controller_is_linear() {
        let mut k = RinnController::zeros(ControllerDims { n_k: 1, n_phi: 2, n_y: 1, n_u: 1 }, Activation::Zero);
        k.c_ku = mat(1, 1, &[2.0]);
        k.d_kuy = mat(1, 1, &[-3.0]);
        k.d_kuw = mat(1, 2, &[5.0, 7.0]);
        let out = eval_controller(&k, &Vector::from_element(1, 1.5), &Vector::from_element(1, 0.5), &FixedPointCfg::default())
            .unwrap();
        assert_eq!(out.u[0], 2.0 * 1.5 - 3.0 * 0.5);
    }

    #[test]
    fn strongly_coupled_layer_uses_newton() {
        // Picard with damping 0.5 oscillates for D = -3 but the fixed point is unique.
        let k = scalar_controller(-3.0, 1.0);
        let out = eval_controller(&k, &Vector::zeros(0), &Vector::from_element(1, 2.0), &FixedPointCfg::default()).unwrap();
        let oracle = bisect(|w| w - libm::tanh(-3.0 * w + 2.0), -2.0, 2.0);
        assert!((out.w_k[0] - oracle).abs() < 1e-9);
    }

    #[test]
    fn wellposedness_examples() {
        let mut k = RinnController::zeros(ControllerDims { n_k: 0, n_phi: 1, n_y: 0, n_u: 0 }, Activation::Tanh);
        assert!(check_wellposed(&k, &[1.0]));
        k.d_kvw = mat(1, 1, &[1.0]);
        assert!(!check_wellposed(&k, &[1.0]));
        let mut k3 = RinnController::zeros(ControllerDims { n_k: 0, n_phi: 3, n_y: 0, n_u: 0 }, Activation::Tanh);
        k3.d_kvw = diag(&[0.5, 0.5, 0.5]);
        assert!(check_wellposed(&k3, &[1.0, 2.0, 3.0]));
    }

    #[test]
    fn param_vector_round_trip() {
        let mut k = RinnController::zeros(ControllerDims { n_k: 2, n_phi: 3, n_y: 1, n_u: 1 }, Activation::Tanh);
        let params: Vec<f64> = (0..k.num_params()).map(|i| i as f64).collect();
        k = k.with_params(&params).unwrap();
        assert_eq!(k.to_vec(), params);
        assert_eq!(k.a_k[(0, 1)], 1.0);
    }

    #[test]
    fn supply_rate_eval() {
        let s = SupplyRate::l2_gain(4.0, 1, 1);
        let v = s.eval(&Vector::from_element(1, 1.0), &Vector::from_element(1, 1.0));
        assert_eq!(v, 3.0);
        assert_eq!(s.matrix(), diag(&[4.0, -1.0]));
    }
}
