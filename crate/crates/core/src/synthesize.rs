//! Convex synthesis of dissipative controllers: the change of variables
//! `θ̂ = (S, R, N_A, N_B, N_C, D_kuw, D̂_kvy, D̂_kvw, Λ)`, the LMI it turns
//! the storage inequality into, controller reconstruction, and the two
//! projections used during training.

use alloc::vec;
use alloc::vec::Vec;

use crate::certify::{bmi_lhs_affine, supply_factor};
use crate::error::{mismatch, Error, Result};
use crate::interconnect::{close_loop_affine, ThetaAffine};
use crate::iqc::split_multiplier;
use crate::linalg::{self, Mat};
use crate::models::{Activation, ControllerDims, PlantDims, RinnController, SupplyRate, Theta, UncertainLtiPlant};
use crate::sdp::{solve_sdp, Affine, SdpOutcome, SdpProblem, SdpSolution, Var, EPS_STRICT, FEAS_TOL};

/// Lower bound on every entry of `Λ` in the synthesis programs.
pub const EPS_LAMBDA: f64 = 1e-6;
const COND_PARTITION: f64 = 1e10;
const COND_UV: f64 = 1e8;

pub const THETA_HAT_BLOCK_NAMES: [&str; 12] =
    ["S", "R", "N_A11", "N_A12", "N_A21", "N_A22", "N_B", "N_C", "D_kuw", "D_hat_kvy", "D_hat_kvw", "Lambda"];

/// Convexified decision variables. `N_A` is stored by its four blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaHat {
    pub s: Mat,
    pub r: Mat,
    pub n_a11: Mat,
    pub n_a12: Mat,
    pub n_a21: Mat,
    pub n_a22: Mat,
    pub n_b: Mat,
    pub n_c: Mat,
    pub d_kuw: Mat,
    pub d_hat_kvy: Mat,
    pub d_hat_kvw: Mat,
    /// Diagonal of `Λ`.
    pub lambda: Vec<f64>,
}

impl ThetaHat {
    pub fn zeros(pd: PlantDims, n_phi: usize) -> Self {
        let (n, ny, nu) = (pd.n_p, pd.n_y, pd.n_u);
        let z = Mat::zeros;
        Self {
            s: z(n, n),
            r: z(n, n),
            n_a11: z(n, n),
            n_a12: z(n, ny),
            n_a21: z(nu, n),
            n_a22: z(nu, ny),
            n_b: z(n, n_phi),
            n_c: z(n_phi, n),
            d_kuw: z(nu, n_phi),
            d_hat_kvy: z(n_phi, ny),
            d_hat_kvw: z(n_phi, n_phi),
            lambda: vec![0.0; n_phi],
        }
    }

    /// Matrix blocks in [`THETA_HAT_BLOCK_NAMES`] order, `Λ` as a diagonal matrix.
    pub fn blocks(&self) -> [Mat; 12] {
        [
            self.s.clone(),
            self.r.clone(),
            self.n_a11.clone(),
            self.n_a12.clone(),
            self.n_a21.clone(),
            self.n_a22.clone(),
            self.n_b.clone(),
            self.n_c.clone(),
            self.d_kuw.clone(),
            self.d_hat_kvy.clone(),
            self.d_hat_kvw.clone(),
            linalg::diag(&self.lambda),
        ]
    }

    pub fn n_a(&self) -> Mat {
        let (n, ny, nu) = (self.s.nrows(), self.n_a12.ncols(), self.n_a21.nrows());
        linalg::block(
            &[n, nu],
            &[n, ny],
            &[&[Some(&self.n_a11), Some(&self.n_a12)], &[Some(&self.n_a21), Some(&self.n_a22)]],
        )
        .expect("consistent blocks")
    }

    /// Unweighted Frobenius distance over all blocks.
    pub fn distance(&self, other: &Self) -> f64 {
        let mut acc = 0.0;
        for (a, b) in self.blocks().iter().zip(other.blocks().iter()) {
            acc += (a - b).norm_squared();
        }
        libm::sqrt(acc)
    }

    /// Largest entrywise difference over all blocks.
    pub fn max_deviation(&self, other: &Self) -> f64 {
        self.blocks().iter().zip(other.blocks().iter()).map(|(a, b)| linalg::max_abs(&(a - b))).fold(0.0, f64::max)
    }

    /// Smallest eigenvalue of `[[R, t I], [t I, S]]`.
    pub fn coupling_margin(&self, t_rs: f64) -> f64 {
        let n = self.s.nrows();
        let ti = linalg::eye(n) * t_rs;
        let m = linalg::block(&[n, n], &[n, n], &[&[Some(&self.r), Some(&ti)], &[Some(&ti), Some(&self.s)]])
            .expect("square blocks");
        linalg::min_eigenvalue(&m)
    }
}

/// Plant in static-IQC form with the multiplier, supply rate and synthesis
/// settings.
#[derive(Debug, Clone)]
pub struct SynthesisProblem {
    pub plant: UncertainLtiPlant,
    /// Plant multiplier over `(v_p, w_p)` with its scaling folded in.
    pub m_dp: Mat,
    pub supply: SupplyRate,
    pub n_phi: usize,
    pub activation: Activation,
    pub t_rs: f64,
    /// Strictness margin of the synthesis LMIs.
    pub eps: f64,
    /// Cap on the maximized coupling margin.
    pub eps_rs_cap: f64,
    m_vw_p: Mat,
    m_ww_p: Mat,
    l_dp: Mat,
    l_x: Mat,
}

impl SynthesisProblem {
    pub fn new(plant: UncertainLtiPlant, m_dp: Mat, supply: SupplyRate, n_phi: usize, t_rs: f64) -> Result<Self> {
        let pd = plant.validate()?;
        supply.validate()?;
        linalg::check_symmetric(&m_dp, 1e-10)?;
        if m_dp.nrows() != pd.n_v + pd.n_w {
            return Err(mismatch("plant multiplier must cover (v_p, w_p)"));
        }
        if supply.n_d() != pd.n_d || supply.n_e() != pd.n_e {
            return Err(mismatch("supply rate must cover (d, e)"));
        }
        if !(t_rs > 0.0) {
            return Err(Error::InvalidArgument("t_RS must be positive".into()));
        }
        let (vv, vw, ww) = split_multiplier(&m_dp, pd.n_v)?;
        let l_dp = match linalg::factor_gram(&vv, 1e-12) {
            Ok(l) => l,
            Err(Error::NotPsd { min_eigenvalue }) => return Err(Error::MvvNotPsd { min_eigenvalue }),
            Err(e) => return Err(e),
        };
        let l_x = supply_factor(&supply)?;
        Ok(Self {
            plant,
            m_dp,
            supply,
            n_phi,
            activation: Activation::Tanh,
            t_rs,
            eps: EPS_STRICT,
            eps_rs_cap: 10.0,
            m_vw_p: vw,
            m_ww_p: ww,
            l_dp,
            l_x,
        })
    }

    pub fn dims(&self) -> PlantDims {
        self.plant.dims()
    }

    pub fn controller_dims(&self) -> ControllerDims {
        let pd = self.dims();
        ControllerDims { n_k: pd.n_p, n_phi: self.n_phi, n_y: pd.n_y, n_u: pd.n_u }
    }

    /// `L_Δp` with `L_ΔpᵀL_Δp = M_Δpvv`.
    pub fn l_delta_p(&self) -> &Mat {
        &self.l_dp
    }

    pub fn l_x(&self) -> &Mat {
        &self.l_x
    }

    /// `(M_vw, M_ww, L_Δ)` of the combined multiplier for a given `Λ`.
    pub fn combined_blocks(&self, lambda: &[f64]) -> Result<(Mat, Mat, Mat)> {
        if lambda.len() != self.n_phi {
            return Err(mismatch("Λ size"));
        }
        let l = linalg::diag(lambda);
        let k = self.n_phi;
        let (nvp, nwp) = (self.m_vw_p.nrows(), self.m_vw_p.ncols());
        let m_vw = linalg::block(&[nvp, k], &[nwp, k], &[&[Some(&self.m_vw_p), None], &[None, Some(&l)]])?;
        let m_ww = linalg::block_diag(&[&self.m_ww_p, &(&l * -2.0)]);
        let l_delta = linalg::hcat(self.l_dp.nrows(), &[&self.l_dp, &Mat::zeros(self.l_dp.nrows(), k)])?;
        Ok((m_vw, m_ww, l_delta))
    }
}

/// `θ̂` blocks as affine expressions.
#[derive(Debug, Clone)]
pub struct ThetaHatExpr {
    pub s: Affine,
    pub r: Affine,
    pub n_a11: Affine,
    pub n_a12: Affine,
    pub n_a21: Affine,
    pub n_a22: Affine,
    pub n_b: Affine,
    pub n_c: Affine,
    pub d_kuw: Affine,
    pub d_hat_kvy: Affine,
    pub d_hat_kvw: Affine,
    /// `Λ` as a diagonal matrix expression.
    pub lambda: Affine,
}

impl ThetaHatExpr {
    pub fn constant(t: &ThetaHat) -> Self {
        let c = |m: &Mat| Affine::constant(m.clone());
        Self {
            s: c(&t.s),
            r: c(&t.r),
            n_a11: c(&t.n_a11),
            n_a12: c(&t.n_a12),
            n_a21: c(&t.n_a21),
            n_a22: c(&t.n_a22),
            n_b: c(&t.n_b),
            n_c: c(&t.n_c),
            d_kuw: c(&t.d_kuw),
            d_hat_kvy: c(&t.d_hat_kvy),
            d_hat_kvw: c(&t.d_hat_kvw),
            lambda: Affine::constant(linalg::diag(&t.lambda)),
        }
    }

    fn blocks(&self) -> [&Affine; 12] {
        [
            &self.s,
            &self.r,
            &self.n_a11,
            &self.n_a12,
            &self.n_a21,
            &self.n_a22,
            &self.n_b,
            &self.n_c,
            &self.d_kuw,
            &self.d_hat_kvy,
            &self.d_hat_kvw,
            &self.lambda,
        ]
    }
}

fn row(sizes: &[usize], parts: Vec<Affine>) -> Affine {
    let r = parts[0].rows();
    Affine::blocks(&[r], sizes, parts.into_iter().enumerate().map(|(j, a)| (0, j, a)).collect())
}

fn col(sizes: &[usize], parts: Vec<Affine>) -> Affine {
    let c = parts[0].cols();
    Affine::blocks(sizes, &[c], parts.into_iter().enumerate().map(|(i, a)| (i, 0, a)).collect())
}

/// The congruence-transformed Schur-form inequality, assembled from the
/// block expansions in the convexified variables. Rows and columns are
/// `(Y-coordinates, w, d, L_Δ-rows, L_X-rows)`.
pub fn synthesis_lmi_affine(prob: &SynthesisProblem, t: &ThetaHatExpr) -> Result<Affine> {
    let p = &prob.plant;
    let pd = prob.dims();
    let (n, nwp, nd, k) = (pd.n_p, pd.n_w, pd.n_d, prob.n_phi);
    let nw = nwp + k;
    let c = |m: &Mat| Affine::constant(m.clone());

    let ypay = Affine::blocks(
        &[n, n],
        &[n, n],
        vec![
            (0, 0, t.r.lmul(&p.a_p) + t.n_a21.lmul(&p.b_pu)),
            (0, 1, c(&p.a_p) + t.n_a22.lmul(&p.b_pu).rmul(&p.c_py)),
            (1, 0, t.n_a11.clone()),
            (1, 1, t.s.rmul(&p.a_p) + t.n_a12.rmul(&p.c_py)),
        ],
    );
    let ypbw = Affine::blocks(
        &[n, n],
        &[nwp, k],
        vec![
            (0, 0, c(&p.b_pw) + t.n_a22.lmul(&p.b_pu).rmul(&p.d_pyw)),
            (0, 1, t.d_kuw.lmul(&p.b_pu)),
            (1, 0, t.s.rmul(&p.b_pw) + t.n_a12.rmul(&p.d_pyw)),
            (1, 1, t.n_b.clone()),
        ],
    );
    let ypbd = col(
        &[n, n],
        vec![c(&p.b_pd) + t.n_a22.lmul(&p.b_pu).rmul(&p.d_pyd), t.s.rmul(&p.b_pd) + t.n_a12.rmul(&p.d_pyd)],
    );

    let sizes = [2 * n, nw, nd];
    let total = 2 * n + nw + nd;
    let t1 = Affine::blocks(
        &sizes,
        &sizes,
        vec![(0, 0, ypay.sym()), (0, 1, ypbw.clone()), (1, 0, ypbw.transpose()), (0, 2, ypbd.clone()), (2, 0, ypbd.transpose())],
    );

    // Plant rows of [C_vY, D_vw, D_vd].
    let v_row_p = row(
        &sizes,
        vec![
            row(&[n, n], vec![t.r.lmul(&p.c_pv) + t.n_a21.lmul(&p.d_pvu), c(&p.c_pv) + t.n_a22.lmul(&p.d_pvu).rmul(&p.c_py)]),
            row(&[nwp, k], vec![c(&p.d_pvw) + t.n_a22.lmul(&p.d_pvu).rmul(&p.d_pyw), t.d_kuw.lmul(&p.d_pvu)]),
            c(&p.d_pvd) + t.n_a22.lmul(&p.d_pvu).rmul(&p.d_pyd),
        ],
    );
    // Controller rows of M_vwᵀ[C_vY, D_vw, D_vd].
    let v_row_k = row(
        &sizes,
        vec![
            row(&[n, n], vec![t.n_c.clone(), t.d_hat_kvy.rmul(&p.c_py)]),
            row(&[nwp, k], vec![t.d_hat_kvy.rmul(&p.d_pyw), t.d_hat_kvw.clone()]),
            t.d_hat_kvy.rmul(&p.d_pyd),
        ],
    );
    let mvw_t_v = col(&[nwp, k], vec![v_row_p.lmul(&prob.m_vw_p.transpose()), v_row_k]);
    let mut sel_w = Mat::zeros(nw, total);
    sel_w.view_mut((0, 2 * n), (nw, nw)).fill_with_identity();
    let m_ww = Affine::blocks(&[nwp, k], &[nwp, k], vec![(0, 0, c(&prob.m_ww_p)), (1, 1, t.lambda.scale(-2.0))]);
    let m_term = mvw_t_v.lmul(&sel_w.transpose()).sym() + m_ww.lmul(&sel_w.transpose()).rmul(&sel_w);

    let e_row = row(
        &sizes,
        vec![
            row(&[n, n], vec![t.r.lmul(&p.c_pe) + t.n_a21.lmul(&p.d_peu), c(&p.c_pe) + t.n_a22.lmul(&p.d_peu).rmul(&p.c_py)]),
            row(&[nwp, k], vec![c(&p.d_pew) + t.n_a22.lmul(&p.d_peu).rmul(&p.d_pyw), t.d_kuw.lmul(&p.d_peu)]),
            c(&p.d_ped) + t.n_a22.lmul(&p.d_peu).rmul(&p.d_pyd),
        ],
    );
    let x = &prob.supply;
    let mut sel_d = Mat::zeros(nd, total);
    sel_d.view_mut((0, 2 * n + nw), (nd, nd)).fill_with_identity();
    let x_term = e_row
        .lmul(&(sel_d.transpose() * &x.x_de))
        .sym()
        .add_constant(&(sel_d.transpose() * &x.x_dd * &sel_d));

    let f = t1 + m_term - x_term;
    let ld = v_row_p.lmul(&prob.l_dp);
    let lx = e_row.lmul(&prob.l_x);
    let (r1, r2) = (ld.rows(), lx.rows());
    Ok(Affine::blocks(
        &[total, r1, r2],
        &[total, r1, r2],
        vec![
            (0, 0, f),
            (1, 0, ld.clone()),
            (0, 1, ld.transpose()),
            (2, 0, lx.clone()),
            (0, 2, lx.transpose()),
            (1, 1, Affine::constant(-linalg::eye(r1))),
            (2, 2, Affine::constant(-linalg::eye(r2))),
        ],
    ))
}

/// Numeric value of [`synthesis_lmi_affine`] at `θ̂`.
pub fn synthesis_lmi_lhs(prob: &SynthesisProblem, th: &ThetaHat) -> Result<Mat> {
    check_theta_hat_shape(prob, th)?;
    Ok(linalg::symmetrize(&synthesis_lmi_affine(prob, &ThetaHatExpr::constant(th))?.eval(&[])))
}

fn check_theta_hat_shape(prob: &SynthesisProblem, th: &ThetaHat) -> Result<()> {
    let want = ThetaHat::zeros(prob.dims(), prob.n_phi);
    for ((a, b), name) in th.blocks().iter().zip(want.blocks().iter()).zip(THETA_HAT_BLOCK_NAMES) {
        if a.shape() != b.shape() {
            return Err(Error::DimensionMismatch(alloc::format!("θ̂ block {name}")));
        }
    }
    Ok(())
}

/// `Y = [[R, I], [Vᵀ, 0]]`.
pub fn y_matrix(r: &Mat, v: &Mat) -> Mat {
    let n = r.nrows();
    let eye = linalg::eye(n);
    let vt = v.transpose();
    linalg::block(&[n, n], &[n, n], &[&[Some(r), Some(&eye)], &[Some(&vt), None]]).expect("square blocks")
}

/// The change of variables with explicit partition blocks `S, R, U, V`; no
/// conditioning checks.
pub fn construct_theta_hat_unchecked(p: &UncertainLtiPlant, k: &Theta, s: &Mat, r: &Mat, u: &Mat, v: &Mat, lambda: &[f64]) -> ThetaHat {
    let l = linalg::diag(lambda);
    let vt = v.transpose();
    let cpr = &p.c_py * r;
    let sbpu = s * &p.b_pu;
    ThetaHat {
        s: s.clone(),
        r: r.clone(),
        n_a11: s * &p.a_p * r + u * &k.a_k * &vt + u * &k.b_ky * &cpr + &sbpu * &k.c_ku * &vt + &sbpu * &k.d_kuy * &cpr,
        n_a12: u * &k.b_ky + &sbpu * &k.d_kuy,
        n_a21: &k.c_ku * &vt + &k.d_kuy * &cpr,
        n_a22: k.d_kuy.clone(),
        n_b: &sbpu * &k.d_kuw + u * &k.b_kw,
        n_c: &l * &k.d_kvy * &cpr + &l * &k.c_kv * &vt,
        d_kuw: k.d_kuw.clone(),
        d_hat_kvy: &l * &k.d_kvy,
        d_hat_kvw: &l * &k.d_kvw,
        lambda: lambda.to_vec(),
    }
}

/// `θ̂` for a controller, storage matrix and multiplier, reading `S, U`
/// from `P` and `R, V` from `P⁻¹`.
pub fn construct_theta_hat(p: &UncertainLtiPlant, k: &Theta, pm: &Mat, lambda: &[f64]) -> Result<ThetaHat> {
    let pd = p.validate()?;
    let n = pd.n_p;
    if k.a_k.nrows() != n || pm.nrows() != 2 * n || pm.ncols() != 2 * n {
        return Err(mismatch("controller order must equal plant order and P must be 2n_p square"));
    }
    if lambda.len() != k.d_kvw.nrows() {
        return Err(mismatch("Λ size"));
    }
    let pinv = linalg::inverse(pm).map_err(|_| Error::SingularPartition { condition: f64::INFINITY })?;
    let s = linalg::sub(pm, 0, 0, n, n);
    let u = linalg::sub(pm, 0, n, n, n);
    let r = linalg::sub(&pinv, 0, 0, n, n);
    let v = linalg::sub(&pinv, 0, n, n, n);
    let irs = linalg::eye(n) - &r * &s;
    let c = linalg::cond(&irs);
    if !(c <= COND_PARTITION) {
        return Err(Error::SingularPartition { condition: c });
    }
    Ok(construct_theta_hat_unchecked(p, k, &linalg::symmetrize(&s), &linalg::symmetrize(&r), &u, &v, lambda))
}

/// Controller, storage matrix and multiplier recovered from `θ̂`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub theta: Theta,
    pub p: Mat,
    pub lambda: Vec<f64>,
    pub u: Mat,
    pub v: Mat,
}

/// Inverts the change of variables. `U`, `V` come from the SVD
/// `I − RS = WΣZᵀ` as `V = WΣ^½`, `U = ZΣ^½`.
pub fn reconstruct_theta(th: &ThetaHat, p: &UncertainLtiPlant, activation: Activation) -> Result<Reconstruction> {
    let pd = p.validate()?;
    let n = pd.n_p;
    if th.s.nrows() != n || th.r.nrows() != n {
        return Err(mismatch("θ̂ state blocks must match the plant order"));
    }
    if th.lambda.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidArgument("Λ must be positive definite".into()));
    }
    let irs = linalg::eye(n) - &th.r * &th.s;
    let c = linalg::cond(&irs);
    if !(c <= COND_PARTITION) {
        return Err(Error::SingularIminusRS { condition: c });
    }
    let svd = irs.clone().svd(true, true);
    let w = svd.u.ok_or(Error::NoConvergence)?;
    let zt = svd.v_t.ok_or(Error::NoConvergence)?;
    let half = Mat::from_diagonal(&svd.singular_values.map(libm::sqrt));
    let v = &w * &half;
    let u = zt.transpose() * &half;
    let (cu, cv) = (linalg::cond(&u), linalg::cond(&v));
    if !(cu <= COND_UV && cv <= COND_UV) {
        return Err(Error::IllConditionedUV { cond_u: cu, cond_v: cv });
    }
    let uinv = linalg::inverse(&u)?;
    let vinv_t = linalg::inverse(&v)?.transpose();
    let linv = linalg::diag(&th.lambda.iter().map(|l| 1.0 / l).collect::<Vec<_>>());
    let (s, r) = (&th.s, &th.r);
    let cpr = &p.c_py * r;
    let sbpu = s * &p.b_pu;

    let d_kvy = &linv * &th.d_hat_kvy;
    let d_kvw = &linv * &th.d_hat_kvw;
    let d_kuy = th.n_a22.clone();
    let d_kuw = th.d_kuw.clone();
    let c_kv = &linv * (&th.n_c - &th.d_hat_kvy * &cpr) * &vinv_t;
    let b_kw = &uinv * (&th.n_b - &sbpu * &d_kuw);
    let c_ku = (&th.n_a21 - &d_kuy * &cpr) * &vinv_t;
    let b_ky = &uinv * (&th.n_a12 - &sbpu * &d_kuy);
    let a_k = &uinv
        * (&th.n_a11 - s * &p.a_p * r - &u * &b_ky * &cpr - &sbpu * &c_ku * v.transpose() - &sbpu * &d_kuy * &cpr)
        * &vinv_t;

    let y = y_matrix(r, &v);
    let yinv = linalg::inverse(&y)?;
    let ut = u.transpose();
    let left = linalg::block(&[n, n], &[n, n], &[&[Some(&linalg::eye(n)), Some(s)], &[None, Some(&ut)]])?;
    let pm = linalg::symmetrize(&(left * yinv));

    let theta = RinnController { a_k, b_kw, b_ky, c_kv, d_kvw, d_kvy, c_ku, d_kuw, d_kuy, activation };
    Ok(Reconstruction { theta, p: pm, lambda: th.lambda.clone(), u, v })
}

struct HatVars {
    s: Var,
    r: Var,
    blocks: Vec<Option<Var>>,
    lambda: Var,
}

fn hat_vars(prob: &SynthesisProblem, sdp: &mut SdpProblem, lti_only: bool) -> (HatVars, ThetaHatExpr) {
    let pd = prob.dims();
    let (n, ny, nu, k) = (pd.n_p, pd.n_y, pd.n_u, prob.n_phi);
    let s = sdp.symmetric(n);
    let r = sdp.symmetric(n);
    let shapes = [(n, n), (n, ny), (nu, n), (nu, ny), (n, k), (k, n), (nu, k), (k, ny), (k, k)];
    let blocks: Vec<Option<Var>> =
        shapes.iter().enumerate().map(|(i, &(a, b))| if lti_only && i >= 4 { None } else { Some(sdp.matrix(a, b)) }).collect();
    let lambda = sdp.diagonal(k);
    let e = |i: usize| match blocks[i] {
        Some(v) => v.expr(),
        None => Affine::zeros(shapes[i].0, shapes[i].1),
    };
    let expr = ThetaHatExpr {
        s: s.expr(),
        r: r.expr(),
        n_a11: e(0),
        n_a12: e(1),
        n_a21: e(2),
        n_a22: e(3),
        n_b: e(4),
        n_c: e(5),
        d_kuw: e(6),
        d_hat_kvy: e(7),
        d_hat_kvw: e(8),
        lambda: lambda.expr(),
    };
    (HatVars { s, r, blocks, lambda }, expr)
}

fn read_hat(prob: &SynthesisProblem, vars: &HatVars, sol: &SdpSolution) -> ThetaHat {
    let mut th = ThetaHat::zeros(prob.dims(), prob.n_phi);
    th.s = linalg::symmetrize(&sol.value(&vars.s));
    th.r = linalg::symmetrize(&sol.value(&vars.r));
    let targets: [&mut Mat; 9] = [
        &mut th.n_a11,
        &mut th.n_a12,
        &mut th.n_a21,
        &mut th.n_a22,
        &mut th.n_b,
        &mut th.n_c,
        &mut th.d_kuw,
        &mut th.d_hat_kvy,
        &mut th.d_hat_kvw,
    ];
    for (t, v) in targets.into_iter().zip(&vars.blocks) {
        if let Some(v) = v {
            *t = sol.value(v);
        }
    }
    let l = sol.value(&vars.lambda);
    th.lambda = (0..prob.n_phi).map(|i| l[(i, i)]).collect();
    th
}

/// Adds the membership constraints of the convexified set. The coupling
/// margin is `eps_rs` (an expression) so stage two can maximize it.
fn add_set_constraints(prob: &SynthesisProblem, sdp: &mut SdpProblem, e: &ThetaHatExpr, eps_rs: Affine) -> Result<()> {
    let n = prob.dims().n_p;
    let k = prob.n_phi;
    let eps = prob.eps;
    let lmi = synthesis_lmi_affine(prob, e)?;
    let size = lmi.rows();
    sdp.nsd("synthesis LMI", lmi + Affine::constant(linalg::eye(size) * eps))?;
    sdp.psd("S", e.s.clone() - Affine::constant(linalg::eye(n) * eps))?;
    sdp.psd("R", e.r.clone() - Affine::constant(linalg::eye(n) * eps))?;
    let ti = Affine::constant(linalg::eye(n) * prob.t_rs);
    let coupling = Affine::blocks(&[n, n], &[n, n], vec![(0, 0, e.r.clone()), (0, 1, ti.clone()), (1, 0, ti), (1, 1, e.s.clone())]);
    sdp.psd("coupling", coupling - eps_rs.scalar_times(&linalg::eye(2 * n)))?;
    if k > 0 {
        sdp.nonneg("Lambda floor", e.lambda.diagonal() - Affine::constant(Mat::from_element(k, 1, EPS_LAMBDA)))?;
        let wp = e.d_hat_kvw.sym() - e.lambda.scale(2.0) + Affine::constant(linalg::eye(k) * eps);
        sdp.nsd("well-posedness", wp)?;
    }
    Ok(())
}

fn hat_diffs(e: &ThetaHatExpr, target: &ThetaHat) -> Vec<Affine> {
    let tb = target.blocks();
    e.blocks()
        .iter()
        .zip(tb.iter())
        .enumerate()
        .map(|(i, (a, t))| {
            if i == 11 {
                (*a).clone().diagonal() - Affine::constant(Mat::from_column_slice(t.nrows(), 1, &target.lambda))
            } else {
                (*a).clone() - Affine::constant(t.clone())
            }
        })
        .collect()
}

/// Result of the two-stage projection onto the convexified set.
#[derive(Debug, Clone, PartialEq)]
pub struct HatProjection {
    pub theta_hat: ThetaHat,
    /// `‖θ̂ − θ̂′‖_F` of the returned point.
    pub distance: f64,
    /// Optimal first-stage distance.
    pub delta_star: f64,
    /// Coupling margin achieved by the returned point.
    pub eps_rs: f64,
}

/// Projects `target` onto the convexified dissipative set: first the
/// closest point, then the point with the largest coupling margin within
/// `β` times that distance. With `lti_only` the neural blocks stay zero.
pub fn theta_hat_project(prob: &SynthesisProblem, target: &ThetaHat, beta: f64, lti_only: bool) -> Result<HatProjection> {
    check_theta_hat_shape(prob, target)?;
    if !(beta >= 1.0) {
        return Err(Error::InvalidArgument("backoff factor must be at least 1".into()));
    }
    let mut sdp = SdpProblem::new();
    let (vars, e) = hat_vars(prob, &mut sdp, lti_only);
    add_set_constraints(prob, &mut sdp, &e, Affine::scalar(prob.eps))?;
    let t = sdp.frobenius_epigraph("distance", hat_diffs(&e, target))?;
    sdp.minimize(t.expr())?;
    let first = match solve_sdp(&sdp)? {
        SdpOutcome::Solved(s) => s,
        SdpOutcome::Infeasible(_) => return Err(Error::InfeasibleConstraintSet),
        SdpOutcome::Unbounded => return Err(Error::SolverNumericalFailure("projection reported unbounded".into())),
    };
    let th1 = read_hat(prob, &vars, &first);
    let delta_star = th1.distance(target);

    let mut sdp2 = SdpProblem::new();
    let (vars2, e2) = hat_vars(prob, &mut sdp2, lti_only);
    let eps_rs = sdp2.scalar();
    add_set_constraints(prob, &mut sdp2, &e2, eps_rs.expr())?;
    sdp2.nonneg("eps_rs cap", Affine::scalar(prob.eps_rs_cap) - eps_rs.expr())?;
    let radius = beta * delta_star + 0.5 * FEAS_TOL;
    sdp2.soc("distance budget", Affine::scalar(radius), hat_diffs(&e2, target))?;
    sdp2.maximize(eps_rs.expr())?;
    let th = match solve_sdp(&sdp2) {
        Ok(SdpOutcome::Solved(s)) => {
            let th2 = read_hat(prob, &vars2, &s);
            let ok = th2.distance(target) <= radius + FEAS_TOL
                && th2.coupling_margin(prob.t_rs) >= th1.coupling_margin(prob.t_rs) - FEAS_TOL
                && s.max_violation <= FEAS_TOL;
            if ok { th2 } else { th1 }
        }
        _ => th1,
    };
    Ok(HatProjection { distance: th.distance(target), delta_star, eps_rs: th.coupling_margin(prob.t_rs), theta_hat: th })
}

fn theta_vars(prob: &SynthesisProblem, sdp: &mut SdpProblem, lti_only: bool) -> (Vec<Option<Var>>, ThetaAffine) {
    let kd = prob.controller_dims();
    let template = RinnController::zeros(kd, prob.activation);
    let neural = [1usize, 3, 4, 5, 7];
    let vars: Vec<Option<Var>> = template
        .blocks()
        .iter()
        .enumerate()
        .map(|(i, m)| if lti_only && neural.contains(&i) { None } else { Some(sdp.matrix(m.nrows(), m.ncols())) })
        .collect();
    let shapes: Vec<(usize, usize)> = template.blocks().iter().map(|m| (m.nrows(), m.ncols())).collect();
    let e = |i: usize| match vars[i] {
        Some(v) => v.expr(),
        None => Affine::zeros(shapes[i].0, shapes[i].1),
    };
    let t = ThetaAffine {
        a_k: e(0),
        b_kw: e(1),
        b_ky: e(2),
        c_kv: e(3),
        d_kvw: e(4),
        d_kvy: e(5),
        c_ku: e(6),
        d_kuw: e(7),
        d_kuy: e(8),
    };
    (vars, t)
}

/// Closest controller to `target` that the fixed `(P, Λ)` certifies, with
/// the well-posedness condition `ΛD_kvw + D_kvwᵀΛ − 2Λ ≺ 0`.
pub fn theta_project(prob: &SynthesisProblem, target: &Theta, p: &Mat, lambda: &[f64], lti_only: bool) -> Result<(Theta, f64)> {
    let kd = prob.controller_dims();
    if target.dims() != kd {
        return Err(mismatch("controller shape differs from the synthesis problem"));
    }
    let n = 2 * kd.n_k;
    if p.nrows() != n || p.ncols() != n {
        return Err(mismatch("P must be square over the closed-loop state"));
    }
    let mut sdp = SdpProblem::new();
    let (vars, t) = theta_vars(prob, &mut sdp, lti_only);
    let sys = close_loop_affine(&prob.plant, &t, kd.n_k, kd.n_phi)?;
    let (m_vw, m_ww, l_delta) = prob.combined_blocks(lambda)?;
    let lmi = bmi_lhs_affine(&sys, p, &m_vw, &m_ww, &l_delta, &prob.supply, &prob.l_x)?;
    sdp.nsd("certified by (P, Λ)", lmi)?;
    if kd.n_phi > 0 {
        let l = linalg::diag(lambda);
        let wp = t.d_kvw.lmul(&l).sym() - Affine::constant(&l * 2.0) + Affine::constant(linalg::eye(kd.n_phi) * prob.eps);
        sdp.nsd("well-posedness", wp)?;
    }
    let diffs: Vec<Affine> =
        t.blocks().iter().zip(target.blocks().iter()).map(|(a, m)| (*a).clone() - Affine::constant((*m).clone())).collect();
    let dist = sdp.frobenius_epigraph("distance", diffs)?;
    sdp.minimize(dist.expr())?;
    let sol = match solve_sdp(&sdp)? {
        SdpOutcome::Solved(s) => s,
        SdpOutcome::Infeasible(_) => return Err(Error::InfeasibleForCertificate),
        SdpOutcome::Unbounded => return Err(Error::SolverNumericalFailure("projection reported unbounded".into())),
    };
    let mut out = RinnController::zeros(kd, target.activation);
    for (b, v) in out.blocks_mut().into_iter().zip(&vars) {
        if let Some(v) = v {
            *b = sol.value(v);
        }
    }
    let d = out.distance(target);
    Ok((out, d))
}

/// LTI initialization result.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiInit {
    pub theta: Theta,
    pub p: Mat,
    pub lambda: Vec<f64>,
    pub projection: HatProjection,
}

/// Seed `θ̂` corresponding to `θ = 0`, `P = I`, `Λ = 0`.
pub fn init_seed(prob: &SynthesisProblem) -> ThetaHat {
    let pd = prob.dims();
    let mut th = ThetaHat::zeros(pd, prob.n_phi);
    th.s = linalg::eye(pd.n_p);
    th.r = linalg::eye(pd.n_p);
    th.n_a11 = prob.plant.a_p.clone();
    th
}

/// Synthesizes a certified LTI controller by projecting [`init_seed`] with
/// the neural blocks held at zero and reconstructing.
pub fn init_lti(prob: &SynthesisProblem, beta: f64) -> Result<LtiInit> {
    let proj = theta_hat_project(prob, &init_seed(prob), beta, true)?;
    let rec = reconstruct_theta(&proj.theta_hat, &prob.plant, prob.activation)?;
    Ok(LtiInit { theta: rec.theta, p: rec.p, lambda: rec.lambda, projection: proj })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certify::{verify, VerifyOptions};
    use crate::interconnect::close_loop;
    use crate::iqc::IqcSpec;
    use crate::linalg::mat;
    use crate::simulate::{pendulum_env, PendulumParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pendulum_problem(n_phi: usize) -> SynthesisProblem {
        let (_, plant) = pendulum_env(&PendulumParams::default());
        SynthesisProblem::new(plant, mat(2, 2, &[0.0, 1.0, 1.0, -2.0]), SupplyRate::stability(0, 2), n_phi, 1.5).unwrap()
    }

    fn random_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, s: f64) -> Mat {
        Mat::from_fn(r, c, |_, _| rng.random_range(-s..s))
    }

    fn random_theta(rng: &mut ChaCha8Rng, kd: ControllerDims) -> Theta {
        let mut k = RinnController::zeros(kd, Activation::Tanh);
        for b in k.blocks_mut() {
            *b = random_mat(rng, b.nrows(), b.ncols(), 0.5);
        }
        k
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Mat {
        let g = random_mat(rng, n, n, 1.0);
        &g * g.transpose() + linalg::eye(n) * 0.5
    }

    #[test]
    fn lmi_is_congruent_to_schur_form() {
        let prob = pendulum_problem(3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let k = random_theta(&mut rng, prob.controller_dims());
            let pm = random_spd(&mut rng, 4);
            let lambda: Vec<f64> = (0..3).map(|_| rng.random_range(0.2..2.0)).collect();
            let th = construct_theta_hat(&prob.plant, &k, &pm, &lambda).unwrap();

            let pinv = linalg::inverse(&pm).unwrap();
            let y = y_matrix(&linalg::sub(&pinv, 0, 0, 2, 2), &linalg::sub(&pinv, 0, 2, 2, 2));
            let sys = close_loop(&prob.plant, &k).unwrap();
            let (m_vw, m_ww, l_delta) = prob.combined_blocks(&lambda).unwrap();
            let bmi = bmi_lhs_affine(&crate::interconnect::AffineSystem::constant(&sys), &pm, &m_vw, &m_ww, &l_delta, &prob.supply, prob.l_x())
                .unwrap()
                .eval(&[]);
            let rest = bmi.nrows() - 4;
            let t = linalg::block_diag(&[&y, &linalg::eye(rest)]);
            let oracle = t.transpose() * bmi * &t;
            let lmi = synthesis_lmi_lhs(&prob, &th).unwrap();
            let scale = 1.0 + linalg::max_abs(&oracle);
            assert!(linalg::max_abs(&(lmi - oracle)) / scale < 1e-10);
        }
    }

    #[test]
    fn reconstruction_round_trip() {
        let prob = pendulum_problem(2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let k = random_theta(&mut rng, prob.controller_dims());
            let pm = random_spd(&mut rng, 4);
            let lambda = vec![0.7, 1.3];
            let th = construct_theta_hat(&prob.plant, &k, &pm, &lambda).unwrap();
            let rec = reconstruct_theta(&th, &prob.plant, Activation::Tanh).unwrap();
            let th2 = construct_theta_hat_unchecked(&prob.plant, &rec.theta, &th.s, &th.r, &rec.u, &rec.v, &rec.lambda);
            assert!(th.max_deviation(&th2) < 1e-8);
            let rec2 = reconstruct_theta(&th2, &prob.plant, Activation::Tanh).unwrap();
            assert!(rec.theta.distance(&rec2.theta) < 1e-8);
            assert!(linalg::max_abs(&(&rec.p - &rec2.p)) < 1e-8);
            // P Y = [[I, S], [0, Uᵀ]]
            let py = &rec.p * y_matrix(&th.r, &rec.v);
            assert!(linalg::max_abs(&(linalg::sub(&py, 0, 0, 2, 2) - linalg::eye(2))) < 1e-8);
        }
    }

    #[test]
    fn singular_partition_is_rejected() {
        let prob = pendulum_problem(1);
        let mut th = ThetaHat::zeros(prob.dims(), 1);
        th.s = linalg::eye(2);
        th.r = linalg::eye(2);
        th.lambda = vec![1.0];
        assert!(matches!(reconstruct_theta(&th, &prob.plant, Activation::Tanh), Err(Error::SingularIminusRS { .. })));
    }

    #[test]
    fn lti_init_is_certified() {
        let prob = pendulum_problem(2);
        let init = init_lti(&prob, 1.05).unwrap();
        assert!(init.theta.is_lti());
        let lmi = synthesis_lmi_lhs(&prob, &init.projection.theta_hat).unwrap();
        assert!(linalg::max_eigenvalue(&lmi) <= 1e-6);
        let sys = close_loop(&prob.plant, &init.theta).unwrap();
        let v = verify(&sys, &IqcSpec::Static { m: prob.m_dp.clone() }, 2, &prob.supply, &VerifyOptions::default()).unwrap();
        assert!(v.is_feasible());
        let eig = sys.a.clone().complex_eigenvalues();
        assert!(eig.iter().all(|z| z.re < 0.0));
    }

    #[test]
    fn theta_projection_keeps_certificate() {
        let prob = pendulum_problem(2);
        let init = init_lti(&prob, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let target = random_theta(&mut rng, prob.controller_dims());
        let (k, dist) = theta_project(&prob, &target, &init.p, &init.lambda, false).unwrap();
        assert!((k.distance(&target) - dist).abs() < 1e-9);
        let sys = close_loop(&prob.plant, &k).unwrap();
        let (m_vw, m_ww, l_delta) = prob.combined_blocks(&init.lambda).unwrap();
        let bmi = bmi_lhs_affine(&crate::interconnect::AffineSystem::constant(&sys), &init.p, &m_vw, &m_ww, &l_delta, &prob.supply, prob.l_x())
            .unwrap()
            .eval(&[]);
        assert!(linalg::max_eigenvalue(&linalg::symmetrize(&bmi)) <= 1e-6);
        assert!(crate::models::check_wellposed(&k, &init.lambda));
    }
}
