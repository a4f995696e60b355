//! Dissipativity certificates: the storage-function LMI, its Schur form,
//! feasibility search over `(P, Λ, λ)` and trajectory checks.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{mismatch, Error, Result};
use crate::interconnect::AffineSystem;
use crate::iqc::{split_multiplier, CombinedMultiplier, IqcSpec};
use crate::iqc_transform::transform_system;
use crate::linalg::{self, Mat, Vector};
use crate::models::{StorageCertificate, SupplyRate, UncertainLtiSystem};
use crate::sdp::{solve_sdp, Affine, SdpOutcome, SdpProblem, FEAS_TOL};
use crate::simulate::{trapezoid, Trajectory};

fn factors(sys: &UncertainLtiSystem) -> (Mat, Mat) {
    let d = sys.dims();
    let total = d.n + d.n_w + d.n_d;
    let mut fm = Mat::zeros(d.n_v + d.n_w, total);
    fm.view_mut((0, 0), (d.n_v, d.n)).copy_from(&sys.c_v);
    fm.view_mut((0, d.n), (d.n_v, d.n_w)).copy_from(&sys.d_vw);
    fm.view_mut((0, d.n + d.n_w), (d.n_v, d.n_d)).copy_from(&sys.d_vd);
    fm.view_mut((d.n_v, d.n), (d.n_w, d.n_w)).fill_with_identity();
    let mut fx = Mat::zeros(d.n_d + d.n_e, total);
    fx.view_mut((0, d.n + d.n_w), (d.n_d, d.n_d)).fill_with_identity();
    fx.view_mut((d.n_d, 0), (d.n_e, d.n)).copy_from(&sys.c_e);
    fx.view_mut((d.n_d, d.n), (d.n_e, d.n_w)).copy_from(&sys.d_ew);
    fx.view_mut((d.n_d, d.n + d.n_w), (d.n_e, d.n_d)).copy_from(&sys.d_ed);
    (fm, fx)
}

/// Left-hand side of the storage-function inequality over `(x, w, d)`:
/// `[[AᵀP+PA, PB_w, PB_d], [B_wᵀP, 0, 0], [B_dᵀP, 0, 0]] + λ F_Mᵀ M F_M − F_Xᵀ X F_X`.
pub fn lemma1_lhs(sys: &UncertainLtiSystem, m: &Mat, x: &SupplyRate, p: &Mat, lambda: f64) -> Result<Mat> {
    let d = sys.validate()?;
    x.validate()?;
    if p.nrows() != d.n || p.ncols() != d.n {
        return Err(mismatch("P must match the state dimension"));
    }
    if m.nrows() != d.n_v + d.n_w || m.ncols() != d.n_v + d.n_w {
        return Err(mismatch("M must cover (v, w)"));
    }
    if x.n_d() != d.n_d || x.n_e() != d.n_e {
        return Err(mismatch("supply rate must cover (d, e)"));
    }
    let total = d.n + d.n_w + d.n_d;
    let mut t1 = Mat::zeros(total, total);
    let pa = p * &sys.a;
    t1.view_mut((0, 0), (d.n, d.n)).copy_from(&(&pa + pa.transpose()));
    let pb = linalg::hcat(d.n, &[&(p * &sys.b_w), &(p * &sys.b_d)])?;
    t1.view_mut((0, d.n), (d.n, d.n_w + d.n_d)).copy_from(&pb);
    t1.view_mut((d.n, 0), (d.n_w + d.n_d, d.n)).copy_from(&pb.transpose());
    let (fm, fx) = factors(sys);
    let out = t1 + fm.transpose() * m * &fm * lambda - fx.transpose() * x.matrix() * &fx;
    Ok(linalg::symmetrize(&out))
}

/// Same matrix with `P` and `M` given as affine expressions.
pub fn lemma1_lhs_affine(sys: &UncertainLtiSystem, m: &Affine, x: &SupplyRate, p: &Affine) -> Result<Affine> {
    let d = sys.validate()?;
    let (fm, fx) = factors(sys);
    let pa = p.rmul(&sys.a);
    let pbw = p.rmul(&sys.b_w);
    let pbd = p.rmul(&sys.b_d);
    let t1 = Affine::blocks(
        &[d.n, d.n_w, d.n_d],
        &[d.n, d.n_w, d.n_d],
        vec![(0, 0, pa.sym()), (0, 1, pbw.clone()), (1, 0, pbw.transpose()), (0, 2, pbd.clone()), (2, 0, pbd.transpose())],
    );
    let quad = m.lmul(&fm.transpose()).rmul(&fm);
    Ok((t1 + quad).add_constant(&(-(fx.transpose() * x.matrix() * &fx))))
}

/// `L_X` with `X_ee = −L_XᵀL_X`.
pub fn supply_factor(x: &SupplyRate) -> Result<Mat> {
    linalg::factor_gram(&(-&x.x_ee), 1e-12).map_err(|_| Error::InvalidArgument("X_ee must be negative semidefinite".into()))
}

/// Schur form of the storage inequality given the factors `L_Δ`, `L_X`,
/// affine in the system blocks for fixed `P` and multipliers. Rows and
/// columns are `(x, w, d, L_Δ-rows, L_X-rows)`.
pub fn bmi_lhs_affine(
    sys: &AffineSystem,
    p: &Mat,
    m_vw: &Mat,
    m_ww: &Mat,
    l_delta: &Mat,
    x: &SupplyRate,
    l_x: &Mat,
) -> Result<Affine> {
    let n = p.nrows();
    let nw = m_ww.nrows();
    let nd = x.n_d();
    let nv = m_vw.nrows();
    if sys.a.rows() != n || sys.b_w.cols() != nw || sys.b_d.cols() != nd || sys.c_v.rows() != nv {
        return Err(mismatch("Schur-form blocks"));
    }
    let sizes = [n, nw, nd];
    let cat = |a: &Affine, b: &Affine, c: &Affine| -> Affine {
        let r = a.rows();
        Affine::blocks(&[r], &sizes, vec![(0, 0, a.clone()), (0, 1, b.clone()), (0, 2, c.clone())])
    };
    let pa = sys.a.lmul(p);
    let pbw = sys.b_w.lmul(p);
    let pbd = sys.b_d.lmul(p);
    let t1 = Affine::blocks(
        &sizes,
        &sizes,
        vec![(0, 0, pa.sym()), (0, 1, pbw.clone()), (1, 0, pbw.transpose()), (0, 2, pbd.clone()), (2, 0, pbd.transpose())],
    );
    let v_row = cat(&sys.c_v, &sys.d_vw, &sys.d_vd);
    let e_row = cat(&sys.c_e, &sys.d_ew, &sys.d_ed);
    let total = n + nw + nd;
    let mut sel_w = Mat::zeros(nw, total);
    sel_w.view_mut((0, n), (nw, nw)).fill_with_identity();
    let mut sel_d = Mat::zeros(nd, total);
    sel_d.view_mut((0, n + nw), (nd, nd)).fill_with_identity();
    // (⋆)ᵀ[[0, M_vw],[M_vwᵀ, M_ww]][v-row; w-sel]
    let m_term = v_row.transpose().rmul(&(m_vw * &sel_w)).sym().add_constant(&(sel_w.transpose() * m_ww * &sel_w));
    // −(⋆)ᵀ[[X_dd, X_de],[X_deᵀ, 0]][d-sel; e-row]
    let x_term = e_row.transpose().rmul(&(&x.x_de.transpose() * &sel_d)).sym().add_constant(&(sel_d.transpose() * &x.x_dd * &sel_d));
    let f = t1 + m_term - x_term;
    let ld = v_row.lmul(l_delta);
    let lx = e_row.lmul(l_x);
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

/// Numeric Schur form for a closed loop and combined multiplier.
pub fn bmi_lhs(sys: &UncertainLtiSystem, p: &Mat, cm: &CombinedMultiplier, x: &SupplyRate) -> Result<Mat> {
    sys.validate()?;
    let l_x = supply_factor(x)?;
    let f = bmi_lhs_affine(&AffineSystem::constant(sys), p, &cm.m_vw, &cm.m_ww, &cm.l_delta, x, &l_x)?;
    Ok(linalg::symmetrize(&f.eval(&[])))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    /// Require `P ⪰ eps_p·I` instead of `P ⪰ 0`.
    pub strict: bool,
    pub eps_p: f64,
    /// Upper bound on `P`, the plant scaling and the controller multiplier entries.
    pub multiplier_max: f64,
    /// Fix the plant scaling `λ` instead of searching over it.
    pub fixed_lambda_p: Option<f64>,
    /// Feasible when the optimal LMI bound is at most this.
    pub feas_tol: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { strict: true, eps_p: 1e-6, multiplier_max: 1e6, fixed_lambda_p: None, feas_tol: FEAS_TOL }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Feasible(StorageCertificate),
    /// No certificate; `t_star` is the smallest achievable `λ_max` bound.
    Infeasible { t_star: f64 },
}

impl Verdict {
    pub fn certificate(&self) -> Option<&StorageCertificate> {
        match self {
            Verdict::Feasible(c) => Some(c),
            Verdict::Infeasible { .. } => None,
        }
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self, Verdict::Feasible(_))
    }
}

/// Embeds the plant multiplier and `Λ` into the combined layout over
/// `(v_p, v_k, w_p, w_k)` for diagonal entries `lambda`.
pub fn combined_matrix(m_dp: &Mat, n_vp: usize, lambda_p: f64, lambda: &[f64]) -> Result<Mat> {
    let (vv, vw, ww) = split_multiplier(m_dp, n_vp)?;
    let (nvp, nwp, nk) = (n_vp, ww.nrows(), lambda.len());
    let l = linalg::diag(lambda);
    let sizes = [nvp, nk, nwp, nk];
    let vwt = vw.transpose();
    let l2 = &l * -2.0;
    let vv = &vv * lambda_p;
    let vw = &vw * lambda_p;
    let vwt = &vwt * lambda_p;
    let ww = &ww * lambda_p;
    linalg::block(
        &sizes,
        &sizes,
        &[
            &[Some(&vv), None, Some(&vw), None],
            &[None, None, None, Some(&l)],
            &[Some(&vwt), None, Some(&ww), None],
            &[None, Some(&l), None, Some(&l2)],
        ],
    )
}

/// Searches for `(P, Λ, λ)` certifying dissipativity of `sys` under the plant
/// uncertainty description and `n_phi` sector-bounded controller channels
/// placed last in `v` and `w`.
pub fn verify(sys: &UncertainLtiSystem, plant_iqc: &IqcSpec, n_phi: usize, x: &SupplyRate, opts: &VerifyOptions) -> Result<Verdict> {
    let d = sys.validate()?;
    plant_iqc.validate()?;
    if let Some(part) = sys.partition {
        if part.n_phi != n_phi {
            return Err(mismatch("controller channel count differs from the loop partition"));
        }
    }
    if let IqcSpec::Dynamic(q) = plant_iqc {
        if n_phi != 0 {
            return Err(Error::InvalidArgument(
                "dynamic plant IQCs must be transformed before closing the loop".into(),
            ));
        }
        let (t, _) = transform_system(sys, q)?;
        return verify(&t, &IqcSpec::Static { m: q.multiplier() }, 0, x, opts);
    }
    if n_phi > d.n_v || n_phi > d.n_w {
        return Err(mismatch("more controller channels than uncertainty channels"));
    }
    let (n_vp, n_wp) = (d.n_v - n_phi, d.n_w - n_phi);
    let m_dp = plant_iqc.multiplier();
    if m_dp.nrows() != n_vp + n_wp {
        return Err(mismatch("plant multiplier must cover (v_p, w_p)"));
    }

    let mut prob = SdpProblem::new();
    let p = prob.symmetric(d.n);
    let lam = prob.diagonal(n_phi);
    let t = prob.scalar();
    let plant_embed = combined_matrix(&m_dp, n_vp, 1.0, &vec![0.0; n_phi])?;
    let sizes = [n_vp, n_phi, n_wp, n_phi];
    let ctrl = Affine::blocks(
        &sizes,
        &sizes,
        vec![(1, 3, lam.expr()), (3, 1, lam.expr()), (3, 3, lam.expr().scale(-2.0))],
    );
    let (m_expr, lp_var) = match opts.fixed_lambda_p {
        Some(v) => (ctrl.add_constant(&(&plant_embed * v)), None),
        None => {
            let lp = prob.scalar();
            prob.nonneg("lambda_p >= 0", lp.expr())?;
            prob.nonneg("lambda_p <= max", Affine::scalar(opts.multiplier_max) - lp.expr())?;
            (ctrl + lp.expr().scalar_times(&plant_embed), Some(lp))
        }
    };
    let lhs = lemma1_lhs_affine(sys, &m_expr, x, &p.expr())?;
    let size = lhs.rows();
    prob.nsd("storage LMI", lhs - t.expr().scalar_times(&linalg::eye(size)))?;
    let p_floor = if opts.strict { opts.eps_p } else { 0.0 };
    prob.psd("P", p.expr() - Affine::constant(linalg::eye(d.n) * p_floor))?;
    prob.psd("P <= max", Affine::constant(linalg::eye(d.n) * opts.multiplier_max) - p.expr())?;
    if n_phi > 0 {
        prob.nonneg("Lambda >= 0", lam.expr().diagonal())?;
        prob.nonneg("Lambda <= max", (Affine::constant(linalg::eye(n_phi) * opts.multiplier_max) - lam.expr()).diagonal())?;
    }
    prob.nonneg("t >= -1", t.expr() + Affine::scalar(1.0))?;
    prob.minimize(t.expr())?;

    let sol = match solve_sdp(&prob)? {
        SdpOutcome::Solved(s) => s,
        SdpOutcome::Infeasible(_) | SdpOutcome::Unbounded => {
            return Err(Error::SolverNumericalFailure("certificate search reported a degenerate outcome".into()))
        }
    };
    let t_star = sol.scalar(&t);
    let p_val = linalg::symmetrize(&sol.value(&p));
    let lambda: Vec<f64> = {
        let l = sol.value(&lam);
        (0..n_phi).map(|i| l[(i, i)].max(0.0)).collect()
    };
    let lambda_p = match lp_var {
        Some(v) => sol.scalar(&v).max(0.0),
        None => opts.fixed_lambda_p.unwrap_or(1.0),
    };
    let m = combined_matrix(&m_dp, n_vp, lambda_p, &lambda)?;
    let residual = linalg::max_eigenvalue(&lemma1_lhs(sys, &m, x, &p_val, 1.0)?);
    let p_ok = linalg::min_eigenvalue(&p_val) >= p_floor - opts.feas_tol;
    if t_star <= opts.feas_tol && residual <= opts.feas_tol && p_ok {
        Ok(Verdict::Feasible(StorageCertificate { p: p_val, lambda, lambda_p, feasibility_residual: residual }))
    } else {
        Ok(Verdict::Infeasible { t_star })
    }
}

/// `S(x(T)) − S(x(0)) − ∫ s(d, e) dt` by the trapezoidal rule on samples
/// taken every `dt`.
pub fn dissipation_residual(cert: &StorageCertificate, x: &SupplyRate, states: &[Vector], d: &[Vector], e: &[Vector], dt: f64) -> Result<f64> {
    if states.len() != d.len() || d.len() != e.len() {
        return Err(mismatch("trajectory sequences must have equal length"));
    }
    if states.is_empty() {
        return Ok(0.0);
    }
    let s: Vec<f64> = d.iter().zip(e).map(|(di, ei)| x.eval(di, ei)).collect();
    let first = &states[0];
    let last = &states[states.len() - 1];
    Ok(cert.storage(last) - cert.storage(first) - trapezoid(&s, dt))
}

/// [`dissipation_residual`] over the closed-loop state of a rollout.
pub fn trajectory_dissipation_residual(cert: &StorageCertificate, x: &SupplyRate, tr: &Trajectory) -> Result<f64> {
    dissipation_residual(cert, x, &tr.closed_loop_states(), &tr.d, &tr.e, tr.dt)
}
