//! Homogeneous self-dual primal-dual interior-point method with
//! Nesterov-Todd scaling and Mehrotra predictor-corrector steps.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::cones::{self, dot, ConicForm, Op, Scaling};
use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};

/// Solver tolerances and limits.
#[derive(Debug, Clone)]
pub struct SolverSettings {
    pub max_iter: usize,
    pub abstol: f64,
    pub reltol: f64,
    pub feastol: f64,
    /// Tolerances are multiplied by this when accepting a stalled iterate.
    pub inaccurate_factor: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { max_iter: 120, abstol: 1e-9, reltol: 1e-9, feastol: 1e-9, inaccurate_factor: 1e3 }
    }
}

pub(crate) enum RawOutcome {
    Optimal { x: Vec<f64>, iterations: usize, inaccurate: bool },
    PrimalInfeasible { residual: f64, iterations: usize },
    DualInfeasible,
}

fn nrm(v: &[f64]) -> f64 {
    libm::sqrt(dot(v, v))
}

/// Factored reduced KKT system for one scaling. The normal matrix
/// `GᵀW⁻¹W⁻ᵀG` is handled through a QR factorization of `W⁻ᵀG` so its
/// condition number is not squared.
struct Kkt {
    /// `W⁻ᵀ G`.
    m: Mat,
    /// Upper-triangular factor with `RᵀR = mᵀm + δI`, `δ = 0` unless rank-deficient.
    r: Mat,
    gram: Mat,
}

impl Kkt {
    fn new(g: &Mat, w: &Scaling) -> Option<Self> {
        let (rows, n) = g.shape();
        let mut m = Mat::zeros(rows, n);
        for j in 0..n {
            let col: Vec<f64> = g.column(j).iter().copied().collect();
            let sc = w.apply(Op::WinvT, &col);
            m.column_mut(j).copy_from_slice(&sc);
        }
        let mut gram = m.transpose() * &m;
        let r = m.clone().qr().r();
        let scale = (0..n).map(|i| r[(i, i)].abs()).fold(0.0_f64, f64::max);
        let r = if (0..n).all(|i| r[(i, i)].abs() > 1e-14 * scale) {
            r
        } else {
            // Rank-deficient: regularize with a small multiple of the identity.
            let dmax = (0..n).map(|i| gram[(i, i)]).fold(1.0_f64, f64::max);
            let reg = libm::sqrt(1e-13 * dmax);
            let mut aug = Mat::zeros(rows + n, n);
            aug.view_mut((0, 0), (rows, n)).copy_from(&m);
            for i in 0..n {
                aug[(rows + i, i)] = reg;
                gram[(i, i)] += reg * reg;
            }
            aug.qr().r()
        };
        if (0..n).any(|i| !(r[(i, i)].abs() > 0.0 && r[(i, i)].is_finite())) {
            return None;
        }
        Some(Self { m, r, gram })
    }

    fn normal_solve(&self, rhs: &Vector) -> Vector {
        let y = self.r.tr_solve_upper_triangular(rhs).expect("nonzero diagonal");
        self.r.solve_upper_triangular(&y).expect("nonzero diagonal")
    }

    fn solve_once(&self, w: &Scaling, r1: &[f64], r2: &[f64]) -> (Vector, Vector) {
        let b = Vector::from_vec(w.apply(Op::WinvT, r2));
        let rhs = Vector::from_column_slice(r1) + self.m.transpose() * &b;
        let mut x = self.normal_solve(&rhs);
        let res = &rhs - &self.gram * &x;
        x += self.normal_solve(&res);
        let zt = &self.m * &x - b;
        (x, zt)
    }

    /// Solves `Gᵀz = r1, Gx − WᵀWz = r2` and returns `(x, Wz)`, refining
    /// against the unreduced equations.
    fn solve(&self, g: &Mat, w: &Scaling, r1: &[f64], r2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (mut x, mut zt) = self.solve_once(w, r1, r2);
        let r1v = Vector::from_column_slice(r1);
        let r2v = Vector::from_column_slice(r2);
        for _ in 0..8 {
            let z = Vector::from_vec(w.apply(Op::Winv, zt.as_slice()));
            let wtzt = Vector::from_vec(w.apply(Op::Wt, zt.as_slice()));
            let e1 = &r1v - g.transpose() * &z;
            let e2 = &r2v - (g * &x - wtzt);
            let scale = 1.0 + r1v.amax().max(r2v.amax());
            if e1.amax().max(e2.amax()) <= 1e-15 * scale {
                break;
            }
            let (dx, dz) = self.solve_once(w, e1.as_slice(), e2.as_slice());
            x += dx;
            zt += dz;
        }
        (x.iter().copied().collect(), zt.iter().copied().collect())
    }
}

struct Residuals {
    pres: f64,
    dres: f64,
    gap: f64,
    relgap: Option<f64>,
    pinfres: Option<f64>,
    dinfres: Option<f64>,
    rx: Vec<f64>,
    rz: Vec<f64>,
    rt: f64,
}

pub(crate) fn solve(p: &ConicForm, st: &SolverSettings) -> Result<RawOutcome> {
    let n = p.n;
    let m = p.m();
    if m == 0 {
        // Unconstrained: bounded only if the objective is constant.
        return Ok(if p.c.iter().all(|&v| v == 0.0) {
            RawOutcome::Optimal { x: vec![0.0; n], iterations: 0, inaccurate: false }
        } else {
            RawOutcome::DualInfeasible
        });
    }
    let cones_v = &p.cones;
    let e = cones::identity(cones_v, m);
    let degree = p.degree() as f64;
    let resx0 = nrm(&p.c).max(1.0);
    let resz0 = nrm(&p.h).max(1.0);

    // Starting point from least-squares problems with identity scaling.
    let w0 = Scaling::identity(cones_v);
    let kkt0 = Kkt::new(&p.g, &w0).ok_or_else(|| Error::SolverNumericalFailure(format!("singular initial KKT system")))?;
    let zeros_m = vec![0.0; m];
    let neg_c: Vec<f64> = p.c.iter().map(|v| -v).collect();
    let (mut x, sneg) = kkt0.solve(&p.g, &w0, &vec![0.0; n], &p.h);
    let mut s: Vec<f64> = sneg.iter().map(|v| -v).collect();
    let (_, mut z) = kkt0.solve(&p.g, &w0, &neg_c, &zeros_m);
    let ts = cones::max_boundary_shift(cones_v, &s);
    let tz = cones::max_boundary_shift(cones_v, &z);
    let nrms = nrm(&s);
    let nrmz = nrm(&z);
    if ts >= -1e-8 * nrms.max(1.0) {
        for i in 0..m {
            s[i] += (1.0 + ts) * e[i];
        }
    }
    if tz >= -1e-8 * nrmz.max(1.0) {
        for i in 0..m {
            z[i] += (1.0 + tz) * e[i];
        }
    }
    let mut tau = 1.0;
    let mut kappa = 1.0;

    let (mut w, mut lambda) = Scaling::from_pair(cones_v, &s, &z)
        .ok_or_else(|| Error::SolverNumericalFailure(format!("initial point outside cone")))?;

    let residuals = |x: &[f64], s: &[f64], z: &[f64], tau: f64, kappa: f64| -> Residuals {
        let xv = Vector::from_column_slice(x);
        let zv = Vector::from_column_slice(z);
        let gtz = p.g.transpose() * &zv;
        let gx = &p.g * &xv;
        let rx: Vec<f64> = (0..n).map(|i| gtz[i] + p.c[i] * tau).collect();
        let rz: Vec<f64> = (0..m).map(|i| gx[i] + s[i] - p.h[i] * tau).collect();
        let cx = dot(&p.c, x);
        let hz = dot(&p.h, z);
        let rt = kappa + cx + hz;
        let pcost = cx / tau;
        let dcost = -hz / tau;
        let gap = dot(s, z) / (tau * tau);
        let relgap = if pcost < 0.0 {
            Some(gap / -pcost)
        } else if dcost > 0.0 {
            Some(gap / dcost)
        } else {
            None
        };
        let pinfres = if hz < 0.0 {
            let g: Vec<f64> = gtz.iter().copied().collect();
            Some(nrm(&g) / resx0 / -hz)
        } else {
            None
        };
        let dinfres = if cx < 0.0 {
            let r: Vec<f64> = (0..m).map(|i| gx[i] + s[i]).collect();
            Some(nrm(&r) / resz0 / -cx)
        } else {
            None
        };
        Residuals {
            pres: nrm(&rz) / tau / resz0,
            dres: nrm(&rx) / tau / resx0,
            gap,
            relgap,
            pinfres,
            dinfres,
            rx,
            rz,
            rt,
        }
    };

    let finish_optimal = |x: &[f64], tau: f64, it: usize, inaccurate: bool| RawOutcome::Optimal {
        x: x.iter().map(|v| v / tau).collect(),
        iterations: it,
        inaccurate,
    };

    let mut last: Option<Residuals> = None;
    for it in 0..=st.max_iter {
        let r = residuals(&x, &s, &z, tau, kappa);
        if r.pres <= st.feastol
            && r.dres <= st.feastol
            && (r.gap <= st.abstol || r.relgap.is_some_and(|g| g <= st.reltol))
        {
            return Ok(finish_optimal(&x, tau, it, false));
        }
        if let Some(pi) = r.pinfres {
            if pi <= st.feastol {
                return Ok(RawOutcome::PrimalInfeasible { residual: pi, iterations: it });
            }
        }
        if let Some(di) = r.dinfres {
            if di <= st.feastol {
                return Ok(RawOutcome::DualInfeasible);
            }
        }
        if it == st.max_iter {
            last = Some(r);
            break;
        }

        let kkt = match Kkt::new(&p.g, &w) {
            Some(k) => k,
            None => {
                last = Some(r);
                break;
            }
        };
        let (x1, z1t) = kkt.solve(&p.g, &w, &neg_c, &p.h);
        let wh = w.apply(Op::WinvT, &p.h);
        let cx1 = dot(&p.c, &x1);
        let hz1 = dot(&wh, &z1t);

        let ll = cones::jprod(cones_v, &lambda, &lambda);
        let mu = (dot(&lambda, &lambda) + tau * kappa) / (degree + 1.0);

        // Direction for a given centering target and correction.
        let direction = |eta: f64, rhs_c: &[f64], rt_c: f64| -> (Vec<f64>, Vec<f64>, Vec<f64>, f64, f64) {
            // Complementarity gives ds̃ + dz̃ = q.
            let q = cones::jdiv(cones_v, &lambda, rhs_c);
            let wq = w.apply(Op::Wt, &q);
            let r1: Vec<f64> = r.rx.iter().map(|v| -eta * v).collect();
            let r2: Vec<f64> = (0..m).map(|i| -eta * r.rz[i] - wq[i]).collect();
            let (x2, z2t) = kkt.solve(&p.g, &w, &r1, &r2);
            let cx2 = dot(&p.c, &x2);
            let hz2 = dot(&wh, &z2t);
            let dtau = (rt_c + tau * (eta * r.rt + cx2 + hz2)) / (kappa - tau * (cx1 + hz1));
            let dx: Vec<f64> = (0..n).map(|i| x2[i] + dtau * x1[i]).collect();
            let dzt: Vec<f64> = (0..m).map(|i| z2t[i] + dtau * z1t[i]).collect();
            let dst: Vec<f64> = (0..m).map(|i| q[i] - dzt[i]).collect();
            let dkappa = -eta * r.rt - dot(&p.c, &dx) - dot(&wh, &dzt);
            (dx, dst, dzt, dtau, dkappa)
        };

        let step_len = |dst: &[f64], dzt: &[f64], dtau: f64, dkappa: f64| -> f64 {
            let mut a = cones::max_step(cones_v, &lambda, dst).min(cones::max_step(cones_v, &lambda, dzt));
            if dtau < 0.0 {
                a = a.min(-tau / dtau);
            }
            if dkappa < 0.0 {
                a = a.min(-kappa / dkappa);
            }
            a
        };

        // Predictor.
        let rhs_aff: Vec<f64> = ll.iter().map(|v| -v).collect();
        let (_, dst_a, dzt_a, dtau_a, dkappa_a) = direction(1.0, &rhs_aff, -tau * kappa);
        let alpha_aff = step_len(&dst_a, &dzt_a, dtau_a, dkappa_a).min(1.0);
        let sigma = libm::pow(1.0 - alpha_aff, 3.0);
        let eta = 1.0 - sigma;

        // Corrector.
        let corr = cones::jprod(cones_v, &dst_a, &dzt_a);
        let rhs_c: Vec<f64> = (0..m).map(|i| -ll[i] + sigma * mu * e[i] - corr[i]).collect();
        let rt_c = -tau * kappa + sigma * mu - dtau_a * dkappa_a;
        let (dx, dst, dzt, dtau, dkappa) = direction(eta, &rhs_c, rt_c);
        let alpha = (0.99 * step_len(&dst, &dzt, dtau, dkappa)).min(1.0);
        if !(alpha > 1e-12) || dx.iter().any(|v| !v.is_finite()) {
            last = Some(r);
            break;
        }

        for i in 0..n {
            x[i] += alpha * dx[i];
        }
        tau += alpha * dtau;
        kappa += alpha * dkappa;
        let st_new: Vec<f64> = (0..m).map(|i| lambda[i] + alpha * dst[i]).collect();
        let zt_new: Vec<f64> = (0..m).map(|i| lambda[i] + alpha * dzt[i]).collect();
        s = w.apply(Op::Wt, &st_new);
        z = w.apply(Op::Winv, &zt_new);
        match w.update(&st_new, &zt_new) {
            Some(l) => lambda = l,
            None => {
                last = Some(residuals(&x, &s, &z, tau, kappa));
                break;
            }
        }
        // Keep the homogeneous scale bounded.
        if !(tau.is_finite() && kappa.is_finite()) {
            return Err(Error::SolverNumericalFailure(format!("non-finite homogenizing variable")));
        }
    }

    // Stalled or out of iterations: accept with relaxed tolerances.
    let r = last.unwrap_or_else(|| residuals(&x, &s, &z, tau, kappa));
    let f = st.inaccurate_factor;
    if r.pres <= f * st.feastol
        && r.dres <= f * st.feastol
        && (r.gap <= f * st.abstol || r.relgap.is_some_and(|g| g <= f * st.reltol))
    {
        return Ok(finish_optimal(&x, tau, st.max_iter, true));
    }
    if let Some(pi) = r.pinfres {
        if pi <= f * st.feastol {
            return Ok(RawOutcome::PrimalInfeasible { residual: pi, iterations: st.max_iter });
        }
    }
    if let Some(di) = r.dinfres {
        if di <= f * st.feastol {
            return Ok(RawOutcome::DualInfeasible);
        }
    }
    Err(Error::SolverNumericalFailure(format!(
        "stalled: pres {:.2e}, dres {:.2e}, gap {:.2e}, pinf {:?}",
        r.pres, r.dres, r.gap, r.pinfres
    )))
}
