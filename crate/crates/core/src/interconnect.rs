//! Plant/controller feedback interconnection.

use alloc::vec::Vec;

use crate::error::{mismatch, Result};
use crate::linalg::{self, Mat, Vector};
use crate::models::{LoopPartition, RinnController, UncertainLtiPlant, UncertainLtiSystem};
use crate::sdp::{Affine, SdpProblem};

fn check_compatible(p: &UncertainLtiPlant, k: &RinnController) -> Result<()> {
    let pd = p.validate()?;
    let kd = k.validate()?;
    if kd.n_y != pd.n_y || kd.n_u != pd.n_u {
        return Err(mismatch("controller (n_y, n_u) does not match plant"));
    }
    Ok(())
}

fn partition(p: &UncertainLtiPlant, k: &RinnController) -> LoopPartition {
    let pd = p.dims();
    let kd = k.dims();
    LoopPartition { n_p: pd.n_p, n_k: kd.n_k, n_vp: pd.n_v, n_wp: pd.n_w, n_phi: kd.n_phi }
}

/// Closed loop with `x = (x_p, x_k)`, `v = (v_p, v_k)`, `w = (w_p, w_k)`.
pub fn close_loop(p: &UncertainLtiPlant, k: &RinnController) -> Result<UncertainLtiSystem> {
    check_compatible(p, k)?;
    let pd = p.dims();
    let kd = k.dims();
    let (np, nk, nvp, nwp, nphi, nd, ne) = (pd.n_p, kd.n_k, pd.n_v, pd.n_w, kd.n_phi, pd.n_d, pd.n_e);
    let blk = |rs: &[usize], cs: &[usize], b: &[&[Option<&Mat>]]| linalg::block(rs, cs, b);

    let a11 = &p.a_p + &p.b_pu * &k.d_kuy * &p.c_py;
    let a12 = &p.b_pu * &k.c_ku;
    let a21 = &k.b_ky * &p.c_py;
    let a = blk(&[np, nk], &[np, nk], &[&[Some(&a11), Some(&a12)], &[Some(&a21), Some(&k.a_k)]])?;

    let bw11 = &p.b_pw + &p.b_pu * &k.d_kuy * &p.d_pyw;
    let bw12 = &p.b_pu * &k.d_kuw;
    let bw21 = &k.b_ky * &p.d_pyw;
    let b_w = blk(&[np, nk], &[nwp, nphi], &[&[Some(&bw11), Some(&bw12)], &[Some(&bw21), Some(&k.b_kw)]])?;

    let bd1 = &p.b_pd + &p.b_pu * &k.d_kuy * &p.d_pyd;
    let bd2 = &k.b_ky * &p.d_pyd;
    let b_d = blk(&[np, nk], &[nd], &[&[Some(&bd1)], &[Some(&bd2)]])?;

    let cv11 = &p.c_pv + &p.d_pvu * &k.d_kuy * &p.c_py;
    let cv12 = &p.d_pvu * &k.c_ku;
    let cv21 = &k.d_kvy * &p.c_py;
    let c_v = blk(&[nvp, nphi], &[np, nk], &[&[Some(&cv11), Some(&cv12)], &[Some(&cv21), Some(&k.c_kv)]])?;

    let dvw11 = &p.d_pvw + &p.d_pvu * &k.d_kuy * &p.d_pyw;
    let dvw12 = &p.d_pvu * &k.d_kuw;
    let dvw21 = &k.d_kvy * &p.d_pyw;
    let d_vw = blk(&[nvp, nphi], &[nwp, nphi], &[&[Some(&dvw11), Some(&dvw12)], &[Some(&dvw21), Some(&k.d_kvw)]])?;

    let dvd1 = &p.d_pvd + &p.d_pvu * &k.d_kuy * &p.d_pyd;
    let dvd2 = &k.d_kvy * &p.d_pyd;
    let d_vd = blk(&[nvp, nphi], &[nd], &[&[Some(&dvd1)], &[Some(&dvd2)]])?;

    let ce1 = &p.c_pe + &p.d_peu * &k.d_kuy * &p.c_py;
    let ce2 = &p.d_peu * &k.c_ku;
    let c_e = blk(&[ne], &[np, nk], &[&[Some(&ce1), Some(&ce2)]])?;

    let dew1 = &p.d_pew + &p.d_peu * &k.d_kuy * &p.d_pyw;
    let dew2 = &p.d_peu * &k.d_kuw;
    let d_ew = blk(&[ne], &[nwp, nphi], &[&[Some(&dew1), Some(&dew2)]])?;

    let d_ed = &p.d_ped + &p.d_peu * &k.d_kuy * &p.d_pyd;

    Ok(UncertainLtiSystem { a, b_w, b_d, c_v, d_vw, d_vd, c_e, d_ew, d_ed, partition: Some(partition(p, k)) })
}

/// The same interconnection obtained by solving the loop equations for
/// `(u, y)` numerically, one basis input at a time.
pub fn close_loop_oracle(p: &UncertainLtiPlant, k: &RinnController) -> Result<UncertainLtiSystem> {
    check_compatible(p, k)?;
    let pd = p.dims();
    let kd = k.dims();
    let (np, nk, nvp, nwp, nphi, nd, ne, nu, ny) =
        (pd.n_p, kd.n_k, pd.n_v, pd.n_w, kd.n_phi, pd.n_d, pd.n_e, pd.n_u, pd.n_y);
    // Loop equations in z = (u, y):  u − D_kuy y = C_ku x_k + D_kuw w_k,  y = C_py x_p + D_pyw w_p + D_pyd d.
    let mut lhs = Mat::identity(nu + ny, nu + ny);
    lhs.view_mut((0, nu), (nu, ny)).copy_from(&(-&k.d_kuy));
    let lu = lhs.lu();

    let n_in = np + nk + nwp + nphi + nd;
    let n_out = np + nk + nvp + nphi + ne;
    let mut full = Mat::zeros(n_out, n_in);
    for col in 0..n_in {
        let mut s = Vector::zeros(n_in);
        s[col] = 1.0;
        let xp = s.rows(0, np).into_owned();
        let xk = s.rows(np, nk).into_owned();
        let wp = s.rows(np + nk, nwp).into_owned();
        let wk = s.rows(np + nk + nwp, nphi).into_owned();
        let d = s.rows(np + nk + nwp + nphi, nd).into_owned();
        let mut rhs = Vector::zeros(nu + ny);
        rhs.rows_mut(0, nu).copy_from(&(&k.c_ku * &xk + &k.d_kuw * &wk));
        rhs.rows_mut(nu, ny).copy_from(&(&p.c_py * &xp + &p.d_pyw * &wp + &p.d_pyd * &d));
        let z = lu.solve(&rhs).ok_or_else(|| mismatch("singular loop equations"))?;
        let u = z.rows(0, nu).into_owned();
        let y = z.rows(nu, ny).into_owned();
        let xp_dot = &p.a_p * &xp + &p.b_pw * &wp + &p.b_pd * &d + &p.b_pu * &u;
        let xk_dot = &k.a_k * &xk + &k.b_kw * &wk + &k.b_ky * &y;
        let vp = &p.c_pv * &xp + &p.d_pvw * &wp + &p.d_pvd * &d + &p.d_pvu * &u;
        let vk = &k.c_kv * &xk + &k.d_kvw * &wk + &k.d_kvy * &y;
        let e = &p.c_pe * &xp + &p.d_pew * &wp + &p.d_ped * &d + &p.d_peu * &u;
        let mut out = Vec::with_capacity(n_out);
        out.extend(xp_dot.iter());
        out.extend(xk_dot.iter());
        out.extend(vp.iter());
        out.extend(vk.iter());
        out.extend(e.iter());
        for (r, v) in out.into_iter().enumerate() {
            full[(r, col)] = v;
        }
    }
    let n = np + nk;
    let nv = nvp + nphi;
    let nw = nwp + nphi;
    let s = |r: usize, c: usize, rows: usize, cols: usize| linalg::sub(&full, r, c, rows, cols);
    Ok(UncertainLtiSystem {
        a: s(0, 0, n, n),
        b_w: s(0, n, n, nw),
        b_d: s(0, n + nw, n, nd),
        c_v: s(n, 0, nv, n),
        d_vw: s(n, n, nv, nw),
        d_vd: s(n, n + nw, nv, nd),
        c_e: s(n + nv, 0, ne, n),
        d_ew: s(n + nv, n, ne, nw),
        d_ed: s(n + nv, n + nw, ne, nd),
        partition: Some(partition(p, k)),
    })
}

/// Controller blocks as affine expressions of SDP decision variables.
#[derive(Debug, Clone)]
pub struct ThetaAffine {
    pub a_k: Affine,
    pub b_kw: Affine,
    pub b_ky: Affine,
    pub c_kv: Affine,
    pub d_kvw: Affine,
    pub d_kvy: Affine,
    pub c_ku: Affine,
    pub d_kuw: Affine,
    pub d_kuy: Affine,
}

impl ThetaAffine {
    /// Constant expressions equal to `k`.
    pub fn constant(k: &RinnController) -> Self {
        let c = |m: &Mat| Affine::constant(m.clone());
        Self {
            a_k: c(&k.a_k),
            b_kw: c(&k.b_kw),
            b_ky: c(&k.b_ky),
            c_kv: c(&k.c_kv),
            d_kvw: c(&k.d_kvw),
            d_kvy: c(&k.d_kvy),
            c_ku: c(&k.c_ku),
            d_kuw: c(&k.d_kuw),
            d_kuy: c(&k.d_kuy),
        }
    }

    pub fn blocks(&self) -> [&Affine; 9] {
        [&self.a_k, &self.b_kw, &self.b_ky, &self.c_kv, &self.d_kvw, &self.d_kvy, &self.c_ku, &self.d_kuw, &self.d_kuy]
    }
}

/// Closed-loop blocks as affine expressions.
#[derive(Debug, Clone)]
pub struct AffineSystem {
    pub a: Affine,
    pub b_w: Affine,
    pub b_d: Affine,
    pub c_v: Affine,
    pub d_vw: Affine,
    pub d_vd: Affine,
    pub c_e: Affine,
    pub d_ew: Affine,
    pub d_ed: Affine,
}

impl AffineSystem {
    pub fn constant(s: &UncertainLtiSystem) -> Self {
        let c = |m: &Mat| Affine::constant(m.clone());
        Self {
            a: c(&s.a),
            b_w: c(&s.b_w),
            b_d: c(&s.b_d),
            c_v: c(&s.c_v),
            d_vw: c(&s.d_vw),
            d_vd: c(&s.d_vd),
            c_e: c(&s.c_e),
            d_ew: c(&s.d_ew),
            d_ed: c(&s.d_ed),
        }
    }

    pub fn eval(&self, x: &[f64], partition: Option<LoopPartition>) -> UncertainLtiSystem {
        UncertainLtiSystem {
            a: self.a.eval(x),
            b_w: self.b_w.eval(x),
            b_d: self.b_d.eval(x),
            c_v: self.c_v.eval(x),
            d_vw: self.d_vw.eval(x),
            d_vd: self.d_vd.eval(x),
            c_e: self.c_e.eval(x),
            d_ew: self.d_ew.eval(x),
            d_ed: self.d_ed.eval(x),
            partition,
        }
    }
}

/// Closed loop with the controller given as affine expressions; the result
/// is affine because the plant has no `(y, u)` feedthrough.
pub fn close_loop_affine(p: &UncertainLtiPlant, t: &ThetaAffine, n_k: usize, n_phi: usize) -> Result<AffineSystem> {
    let pd = p.validate()?;
    let (np, nvp, nwp, nd, ne) = (pd.n_p, pd.n_v, pd.n_w, pd.n_d, pd.n_e);
    let shapes: [(usize, usize); 9] = [
        (n_k, n_k),
        (n_k, n_phi),
        (n_k, pd.n_y),
        (n_phi, n_k),
        (n_phi, n_phi),
        (n_phi, pd.n_y),
        (pd.n_u, n_k),
        (pd.n_u, n_phi),
        (pd.n_u, pd.n_y),
    ];
    for (b, (r, c)) in t.blocks().iter().zip(shapes) {
        if b.rows() != r || b.cols() != c {
            return Err(mismatch("controller expression shape"));
        }
    }
    let c = |m: &Mat| Affine::constant(m.clone());
    let kuy = &t.d_kuy;
    let a = Affine::blocks(
        &[np, n_k],
        &[np, n_k],
        alloc::vec![
            (0, 0, c(&p.a_p) + kuy.lmul(&p.b_pu).rmul(&p.c_py)),
            (0, 1, t.c_ku.lmul(&p.b_pu)),
            (1, 0, t.b_ky.rmul(&p.c_py)),
            (1, 1, t.a_k.clone()),
        ],
    );
    let b_w = Affine::blocks(
        &[np, n_k],
        &[nwp, n_phi],
        alloc::vec![
            (0, 0, c(&p.b_pw) + kuy.lmul(&p.b_pu).rmul(&p.d_pyw)),
            (0, 1, t.d_kuw.lmul(&p.b_pu)),
            (1, 0, t.b_ky.rmul(&p.d_pyw)),
            (1, 1, t.b_kw.clone()),
        ],
    );
    let b_d = Affine::blocks(
        &[np, n_k],
        &[nd],
        alloc::vec![(0, 0, c(&p.b_pd) + kuy.lmul(&p.b_pu).rmul(&p.d_pyd)), (1, 0, t.b_ky.rmul(&p.d_pyd))],
    );
    let c_v = Affine::blocks(
        &[nvp, n_phi],
        &[np, n_k],
        alloc::vec![
            (0, 0, c(&p.c_pv) + kuy.lmul(&p.d_pvu).rmul(&p.c_py)),
            (0, 1, t.c_ku.lmul(&p.d_pvu)),
            (1, 0, t.d_kvy.rmul(&p.c_py)),
            (1, 1, t.c_kv.clone()),
        ],
    );
    let d_vw = Affine::blocks(
        &[nvp, n_phi],
        &[nwp, n_phi],
        alloc::vec![
            (0, 0, c(&p.d_pvw) + kuy.lmul(&p.d_pvu).rmul(&p.d_pyw)),
            (0, 1, t.d_kuw.lmul(&p.d_pvu)),
            (1, 0, t.d_kvy.rmul(&p.d_pyw)),
            (1, 1, t.d_kvw.clone()),
        ],
    );
    let d_vd = Affine::blocks(
        &[nvp, n_phi],
        &[nd],
        alloc::vec![(0, 0, c(&p.d_pvd) + kuy.lmul(&p.d_pvu).rmul(&p.d_pyd)), (1, 0, t.d_kvy.rmul(&p.d_pyd))],
    );
    let c_e = Affine::blocks(
        &[ne],
        &[np, n_k],
        alloc::vec![(0, 0, c(&p.c_pe) + kuy.lmul(&p.d_peu).rmul(&p.c_py)), (0, 1, t.c_ku.lmul(&p.d_peu))],
    );
    let d_ew = Affine::blocks(
        &[ne],
        &[nwp, n_phi],
        alloc::vec![(0, 0, c(&p.d_pew) + kuy.lmul(&p.d_peu).rmul(&p.d_pyw)), (0, 1, t.d_kuw.lmul(&p.d_peu))],
    );
    let d_ed = c(&p.d_ped) + kuy.lmul(&p.d_peu).rmul(&p.d_pyd);
    Ok(AffineSystem { a, b_w, b_d, c_v, d_vw, d_vd, c_e, d_ew, d_ed })
}

/// `θ ↦ closed loop` as a constant system plus one coefficient system per
/// scalar parameter (in [`RinnController::to_vec`] order).
#[derive(Debug, Clone)]
pub struct ClosedLoopAffineMap {
    pub constant: UncertainLtiSystem,
    pub linear: Vec<UncertainLtiSystem>,
    template: RinnController,
}

impl ClosedLoopAffineMap {
    pub fn eval(&self, k: &RinnController) -> Result<UncertainLtiSystem> {
        let theta = k.to_vec();
        if theta.len() != self.linear.len() || k.dims() != self.template.dims() {
            return Err(mismatch("controller shape differs from the map's"));
        }
        let mut out = self.constant.clone();
        for (t, lin) in theta.iter().zip(&self.linear) {
            if *t == 0.0 {
                continue;
            }
            for ((_, o), (_, l)) in out.named_blocks_mut().into_iter().zip(lin.named_blocks()) {
                *o += l * *t;
            }
        }
        Ok(out)
    }
}

/// Builds the affine map for controllers shaped like `template`.
pub fn closed_loop_affine_map(p: &UncertainLtiPlant, template: &RinnController) -> Result<ClosedLoopAffineMap> {
    check_compatible(p, template)?;
    let kd = template.dims();
    let mut prob = SdpProblem::new();
    let vars: Vec<_> = template.blocks().iter().map(|m| prob.matrix(m.nrows(), m.ncols())).collect();
    let t = ThetaAffine {
        a_k: vars[0].expr(),
        b_kw: vars[1].expr(),
        b_ky: vars[2].expr(),
        c_kv: vars[3].expr(),
        d_kvw: vars[4].expr(),
        d_kvy: vars[5].expr(),
        c_ku: vars[6].expr(),
        d_kuw: vars[7].expr(),
        d_kuy: vars[8].expr(),
    };
    let sys = close_loop_affine(p, &t, kd.n_k, kd.n_phi)?;
    let part = Some(partition(p, template));
    let n = prob.num_scalars();
    let zero = alloc::vec![0.0; n];
    let constant = sys.eval(&zero, part);
    let mut linear = Vec::with_capacity(n);
    let mut x = zero;
    for i in 0..n {
        x[i] = 1.0;
        let mut s = sys.eval(&x, part);
        for ((_, o), (_, c)) in s.named_blocks_mut().into_iter().zip(constant.named_blocks()) {
            *o -= c;
        }
        linear.push(s);
        x[i] = 0.0;
    }
    Ok(ClosedLoopAffineMap { constant, linear, template: template.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::mat;
    use crate::models::{Activation, ControllerDims, PlantDims};

    fn small_plant() -> UncertainLtiPlant {
        let mut p = UncertainLtiPlant::zeros(PlantDims { n_p: 2, n_v: 1, n_w: 1, n_d: 1, n_e: 1, n_u: 1, n_y: 1 });
        p.a_p = mat(2, 2, &[0.0, 1.0, 2.0, -0.5]);
        p.b_pw = mat(2, 1, &[0.0, 3.0]);
        p.b_pu = mat(2, 1, &[0.0, 1.0]);
        p.b_pd = mat(2, 1, &[1.0, 0.0]);
        p.c_pv = mat(1, 2, &[1.0, 0.0]);
        p.c_pe = mat(1, 2, &[0.0, 1.0]);
        p.c_py = mat(1, 2, &[1.0, 0.0]);
        p
    }

    #[test]
    fn zero_controller() {
        let p = small_plant();
        let k = RinnController::zeros(ControllerDims { n_k: 2, n_phi: 1, n_y: 1, n_u: 1 }, Activation::Tanh);
        let cl = close_loop(&p, &k).unwrap();
        assert_eq!(linalg::sub(&cl.a, 0, 0, 2, 2), p.a_p);
        assert_eq!(linalg::sub(&cl.a, 2, 2, 2, 2), Mat::zeros(2, 2));
        assert_eq!(linalg::sub(&cl.b_w, 0, 0, 2, 1), p.b_pw);
        assert_eq!(linalg::sub(&cl.c_e, 0, 0, 1, 2), p.c_pe);
        assert!(cl.max_deviation(&close_loop_oracle(&p, &k).unwrap()) == 0.0);
    }

    #[test]
    fn static_output_feedback() {
        let p = small_plant();
        let mut k = RinnController::zeros(ControllerDims { n_k: 0, n_phi: 0, n_y: 1, n_u: 1 }, Activation::Zero);
        k.d_kuy = mat(1, 1, &[-4.0]);
        let cl = close_loop(&p, &k).unwrap();
        assert_eq!(cl.a, &p.a_p + &p.b_pu * &k.d_kuy * &p.c_py);
    }

    #[test]
    fn affine_map_matches() {
        let p = small_plant();
        let mut k = RinnController::zeros(ControllerDims { n_k: 2, n_phi: 2, n_y: 1, n_u: 1 }, Activation::Tanh);
        let params: Vec<f64> = (0..k.num_params()).map(|i| libm::sin(i as f64)).collect();
        k = k.with_params(&params).unwrap();
        let map = closed_loop_affine_map(&p, &k).unwrap();
        let dev = map.eval(&k).unwrap().max_deviation(&close_loop(&p, &k).unwrap());
        assert!(dev <= 1e-12, "{dev}");
    }
}
