//! Loop transformation for dynamic IQCs: augment the system with the filter
//! states and swap `w` for the filtered `w̃`, leaving a system whose
//! uncertainty satisfies the static multiplier `diag(I, −I)`.

use alloc::vec::Vec;

use crate::error::{mismatch, Error, Result};
use crate::iqc::{DynamicIqc, Filter};
use crate::linalg::{self, Mat, Vector};
use crate::models::{PlantDims, UncertainLtiPlant, UncertainLtiSystem};
use crate::simulate::rk4_zoh_step;

/// State layout `x̃ = (x, ψ1, ψ2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StatePartition {
    pub n_x: usize,
    pub n_psi1: usize,
    pub n_psi2: usize,
}

impl StatePartition {
    pub const LABELS: [&'static str; 3] = ["x", "psi1", "psi2"];

    pub fn total(&self) -> usize {
        self.n_x + self.n_psi1 + self.n_psi2
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.n_x, self.n_psi1, self.n_psi2]
    }

    /// Block `(i, j)` of a matrix over `x̃`, indexed by [`Self::LABELS`].
    pub fn block(&self, p: &Mat, i: usize, j: usize) -> Mat {
        let s = self.sizes();
        let off = [0, s[0], s[0] + s[1]];
        linalg::sub(p, off[i], off[j], s[i], s[j])
    }
}

/// The system augmented with the IQC filters. `sys` carries the filtered
/// output `ṽ` in its `v` rows; the original `v` row is kept separately.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedSystem {
    pub sys: UncertainLtiSystem,
    /// `[C_v, 0, 0]`.
    pub c_v_orig: Mat,
    pub d_vw_orig: Mat,
    pub d_vd_orig: Mat,
    pub states: StatePartition,
}

pub fn extend(sys: &UncertainLtiSystem, iqc: &DynamicIqc) -> Result<ExtendedSystem> {
    let d = sys.validate()?;
    iqc.psi1.validate()?;
    iqc.psi2.validate()?;
    let (f1, f2) = (&iqc.psi1, &iqc.psi2);
    if f1.n_in() != d.n_v || f2.n_in() != d.n_w {
        return Err(mismatch("filter inputs must match (n_v, n_w)"));
    }
    let (n, n1, n2) = (d.n, f1.n_states(), f2.n_states());
    let nv_t = f1.n_out();
    let sizes = [n, n1, n2];
    let a = linalg::block(
        &sizes,
        &sizes,
        &[
            &[Some(&sys.a), None, None],
            &[Some(&(&f1.b * &sys.c_v)), Some(&f1.a), None],
            &[None, None, Some(&f2.a)],
        ],
    )?;
    let b_w = linalg::block(&sizes, &[d.n_w], &[&[Some(&sys.b_w)], &[Some(&(&f1.b * &sys.d_vw))], &[Some(&f2.b)]])?;
    let b_d = linalg::block(&sizes, &[d.n_d], &[&[Some(&sys.b_d)], &[Some(&(&f1.b * &sys.d_vd))], &[None]])?;
    let c_v = linalg::block(&[nv_t], &sizes, &[&[Some(&(&f1.d * &sys.c_v)), Some(&f1.c), None]])?;
    let c_e = linalg::block(&[d.n_e], &sizes, &[&[Some(&sys.c_e), None, None]])?;
    let c_v_orig = linalg::block(&[d.n_v], &sizes, &[&[Some(&sys.c_v), None, None]])?;
    let ext = UncertainLtiSystem {
        a,
        b_w,
        b_d,
        c_v,
        d_vw: &f1.d * &sys.d_vw,
        d_vd: &f1.d * &sys.d_vd,
        c_e,
        d_ew: sys.d_ew.clone(),
        d_ed: sys.d_ed.clone(),
        partition: None,
    };
    Ok(ExtendedSystem {
        sys: ext,
        c_v_orig,
        d_vw_orig: sys.d_vw.clone(),
        d_vd_orig: sys.d_vd.clone(),
        states: StatePartition { n_x: n, n_psi1: n1, n_psi2: n2 },
    })
}

fn psi2_inverse(f2: &Filter) -> Result<Mat> {
    let c = linalg::cond(&f2.d);
    if !(c <= 1e8) {
        return Err(Error::SingularDpsi2);
    }
    linalg::inverse(&f2.d).map_err(|_| Error::SingularDpsi2)
}

/// Right-multiplies the extended system by `T`, mapping `(x̃, w̃, d)` to
/// `(x̃, w, d)`, and drops the original `v` row.
pub fn transform(ext: &ExtendedSystem, iqc: &DynamicIqc) -> Result<UncertainLtiSystem> {
    let f2 = &iqc.psi2;
    let s = ext.states;
    if f2.n_states() != s.n_psi2 || f2.n_in() != ext.sys.b_w.ncols() {
        return Err(mismatch("Ψ2 does not match the extended system"));
    }
    let dinv = psi2_inverse(f2)?;
    // Row of T that produces w from x̃: [0, 0, −D⁻¹C_ψ2].
    let t_row = linalg::hcat(
        dinv.nrows(),
        &[&Mat::zeros(dinv.nrows(), s.n_x + s.n_psi1), &(-&dinv * &f2.c)],
    )?;
    let e = &ext.sys;
    Ok(UncertainLtiSystem {
        a: &e.a + &e.b_w * &t_row,
        b_w: &e.b_w * &dinv,
        b_d: e.b_d.clone(),
        c_v: &e.c_v + &e.d_vw * &t_row,
        d_vw: &e.d_vw * &dinv,
        d_vd: e.d_vd.clone(),
        c_e: &e.c_e + &e.d_ew * &t_row,
        d_ew: &e.d_ew * &dinv,
        d_ed: e.d_ed.clone(),
        partition: None,
    })
}

/// Extends and transforms in one step.
pub fn transform_system(sys: &UncertainLtiSystem, iqc: &DynamicIqc) -> Result<(UncertainLtiSystem, StatePartition)> {
    let ext = extend(sys, iqc)?;
    Ok((transform(&ext, iqc)?, ext.states))
}

/// Transforms a plant, carrying `u` along with `d` and `y` along with `e`.
/// The returned plant has state `(x_p, ψ1, ψ2)` and uncertainty channels
/// `(ṽ, w̃)`.
pub fn transform_plant(p: &UncertainLtiPlant, iqc: &DynamicIqc) -> Result<(UncertainLtiPlant, StatePartition)> {
    let pd = p.validate()?;
    let d_cols = [pd.n_d, pd.n_u];
    let hc = |a: &Mat, b: &Mat| linalg::hcat(a.nrows(), &[a, b]);
    let sys = UncertainLtiSystem {
        a: p.a_p.clone(),
        b_w: p.b_pw.clone(),
        b_d: hc(&p.b_pd, &p.b_pu)?,
        c_v: p.c_pv.clone(),
        d_vw: p.d_pvw.clone(),
        d_vd: hc(&p.d_pvd, &p.d_pvu)?,
        c_e: linalg::vcat(pd.n_p, &[&p.c_pe, &p.c_py])?,
        d_ew: linalg::vcat(pd.n_w, &[&p.d_pew, &p.d_pyw])?,
        d_ed: linalg::block(
            &[pd.n_e, pd.n_y],
            &d_cols,
            &[&[Some(&p.d_ped), Some(&p.d_peu)], &[Some(&p.d_pyd), None]],
        )?,
        partition: None,
    };
    let (t, states) = transform_system(&sys, iqc)?;
    let n = states.total();
    let cols = |m: &Mat, c0: usize, nc: usize| linalg::sub(m, 0, c0, m.nrows(), nc);
    let rows = |m: &Mat, r0: usize, nr: usize| linalg::sub(m, r0, 0, nr, m.ncols());
    let (ne, ny) = (pd.n_e, pd.n_y);
    let out = UncertainLtiPlant {
        a_p: t.a.clone(),
        b_pw: t.b_w.clone(),
        b_pd: cols(&t.b_d, 0, pd.n_d),
        b_pu: cols(&t.b_d, pd.n_d, pd.n_u),
        c_pv: t.c_v.clone(),
        d_pvw: t.d_vw.clone(),
        d_pvd: cols(&t.d_vd, 0, pd.n_d),
        d_pvu: cols(&t.d_vd, pd.n_d, pd.n_u),
        c_pe: rows(&t.c_e, 0, ne),
        d_pew: rows(&t.d_ew, 0, ne),
        d_ped: linalg::sub(&t.d_ed, 0, 0, ne, pd.n_d),
        d_peu: linalg::sub(&t.d_ed, 0, pd.n_d, ne, pd.n_u),
        c_py: rows(&t.c_e, ne, ny),
        d_pyw: rows(&t.d_ew, ne, ny),
        d_pyd: linalg::sub(&t.d_ed, ne, 0, ny, pd.n_d),
    };
    debug_assert_eq!(out.a_p.nrows(), n);
    let _: PlantDims = out.validate()?;
    Ok((out, states))
}

/// Simulates a filter on a sampled input with zero initial state, holding
/// each sample over its step.
pub fn simulate_filter(f: &Filter, input: &[Vector], dt: f64) -> Result<Vec<Vector>> {
    let mut psi = Vector::zeros(f.n_states());
    let mut out = Vec::with_capacity(input.len());
    for (k, u) in input.iter().enumerate() {
        out.push(&f.c * &psi + &f.d * u);
        psi = rk4_zoh_step(|x, u| &f.a * x + &f.b * u, &psi, u, dt)
            .map_err(|_| Error::NonFiniteState { step: k })?;
    }
    Ok(out)
}

/// Realization of `Ψ1⁻¹`.
pub fn inverse_filter(f: &Filter) -> Result<Filter> {
    if f.d.nrows() != f.d.ncols() || !(linalg::cond(&f.d) <= 1e8) {
        return Err(Error::SingularDpsi1);
    }
    let dinv = linalg::inverse(&f.d).map_err(|_| Error::SingularDpsi1)?;
    Ok(Filter {
        a: &f.a - &f.b * &dinv * &f.c,
        b: &f.b * &dinv,
        c: -&dinv * &f.c,
        d: dinv,
    })
}

/// Response of `Ψ2 ∘ Δ ∘ Ψ1⁻¹` to a sampled `ṽ`. `delta` maps a whole
/// sampled signal to a sampled signal.
pub fn tilde_delta_response(
    iqc: &DynamicIqc,
    delta: impl Fn(&[Vector]) -> Vec<Vector>,
    v_tilde: &[Vector],
    dt: f64,
) -> Result<Vec<Vector>> {
    let inv = inverse_filter(&iqc.psi1)?;
    let v = simulate_filter(&inv, v_tilde, dt)?;
    let w = delta(&v);
    if w.len() != v.len() {
        return Err(mismatch("Δ must return a signal of the same length"));
    }
    simulate_filter(&iqc.psi2, &w, dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::mat;
    use crate::models::SystemDims;

    fn scalar_system() -> UncertainLtiSystem {
        let mut s = UncertainLtiSystem::zeros(SystemDims { n: 1, n_v: 1, n_w: 1, n_d: 1, n_e: 1 });
        s.a = mat(1, 1, &[-1.0]);
        s.b_w = mat(1, 1, &[0.5]);
        s.b_d = mat(1, 1, &[1.0]);
        s.c_v = mat(1, 1, &[2.0]);
        s.c_e = mat(1, 1, &[1.0]);
        s
    }

    #[test]
    fn identity_filters_leave_system_unchanged() {
        let s = scalar_system();
        let q = DynamicIqc::norm_bound(1.0, 1, 1);
        let ext = extend(&s, &q).unwrap();
        assert_eq!(ext.sys.max_deviation(&s), 0.0);
        let t = transform(&ext, &q).unwrap();
        assert_eq!(t.max_deviation(&s), 0.0);
    }

    #[test]
    fn first_order_psi1_pattern() {
        let s = scalar_system();
        let f1 = Filter { a: mat(1, 1, &[-1.0]), b: mat(1, 1, &[1.0]), c: mat(1, 1, &[1.0]), d: mat(1, 1, &[0.0]) };
        let q = DynamicIqc { psi1: f1, psi2: Filter::identity(1) };
        let ext = extend(&s, &q).unwrap();
        assert_eq!(ext.sys.a, mat(2, 2, &[-1.0, 0.0, 2.0, -1.0]));
        assert_eq!(ext.sys.c_v, mat(1, 2, &[0.0, 1.0]));
        assert_eq!(ext.c_v_orig, mat(1, 2, &[2.0, 0.0]));
    }

    #[test]
    fn psi2_gain_two_halves_b_w() {
        let s = scalar_system();
        let q = DynamicIqc { psi1: Filter::identity(1), psi2: Filter::static_gain(mat(1, 1, &[2.0])) };
        let (t, _) = transform_system(&s, &q).unwrap();
        assert_eq!(t.b_w, &s.b_w * 0.5);
        assert_eq!(t.a, s.a);
    }

    #[test]
    fn singular_dpsi2_rejected() {
        let s = scalar_system();
        let q = DynamicIqc { psi1: Filter::identity(1), psi2: Filter::static_gain(mat(1, 1, &[0.0])) };
        assert_eq!(transform_system(&s, &q).unwrap_err(), Error::SingularDpsi2);
    }

    #[test]
    fn tilde_delta_trivial_cases() {
        let q = DynamicIqc::norm_bound(1.0, 1, 1);
        let sig: Vec<Vector> = (0..50).map(|k| Vector::from_element(1, libm::sin(k as f64 * 0.1))).collect();
        let same = tilde_delta_response(&q, |v| v.to_vec(), &sig, 0.01).unwrap();
        assert_eq!(same, sig);
        let zero = tilde_delta_response(&q, |v| v.iter().map(|x| x * 0.0).collect(), &sig, 0.01).unwrap();
        assert!(zero.iter().all(|v| v[0] == 0.0));
    }

    #[test]
    fn scaled_gain_satisfies_static_iqc() {
        let q = DynamicIqc::norm_bound(0.1, 1, 1);
        let sig: Vec<Vector> = (0..400).map(|k| Vector::from_element(1, libm::cos(k as f64 * 0.07) * 3.0)).collect();
        let w = tilde_delta_response(&q, |v| v.iter().map(|x| x * 0.05).collect(), &sig, 0.01).unwrap();
        let ev: f64 = sig.iter().map(|v| v.norm_squared()).sum();
        let ew: f64 = w.iter().map(|v| v.norm_squared()).sum();
        assert!(ew <= ev);
    }
}
