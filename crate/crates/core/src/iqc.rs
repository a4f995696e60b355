//! Uncertainty descriptions: quadratic constraints, static and dynamic IQCs,
//! the sector multiplier of the controller nonlinearity and the combined
//! closed-loop multiplier.

use alloc::vec::Vec;

use crate::error::{mismatch, Error, Result};
use crate::linalg::{self, Mat, Vector};

/// State-space realization `ψ̇ = Aψ + Bu`, `y = Cψ + Du`.
#[derive(Debug, Clone, PartialEq)]
pub struct Filter {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
}

impl Filter {
    /// Static gain `y = D u` with no states.
    pub fn static_gain(d: Mat) -> Self {
        let (o, i) = (d.nrows(), d.ncols());
        Self { a: Mat::zeros(0, 0), b: Mat::zeros(0, i), c: Mat::zeros(o, 0), d }
    }

    pub fn identity(n: usize) -> Self {
        Self::static_gain(linalg::eye(n))
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_in(&self) -> usize {
        self.d.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.d.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        if self.a.ncols() != n
            || self.b.nrows() != n
            || self.c.ncols() != n
            || self.b.ncols() != self.d.ncols()
            || self.c.nrows() != self.d.nrows()
        {
            return Err(mismatch("filter realization blocks do not conform"));
        }
        for m in [&self.a, &self.b, &self.c, &self.d] {
            if !linalg::all_finite(m) {
                return Err(Error::NonFinite("filter realization"));
            }
        }
        Ok(())
    }

    /// True when every eigenvalue of `A` has negative real part.
    pub fn is_stable(&self) -> bool {
        if self.n_states() == 0 {
            return true;
        }
        self.a.complex_eigenvalues().iter().all(|l| l.re < 0.0)
    }

    /// Frequency response `C(jω − A)⁻¹B + D` as real and imaginary parts.
    pub fn freq_response(&self, omega: f64) -> Result<(Mat, Mat)> {
        let n = self.n_states();
        if n == 0 {
            return Ok((self.d.clone(), Mat::zeros(self.d.nrows(), self.d.ncols())));
        }
        // (jω − A)(X + jY) = B  ⇔  [[−A, −ω],[ω, −A]] [X; Y] = [B; 0]
        let big = linalg::block(
            &[n, n],
            &[n, n],
            &[
                &[Some(&(-&self.a)), Some(&(-linalg::eye(n) * omega))],
                &[Some(&(linalg::eye(n) * omega)), Some(&(-&self.a))],
            ],
        )?;
        let rhs = linalg::vcat(self.b.ncols(), &[&self.b, &Mat::zeros(n, self.b.ncols())])?;
        let sol = big.lu().solve(&rhs).ok_or(Error::InvalidArgument("filter pole on the imaginary axis".into()))?;
        let x = sol.rows(0, n).into_owned();
        let y = sol.rows(n, n).into_owned();
        Ok((&self.c * x + &self.d, &self.c * y))
    }
}

/// Dynamic IQC with block-diagonal filter `Ψ = diag(Ψ1, Ψ2)` and multiplier
/// `M = diag(I, −I)`: the filtered signals satisfy `∫‖ṽ‖² − ‖w̃‖² ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicIqc {
    /// Acts on `v`.
    pub psi1: Filter,
    /// Acts on `w`.
    pub psi2: Filter,
}

impl DynamicIqc {
    pub fn new(psi1: Filter, psi2: Filter) -> Result<Self> {
        let q = Self { psi1, psi2 };
        q.validate()?;
        Ok(q)
    }

    /// `‖Δ‖ ≤ γ` as `Ψ1 = γI`, `Ψ2 = I`.
    pub fn norm_bound(gamma: f64, n_v: usize, n_w: usize) -> Self {
        Self { psi1: Filter::static_gain(linalg::eye(n_v) * gamma), psi2: Filter::identity(n_w) }
    }

    pub fn validate(&self) -> Result<()> {
        self.psi1.validate()?;
        self.psi2.validate()?;
        if self.psi1.n_out() != self.psi2.n_out() {
            return Err(mismatch("filtered channels of Ψ1 and Ψ2 must have equal size for M = diag(I, −I)"));
        }
        if self.psi2.n_in() != self.psi2.n_out() {
            return Err(mismatch("Ψ2 must be square to be invertible"));
        }
        if !self.psi1.is_stable() || !self.psi2.is_stable() {
            return Err(Error::InvalidArgument("IQC filters must be stable".into()));
        }
        Ok(())
    }

    /// The multiplier `diag(I, −I)` on `(ṽ, w̃)`.
    pub fn multiplier(&self) -> Mat {
        let n = self.psi1.n_out();
        let mut m = linalg::eye(2 * n);
        for i in n..2 * n {
            m[(i, i)] = -1.0;
        }
        m
    }
}

/// How an uncertainty is described.
#[derive(Debug, Clone, PartialEq)]
pub enum IqcSpec {
    /// Pointwise quadratic constraint `[v; w]ᵀ M [v; w] ≥ 0`.
    Qc { m: Mat },
    /// Integral constraint with identity filter.
    Static { m: Mat },
    Dynamic(DynamicIqc),
}

impl IqcSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            IqcSpec::Qc { .. } => "qc",
            IqcSpec::Static { .. } => "static",
            IqcSpec::Dynamic(_) => "dynamic",
        }
    }

    /// Multiplier acting on `(v, w)` for the static kinds and on the filtered
    /// signals for the dynamic kind.
    pub fn multiplier(&self) -> Mat {
        match self {
            IqcSpec::Qc { m } | IqcSpec::Static { m } => m.clone(),
            IqcSpec::Dynamic(d) => d.multiplier(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            IqcSpec::Qc { m } | IqcSpec::Static { m } => {
                linalg::check_square(m)?;
                linalg::check_symmetric(m, 1e-10)
            }
            IqcSpec::Dynamic(d) => d.validate(),
        }
    }
}

/// `[[0, Λ], [Λ, −2Λ]]` for a diagonal `Λ ⪰ 0` given by its diagonal.
pub fn sector_multiplier(lambda: &[f64]) -> Result<Mat> {
    if lambda.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("sector multiplier"));
    }
    if lambda.iter().any(|&l| l < 0.0) {
        return Err(Error::InvalidArgument("sector multiplier entries must be nonnegative".into()));
    }
    let n = lambda.len();
    let mut m = Mat::zeros(2 * n, 2 * n);
    for (i, &l) in lambda.iter().enumerate() {
        m[(i, n + i)] = l;
        m[(n + i, i)] = l;
        m[(n + i, n + i)] = -2.0 * l;
    }
    Ok(m)
}

/// Matrix form of [`sector_multiplier`]; rejects non-diagonal `Λ`.
pub fn sector_multiplier_mat(lambda: &Mat) -> Result<Mat> {
    linalg::check_square(lambda)?;
    let n = lambda.nrows();
    for i in 0..n {
        for j in 0..n {
            if i != j && lambda[(i, j)] != 0.0 {
                return Err(Error::NotDiagonal);
            }
        }
    }
    let d: Vec<f64> = (0..n).map(|i| lambda[(i, i)]).collect();
    sector_multiplier(&d)
}

/// Pointwise QC test with a small relative slack.
pub fn qc_holds(m: &Mat, v: &Vector, w: &Vector) -> Result<bool> {
    let n = v.len() + w.len();
    if m.nrows() != n || m.ncols() != n {
        return Err(mismatch("QC multiplier size must equal dim(v) + dim(w)"));
    }
    let z = Vector::from_iterator(n, v.iter().chain(w.iter()).copied());
    let value = z.dot(&(m * &z));
    Ok(value >= -1e-12 * (v.norm_squared() + w.norm_squared()))
}

/// `scale · diag(gain² I, −I)`: the multiplier of `‖Δ‖ ≤ gain`.
pub fn norm_bound_multiplier(gain: f64, scale: f64, n_v: usize, n_w: usize) -> Mat {
    let mut d = Vec::with_capacity(n_v + n_w);
    d.extend(core::iter::repeat_n(scale * gain * gain, n_v));
    d.extend(core::iter::repeat_n(-scale, n_w));
    linalg::diag(&d)
}

/// Multiplier of the stacked closed-loop uncertainty `diag(Δ_p, φ)` over
/// `v = (v_p, v_k)`, `w = (w_p, w_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedMultiplier {
    /// Full `[[M_vv, M_vw], [M_vwᵀ, M_ww]]`.
    pub m: Mat,
    pub m_vv: Mat,
    pub m_vw: Mat,
    pub m_ww: Mat,
    /// `[L_Δp, 0]` with `L_ΔᵀL_Δ = M_vv`.
    pub l_delta: Mat,
    /// `L_Δp` alone.
    pub l_delta_p: Mat,
    pub n_vp: usize,
    pub n_wp: usize,
    pub n_phi: usize,
}

/// Splits a plant multiplier over `(v_p, w_p)` into its three blocks.
pub fn split_multiplier(m_dp: &Mat, n_vp: usize) -> Result<(Mat, Mat, Mat)> {
    let n = linalg::check_square(m_dp)?;
    if n_vp > n {
        return Err(mismatch("n_vp exceeds the plant multiplier size"));
    }
    let n_wp = n - n_vp;
    Ok((
        linalg::sub(m_dp, 0, 0, n_vp, n_vp),
        linalg::sub(m_dp, 0, n_vp, n_vp, n_wp),
        linalg::sub(m_dp, n_vp, n_vp, n_wp, n_wp),
    ))
}

/// Assembles the combined multiplier from the plant multiplier `M_Δp` and the
/// controller multiplier `Λ` (diagonal entries).
pub fn combine_multipliers(m_dp: &Mat, n_vp: usize, lambda: &[f64]) -> Result<CombinedMultiplier> {
    linalg::check_symmetric(m_dp, 1e-10)?;
    let (pvv, pvw, pww) = split_multiplier(m_dp, n_vp)?;
    let n_wp = m_dp.nrows() - n_vp;
    let n_phi = lambda.len();
    if lambda.iter().any(|&l| !(l >= 0.0)) {
        return Err(Error::InvalidArgument("controller multiplier entries must be nonnegative".into()));
    }
    let l_delta_p = match linalg::factor_gram(&pvv, 1e-12) {
        Ok(l) => l,
        Err(Error::NotPsd { min_eigenvalue }) => return Err(Error::MvvNotPsd { min_eigenvalue }),
        Err(e) => return Err(e),
    };
    let lam = linalg::diag(lambda);
    let nv = n_vp + n_phi;
    let nw = n_wp + n_phi;
    let m_vv = linalg::block_diag(&[&pvv, &Mat::zeros(n_phi, n_phi)]);
    let m_vw = linalg::block(&[n_vp, n_phi], &[n_wp, n_phi], &[&[Some(&pvw), None], &[None, Some(&lam)]])?;
    let m_ww = linalg::block_diag(&[&pww, &(&lam * -2.0)]);
    let m_vwt = m_vw.transpose();
    let m = linalg::block(&[nv, nw], &[nv, nw], &[&[Some(&m_vv), Some(&m_vw)], &[Some(&m_vwt), Some(&m_ww)]])?;
    let l_delta = linalg::hcat(l_delta_p.nrows(), &[&l_delta_p, &Mat::zeros(l_delta_p.nrows(), n_phi)])?;
    Ok(CombinedMultiplier { m, m_vv, m_vw, m_ww, l_delta, l_delta_p, n_vp, n_wp, n_phi })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::mat;

    #[test]
    fn sector_examples() {
        assert_eq!(sector_multiplier(&[1.0]).unwrap(), mat(2, 2, &[0.0, 1.0, 1.0, -2.0]));
        assert_eq!(sector_multiplier(&[0.0]).unwrap(), Mat::zeros(2, 2));
        let expect = mat(
            4,
            4,
            &[0., 0., 2., 0., 0., 0., 0., 3., 2., 0., -4., 0., 0., 3., 0., -6.],
        );
        assert_eq!(sector_multiplier(&[2.0, 3.0]).unwrap(), expect);
        assert_eq!(sector_multiplier_mat(&mat(2, 2, &[1.0, 0.5, 0.5, 1.0])), Err(Error::NotDiagonal));
    }

    #[test]
    fn qc_examples() {
        let m = sector_multiplier(&[1.0]).unwrap();
        let v = |x: f64| Vector::from_element(1, x);
        assert!(qc_holds(&m, &v(2.0), &v(libm::tanh(2.0))).unwrap());
        assert!(qc_holds(&m, &v(1.0), &v(1.0)).unwrap());
        assert!(!qc_holds(&m, &v(1.0), &v(2.0)).unwrap());
        assert!(qc_holds(&m, &v(1.0), &Vector::zeros(2)).is_err());
    }

    #[test]
    fn norm_bound_examples() {
        assert_eq!(norm_bound_multiplier(0.1, 5.0, 1, 1), mat(2, 2, &[0.05, 0.0, 0.0, -5.0]));
        assert_eq!(norm_bound_multiplier(1.0, 1.0, 2, 2), linalg::diag(&[1.0, 1.0, -1.0, -1.0]));
        let m = norm_bound_multiplier(0.3, 2.0, 1, 1);
        let v = Vector::from_element(1, 1.7);
        let w = &v * 0.3;
        let z = Vector::from_column_slice(&[v[0], w[0]]);
        assert!(z.dot(&(&m * &z)).abs() < 1e-14);
    }

    #[test]
    fn combine_sector_plant() {
        let c = combine_multipliers(&mat(2, 2, &[0.0, 1.0, 1.0, -2.0]), 1, &[1.0]).unwrap();
        assert_eq!(c.m_vv, Mat::zeros(2, 2));
        assert_eq!(c.m_vw, linalg::eye(2));
        assert_eq!(c.m_ww, linalg::eye(2) * -2.0);
        assert_eq!(c.l_delta.nrows(), 0);
    }

    #[test]
    fn combine_norm_bound_without_controller() {
        let mdp = linalg::diag(&[0.05, -5.0]);
        let c = combine_multipliers(&mdp, 1, &[]).unwrap();
        assert_eq!(c.m, mdp);
        assert!((c.l_delta.transpose() * &c.l_delta - &c.m_vv).abs().max() < 1e-12);
        let z = combine_multipliers(&Mat::zeros(2, 2), 1, &[0.0]).unwrap();
        assert_eq!(z.m, Mat::zeros(4, 4));
    }

    #[test]
    fn combine_rejects_indefinite_mvv() {
        let r = combine_multipliers(&linalg::diag(&[-1.0, -1.0]), 1, &[1.0]);
        assert!(matches!(r, Err(Error::MvvNotPsd { .. })));
    }

    #[test]
    fn filter_freq_response_first_order() {
        let f = Filter { a: mat(1, 1, &[-1.0]), b: mat(1, 1, &[1.0]), c: mat(1, 1, &[1.0]), d: mat(1, 1, &[0.0]) };
        let (re, im) = f.freq_response(1.0).unwrap();
        assert!((re[(0, 0)] - 0.5).abs() < 1e-14);
        assert!((im[(0, 0)] + 0.5).abs() < 1e-14);
        assert!(f.is_stable());
    }
}
