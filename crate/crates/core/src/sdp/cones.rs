//! Cone algebra for the nonnegative orthant, second-order cones and the
//! PSD cone in `svec` coordinates (lower triangle, column-major, off-diagonal
//! entries scaled by √2 so that `svec(A)·svec(B) = tr(AB)`).

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Cholesky, SymmetricEigen, SVD};

use super::{Constraint, SdpProblem};
use crate::linalg::{Mat, Vector};

const SQRT2: f64 = core::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Cone {
    Nonneg(usize),
    Soc(usize),
    /// Order of the matrix; the cone occupies `k(k+1)/2` rows.
    Psd(usize),
}

impl Cone {
    pub(crate) fn dim(&self) -> usize {
        match *self {
            Cone::Nonneg(n) | Cone::Soc(n) => n,
            Cone::Psd(k) => k * (k + 1) / 2,
        }
    }

    /// Barrier degree.
    pub(crate) fn degree(&self) -> usize {
        match *self {
            Cone::Nonneg(n) => n,
            Cone::Soc(_) => 1,
            Cone::Psd(k) => k,
        }
    }
}

pub(crate) fn svec(m: &Mat) -> Vec<f64> {
    let k = m.nrows();
    let mut out = Vec::with_capacity(k * (k + 1) / 2);
    for j in 0..k {
        out.push(m[(j, j)]);
        for i in j + 1..k {
            out.push(SQRT2 * 0.5 * (m[(i, j)] + m[(j, i)]));
        }
    }
    out
}

pub(crate) fn smat(v: &[f64], k: usize) -> Mat {
    let mut m = Mat::zeros(k, k);
    let mut p = 0;
    for j in 0..k {
        m[(j, j)] = v[p];
        p += 1;
        for i in j + 1..k {
            let x = v[p] / SQRT2;
            m[(i, j)] = x;
            m[(j, i)] = x;
            p += 1;
        }
    }
    m
}

/// The program `min cᵀx  s.t.  Gx + s = h, s ∈ K`, with per-block row scaling.
#[derive(Debug, Clone)]
pub(crate) struct ConicForm {
    pub n: usize,
    pub c: Vec<f64>,
    /// Dense `m × n`.
    pub g: Mat,
    pub h: Vec<f64>,
    pub cones: Vec<Cone>,
}

impl ConicForm {
    pub(crate) fn build(p: &SdpProblem) -> Self {
        let n = p.n;
        let mut rows_g: Vec<Vec<f64>> = Vec::new();
        let mut h = Vec::new();
        let mut cones = Vec::new();
        for (_, c) in &p.constraints {
            let start = h.len();
            match c {
                Constraint::Psd(f) => {
                    let k = f.rows();
                    let base = svec(f.constant_part());
                    let mut block: Vec<Vec<f64>> = vec![vec![0.0; n]; base.len()];
                    for (&var, a) in f.terms() {
                        for (r, v) in svec(a).into_iter().enumerate() {
                            block[r][var] = -v;
                        }
                    }
                    rows_g.extend(block);
                    h.extend(base);
                    cones.push(Cone::Psd(k));
                }
                Constraint::Nonneg(f) => {
                    let len = push_entries(f, n, &mut rows_g, &mut h);
                    cones.push(Cone::Nonneg(len));
                }
                Constraint::Soc { t, v } => {
                    let mut len = push_entries(t, n, &mut rows_g, &mut h);
                    for e in v {
                        len += push_entries(e, n, &mut rows_g, &mut h);
                    }
                    cones.push(Cone::Soc(len));
                }
            }
            // Scale the block so its largest coefficient is one.
            let mut scale = 0.0_f64;
            for r in start..h.len() {
                scale = scale.max(h[r].abs());
                for &v in &rows_g[r] {
                    scale = scale.max(v.abs());
                }
            }
            if scale > 0.0 {
                for r in start..h.len() {
                    h[r] /= scale;
                    for v in rows_g[r].iter_mut() {
                        *v /= scale;
                    }
                }
            }
        }
        let m = h.len();
        let mut g = Mat::zeros(m, n);
        for (r, row) in rows_g.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                g[(r, j)] = v;
            }
        }
        let mut c = vec![0.0; n];
        if let Some(obj) = &p.objective {
            for (&k, a) in obj.terms() {
                c[k] = a[(0, 0)];
            }
        }
        let cmax = c.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
        if cmax > 0.0 {
            for v in c.iter_mut() {
                *v /= cmax;
            }
        }
        Self { n, c, g, h, cones }
    }

    pub(crate) fn m(&self) -> usize {
        self.h.len()
    }

    pub(crate) fn degree(&self) -> usize {
        self.cones.iter().map(Cone::degree).sum()
    }
}

fn push_entries(f: &super::Affine, n: usize, rows: &mut Vec<Vec<f64>>, h: &mut Vec<f64>) -> usize {
    let (r, c) = (f.rows(), f.cols());
    for i in 0..r {
        for j in 0..c {
            let mut row = vec![0.0; n];
            for (&k, a) in f.terms() {
                row[k] = -a[(i, j)];
            }
            rows.push(row);
            h.push(f.constant_part()[(i, j)]);
        }
    }
    r * c
}

/// Iterates `(cone, range)` pairs over a stacked vector.
pub(crate) fn blocks(cones: &[Cone]) -> impl Iterator<Item = (Cone, core::ops::Range<usize>)> + '_ {
    let mut off = 0;
    cones.iter().map(move |&c| {
        let r = off..off + c.dim();
        off += c.dim();
        (c, r)
    })
}

/// Identity element of the product cone.
pub(crate) fn identity(cones: &[Cone], m: usize) -> Vec<f64> {
    let mut e = vec![0.0; m];
    for (c, r) in blocks(cones) {
        match c {
            Cone::Nonneg(_) => e[r].iter_mut().for_each(|v| *v = 1.0),
            Cone::Soc(_) => e[r.start] = 1.0,
            Cone::Psd(k) => {
                let mut p = r.start;
                for j in 0..k {
                    e[p] = 1.0;
                    p += k - j;
                }
            }
        }
    }
    e
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Smallest `t` such that `x + t·e` lies on the cone boundary, i.e. the
/// negated "minimum eigenvalue" of `x` over all blocks.
pub(crate) fn max_boundary_shift(cones: &[Cone], x: &[f64]) -> f64 {
    let mut t = f64::NEG_INFINITY;
    for (c, r) in blocks(cones) {
        let v = &x[r];
        let s = match c {
            Cone::Nonneg(_) => v.iter().fold(f64::NEG_INFINITY, |a, &x| a.max(-x)),
            Cone::Soc(_) => libm::sqrt(dot(&v[1..], &v[1..])) - v[0],
            Cone::Psd(k) => -sym_min_eig(&smat(v, k)),
        };
        t = t.max(s);
    }
    t
}

fn sym_min_eig(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Jordan product `x ∘ y`.
pub(crate) fn jprod(cones: &[Cone], x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (c, r) in blocks(cones) {
        let (a, b) = (&x[r.clone()], &y[r.clone()]);
        match c {
            Cone::Nonneg(_) => {
                for (i, o) in out[r].iter_mut().enumerate() {
                    *o = a[i] * b[i];
                }
            }
            Cone::Soc(_) => {
                out[r.start] = dot(a, b);
                for i in 1..a.len() {
                    out[r.start + i] = a[0] * b[i] + b[0] * a[i];
                }
            }
            Cone::Psd(k) => {
                let (am, bm) = (smat(a, k), smat(b, k));
                let p = &am * &bm;
                let s = (&p + p.transpose()) * 0.5;
                out[r].copy_from_slice(&svec(&s));
            }
        }
    }
    out
}

/// Solves `λ ∘ u = r` for `u`, where `λ` is a scaled point (diagonal in the
/// PSD blocks).
pub(crate) fn jdiv(cones: &[Cone], lambda: &[f64], rhs: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rhs.len()];
    for (c, r) in blocks(cones) {
        let (l, b) = (&lambda[r.clone()], &rhs[r.clone()]);
        match c {
            Cone::Nonneg(_) => {
                for (i, o) in out[r].iter_mut().enumerate() {
                    *o = b[i] / l[i];
                }
            }
            Cone::Soc(_) => {
                let det = l[0] * l[0] - dot(&l[1..], &l[1..]);
                let u0 = (l[0] * b[0] - dot(&l[1..], &b[1..])) / det;
                out[r.start] = u0;
                for i in 1..l.len() {
                    out[r.start + i] = (b[i] - u0 * l[i]) / l[0];
                }
            }
            Cone::Psd(k) => {
                let d = diag_of(l, k);
                let bm = smat(b, k);
                let mut u = Mat::zeros(k, k);
                for i in 0..k {
                    for j in 0..k {
                        u[(i, j)] = 2.0 * bm[(i, j)] / (d[i] + d[j]);
                    }
                }
                out[r].copy_from_slice(&svec(&u));
            }
        }
    }
    out
}

fn diag_of(v: &[f64], k: usize) -> Vec<f64> {
    let mut d = Vec::with_capacity(k);
    let mut p = 0;
    for j in 0..k {
        d.push(v[p]);
        p += k - j;
    }
    d
}

/// Largest `α ≥ 0` with `λ + α·d` in the cone (`∞` when unbounded).
pub(crate) fn max_step(cones: &[Cone], lambda: &[f64], d: &[f64]) -> f64 {
    let mut alpha = f64::INFINITY;
    for (c, r) in blocks(cones) {
        let (l, v) = (&lambda[r.clone()], &d[r]);
        let a = match c {
            Cone::Nonneg(_) => {
                let mut a = f64::INFINITY;
                for i in 0..l.len() {
                    if v[i] < 0.0 {
                        a = a.min(-l[i] / v[i]);
                    }
                }
                a
            }
            Cone::Soc(_) => {
                let qa = v[0] * v[0] - dot(&v[1..], &v[1..]);
                let qb = l[0] * v[0] - dot(&l[1..], &v[1..]);
                let qc = (l[0] * l[0] - dot(&l[1..], &l[1..])).max(0.0);
                if (qa >= 0.0 && v[0] >= 0.0) || (qa >= 0.0 && qb >= 0.0) {
                    f64::INFINITY
                } else {
                    let disc = qb * qb - qa * qc;
                    if disc < 0.0 {
                        f64::INFINITY
                    } else {
                        qc / (libm::sqrt(disc) - qb)
                    }
                }
            }
            Cone::Psd(k) => {
                let dl = diag_of(l, k);
                let mut m = smat(v, k);
                for i in 0..k {
                    for j in 0..k {
                        m[(i, j)] /= libm::sqrt(dl[i] * dl[j]);
                    }
                }
                let e = sym_min_eig(&m);
                if e >= 0.0 {
                    f64::INFINITY
                } else {
                    -1.0 / e
                }
            }
        };
        alpha = alpha.min(a);
    }
    alpha
}

/// Nesterov-Todd scaling `W` with `W⁻ᵀs = Wz = λ`, stored per cone.
#[derive(Debug, Clone)]
pub(crate) enum BlockScaling {
    Nonneg { w: Vec<f64> },
    /// Dense, since the accumulated product of NT scalings is not symmetric.
    Soc { w: Mat, winv: Mat },
    Psd { r: Mat, rinv: Mat },
}

#[derive(Debug, Clone)]
pub(crate) struct Scaling {
    pub blocks: Vec<BlockScaling>,
    pub cones: Vec<Cone>,
}

#[derive(Clone, Copy)]
pub(crate) enum Op {
    #[cfg_attr(not(test), allow(dead_code))]
    W,
    Wt,
    Winv,
    WinvT,
}

impl Scaling {
    pub(crate) fn identity(cones: &[Cone]) -> Self {
        let blocks = cones
            .iter()
            .map(|&c| match c {
                Cone::Nonneg(n) => BlockScaling::Nonneg { w: vec![1.0; n] },
                Cone::Soc(n) => BlockScaling::Soc { w: Mat::identity(n, n), winv: Mat::identity(n, n) },
                Cone::Psd(k) => BlockScaling::Psd { r: Mat::identity(k, k), rinv: Mat::identity(k, k) },
            })
            .collect();
        Self { blocks, cones: cones.to_vec() }
    }

    /// Scaling computed from an interior primal-dual pair. Returns `None` if
    /// either point has left the cone interior.
    pub(crate) fn from_pair(cones: &[Cone], s: &[f64], z: &[f64]) -> Option<(Self, Vec<f64>)> {
        let mut blocks = Vec::with_capacity(cones.len());
        let mut lambda = vec![0.0; s.len()];
        for (c, r) in self::blocks(cones) {
            let (sb, zb) = (&s[r.clone()], &z[r.clone()]);
            match c {
                Cone::Nonneg(_) => {
                    let mut w = Vec::with_capacity(sb.len());
                    for i in 0..sb.len() {
                        if sb[i] <= 0.0 || zb[i] <= 0.0 {
                            return None;
                        }
                        w.push(libm::sqrt(sb[i] / zb[i]));
                        lambda[r.start + i] = libm::sqrt(sb[i] * zb[i]);
                    }
                    blocks.push(BlockScaling::Nonneg { w });
                }
                Cone::Soc(_) => {
                    let (w, winv, lam) = soc_scaling(sb, zb)?;
                    lambda[r].copy_from_slice(&lam);
                    blocks.push(BlockScaling::Soc { w, winv });
                }
                Cone::Psd(k) => {
                    let ls = Cholesky::new(smat(sb, k))?.l();
                    let lz = Cholesky::new(smat(zb, k))?.l();
                    let (r_, rinv, sig) = psd_factor(&ls, &lz)?;
                    let mut p = r.start;
                    for j in 0..k {
                        lambda[p] = sig[j];
                        p += k - j;
                    }
                    blocks.push(BlockScaling::Psd { r: r_, rinv });
                }
            }
        }
        Some((Self { blocks, cones: cones.to_vec() }, lambda))
    }

    /// Moves the scaling to a new pair given in the current scaled
    /// coordinates (`s̃ = W⁻ᵀs`, `z̃ = Wz`). Returns the new `λ`.
    pub(crate) fn update(&mut self, st: &[f64], zt: &[f64]) -> Option<Vec<f64>> {
        let mut lambda = vec![0.0; st.len()];
        let cones = self.cones.clone();
        for ((c, r), b) in blocks(&cones).zip(self.blocks.iter_mut()) {
            let (sb, zb) = (&st[r.clone()], &zt[r.clone()]);
            match (c, b) {
                (Cone::Nonneg(_), BlockScaling::Nonneg { w }) => {
                    for i in 0..sb.len() {
                        if sb[i] <= 0.0 || zb[i] <= 0.0 {
                            return None;
                        }
                        w[i] *= libm::sqrt(sb[i] / zb[i]);
                        lambda[r.start + i] = libm::sqrt(sb[i] * zb[i]);
                    }
                }
                (Cone::Soc(_), BlockScaling::Soc { w, winv }) => {
                    // Scale in the current coordinates, where the pair is
                    // well balanced, and compose.
                    let (w_new, winv_new, lam) = soc_scaling(sb, zb)?;
                    *w = w_new * &*w;
                    *winv = &*winv * winv_new;
                    lambda[r].copy_from_slice(&lam);
                }
                (Cone::Psd(k), BlockScaling::Psd { r: rr, rinv }) => {
                    let ls = Cholesky::new(smat(sb, k))?.l();
                    let lz = Cholesky::new(smat(zb, k))?.l();
                    let (r_new, rinv_new, sig) = psd_factor(&ls, &lz)?;
                    *rr = &*rr * r_new;
                    *rinv = rinv_new * &*rinv;
                    let mut p = r.start;
                    for j in 0..k {
                        lambda[p] = sig[j];
                        p += k - j;
                    }
                }
                _ => unreachable!("scaling/cone mismatch"),
            }
        }
        Some(lambda)
    }

    pub(crate) fn apply(&self, op: Op, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for ((_, r), b) in blocks(&self.cones).zip(&self.blocks) {
            let res = apply_block(b, op, &v[r.clone()]);
            out[r].copy_from_slice(&res);
        }
        out
    }
}

fn apply_block(b: &BlockScaling, op: Op, v: &[f64]) -> Vec<f64> {
    match b {
        BlockScaling::Nonneg { w } => match op {
            Op::W | Op::Wt => v.iter().zip(w).map(|(x, w)| x * w).collect(),
            Op::Winv | Op::WinvT => v.iter().zip(w).map(|(x, w)| x / w).collect(),
        },
        BlockScaling::Soc { w, winv } => {
            let x = Vector::from_column_slice(v);
            let y = match op {
                Op::W => w * x,
                Op::Wt => w.tr_mul(&x),
                Op::Winv => winv * x,
                Op::WinvT => winv.tr_mul(&x),
            };
            y.iter().copied().collect()
        }
        BlockScaling::Psd { r, rinv } => {
            let k = r.nrows();
            let x = smat(v, k);
            let y = match op {
                Op::W => r.transpose() * x * r,
                Op::Wt => r * x * r.transpose(),
                Op::Winv => rinv.transpose() * x * rinv,
                Op::WinvT => rinv * x * rinv.transpose(),
            };
            svec(&y)
        }
    }
}

fn jmul(v: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = v.iter().map(|x| -x).collect();
    out[0] = v[0];
    out
}

fn soc_norm(v: &[f64]) -> Option<f64> {
    let t = libm::sqrt(dot(&v[1..], &v[1..]));
    let q = (v[0] - t) * (v[0] + t);
    if v[0] <= 0.0 || q <= 0.0 {
        None
    } else {
        Some(libm::sqrt(q))
    }
}

/// NT scaling `W = β(2vvᵀ − J)` of one pair, with its inverse and `λ = Wz`.
fn soc_scaling(s: &[f64], z: &[f64]) -> Option<(Mat, Mat, Vec<f64>)> {
    let sn = soc_norm(s)?;
    let zn = soc_norm(z)?;
    let sb: Vec<f64> = s.iter().map(|x| x / sn).collect();
    let zb: Vec<f64> = z.iter().map(|x| x / zn).collect();
    let gamma = libm::sqrt((1.0 + dot(&sb, &zb)) / 2.0);
    let jz = jmul(&zb);
    let wbar: Vec<f64> = sb.iter().zip(&jz).map(|(a, b)| (a + b) / (2.0 * gamma)).collect();
    // W = β(2vvᵀ − J) with v the square root of w̄ in the Jordan algebra.
    let denom = libm::sqrt(2.0 * (wbar[0] + 1.0));
    let mut v: Vec<f64> = wbar.iter().map(|x| x / denom).collect();
    v[0] += 1.0 / denom;
    let beta = libm::sqrt(sn / zn);
    let n = v.len();
    let vv = Vector::from_vec(v);
    let jv = Vector::from_vec(jmul(vv.as_slice()));
    let mut j = Mat::identity(n, n) * -1.0;
    j[(0, 0)] = 1.0;
    let w = (&vv * vv.transpose() * 2.0 - &j) * beta;
    let winv = (&jv * jv.transpose() * 2.0 - &j) / beta;
    let lambda: Vec<f64> = (&w * Vector::from_column_slice(z)).iter().copied().collect();
    Some((w, winv, lambda))
}

/// From Cholesky factors of `s` and `z` returns `(r, r⁻¹, σ)` with
/// `rᵀ z r = r⁻¹ s r⁻ᵀ = diag(σ)`.
fn psd_factor(ls: &Mat, lz: &Mat) -> Option<(Mat, Mat, Vec<f64>)> {
    let svd = SVD::new(lz.transpose() * ls, true, true);
    let u = svd.u?;
    let vt = svd.v_t?;
    let sig: Vec<f64> = svd.singular_values.iter().copied().collect();
    if sig.iter().any(|&x| !(x > 0.0)) {
        return None;
    }
    let k = sig.len();
    let mut isq = Mat::zeros(k, k);
    for i in 0..k {
        isq[(i, i)] = 1.0 / libm::sqrt(sig[i]);
    }
    let r = ls * vt.transpose() * &isq;
    let rinv = &isq * u.transpose() * lz.transpose();
    Some((r, rinv, sig))
}
