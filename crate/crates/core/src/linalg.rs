//! Dense matrix helpers shared by every LMI in the crate: block assembly,
//! symmetric eigendecomposition, definiteness tests, Schur complements and
//! Gram factors.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{mismatch, Error, Result};

/// Dense real matrix.
pub type Mat = DMatrix<f64>;
/// Dense real column vector.
pub type Vector = DVector<f64>;

/// Builds a matrix from row-major entries.
pub fn mat(rows: usize, cols: usize, entries: &[f64]) -> Mat {
    assert_eq!(entries.len(), rows * cols, "row-major entry count");
    Mat::from_row_slice(rows, cols, entries)
}

pub fn zeros(rows: usize, cols: usize) -> Mat {
    Mat::zeros(rows, cols)
}

pub fn eye(n: usize) -> Mat {
    Mat::identity(n, n)
}

pub fn diag(values: &[f64]) -> Mat {
    Mat::from_diagonal(&Vector::from_column_slice(values))
}

/// Largest absolute entry.
pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Spectral norm upper bound used for relative tolerances (Frobenius).
pub fn norm(m: &Mat) -> f64 {
    m.norm()
}

pub fn all_finite(m: &Mat) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Horizontal concatenation. Every block must have `rows` rows.
pub fn hcat(rows: usize, blocks: &[&Mat]) -> Result<Mat> {
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        if b.nrows() != rows {
            return Err(mismatch("hcat row count"));
        }
        out.view_mut((0, c), (rows, b.ncols())).copy_from(*b);
        c += b.ncols();
    }
    Ok(out)
}

/// Vertical concatenation. Every block must have `cols` columns.
pub fn vcat(cols: usize, blocks: &[&Mat]) -> Result<Mat> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        if b.ncols() != cols {
            return Err(mismatch("vcat column count"));
        }
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(*b);
        r += b.nrows();
    }
    Ok(out)
}

/// Assembles a block matrix with explicit partition sizes; `None` entries are zero.
pub fn block(row_sizes: &[usize], col_sizes: &[usize], blocks: &[&[Option<&Mat>]]) -> Result<Mat> {
    if blocks.len() != row_sizes.len() {
        return Err(mismatch("block row partition"));
    }
    let rows: usize = row_sizes.iter().sum();
    let cols: usize = col_sizes.iter().sum();
    let mut out = Mat::zeros(rows, cols);
    let mut r = 0;
    for (i, row) in blocks.iter().enumerate() {
        if row.len() != col_sizes.len() {
            return Err(mismatch("block column partition"));
        }
        let mut c = 0;
        for (j, entry) in row.iter().enumerate() {
            if let Some(b) = entry {
                if b.nrows() != row_sizes[i] || b.ncols() != col_sizes[j] {
                    return Err(mismatch("block entry shape"));
                }
                out.view_mut((r, c), (row_sizes[i], col_sizes[j])).copy_from(*b);
            }
            c += col_sizes[j];
        }
        r += row_sizes[i];
    }
    Ok(out)
}

/// Block diagonal of square or rectangular blocks.
pub fn block_diag(blocks: &[&Mat]) -> Mat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Copy of the `(r, c)` sub-block with shape `(rows, cols)`.
pub fn sub(m: &Mat, r: usize, c: usize, rows: usize, cols: usize) -> Mat {
    m.view((r, c), (rows, cols)).into_owned()
}

pub fn check_square(m: &Mat) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::NonSquare { rows: m.nrows(), cols: m.ncols() });
    }
    Ok(m.nrows())
}

pub fn check_symmetric(m: &Mat, rel_tol: f64) -> Result<()> {
    check_square(m)?;
    let asym = max_abs(&(m - m.transpose()));
    if asym > rel_tol * norm(m).max(f64::MIN_POSITIVE) && asym > 0.0 {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    Ok(())
}

/// Symmetric eigendecomposition with ascending eigenvalues; columns of the
/// returned matrix are the matching unit eigenvectors.
pub fn eig_sym(m: &Mat) -> Result<(Vec<f64>, Mat)> {
    check_symmetric(m, 1e-10)?;
    if !all_finite(m) {
        return Err(Error::NonFinite("eig_sym input"));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok((Vec::new(), Mat::zeros(0, 0)));
    }
    let eig = nalgebra::SymmetricEigen::try_new(symmetrize(m), f64::EPSILON, 10_000)
        .ok_or(Error::NoConvergence)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

/// Eigenvalues only, ascending. Symmetrizes silently (callers pass assembled
/// LMI matrices that are symmetric up to rounding).
pub fn eigenvalues_sym(m: &Mat) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut v: Vec<f64> = symmetrize(m).symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

pub fn max_eigenvalue(m: &Mat) -> f64 {
    eigenvalues_sym(m).last().copied().unwrap_or(f64::NEG_INFINITY)
}

pub fn min_eigenvalue(m: &Mat) -> f64 {
    eigenvalues_sym(m).first().copied().unwrap_or(f64::INFINITY)
}

/// `true` iff `λ_min(m) ≥ −tol·max(1, ‖m‖)`.
pub fn is_psd(m: &Mat, tol: f64) -> Result<bool> {
    check_symmetric(m, 1e-10)?;
    if m.nrows() == 0 {
        return Ok(true);
    }
    Ok(min_eigenvalue(m) >= -tol * norm(m).max(1.0))
}

/// `true` iff `−m` passes [`is_psd`].
pub fn is_nsd(m: &Mat, tol: f64) -> Result<bool> {
    is_psd(&(-m), tol)
}

/// Condition number from singular values; infinite for singular input.
pub fn cond(m: &Mat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 1.0;
    }
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn inverse(m: &Mat) -> Result<Mat> {
    check_square(m)?;
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument(alloc::string::String::from("singular matrix")))
}

/// Symmetric PSD factor `L` with `LᵀL = m`, rows limited to the numerical rank.
pub fn factor_gram(m: &Mat, rank_tol: f64) -> Result<Mat> {
    let (values, vectors) = eig_sym(m)?;
    let n = m.nrows();
    let top = values.last().copied().unwrap_or(0.0).max(0.0);
    let scale = norm(m).max(1.0);
    if let Some(&lo) = values.first() {
        if lo < -rank_tol.max(1e-12) * scale {
            return Err(Error::NotPsd { min_eigenvalue: lo });
        }
    }
    let keep: Vec<usize> = (0..n).filter(|&i| values[i] > rank_tol * top && values[i] > 0.0).collect();
    let mut l = Mat::zeros(keep.len(), n);
    for (row, &i) in keep.iter().enumerate() {
        let s = libm::sqrt(values[i]);
        for j in 0..n {
            l[(row, j)] = s * vectors[(j, i)];
        }
    }
    Ok(l)
}

/// Returns `[[top_left, off_diagᵀ], [off_diag, −I]]`; by the Schur complement
/// it is NSD iff `top_left + off_diagᵀ·off_diag ⪯ 0`.
pub fn schur_complement_nsd(top_left: &Mat, off_diag: &Mat) -> Result<SymBlock> {
    let n = check_square(top_left)?;
    if off_diag.ncols() != n {
        return Err(mismatch("Schur off-diagonal columns must match the top-left block"));
    }
    let k = off_diag.nrows();
    let mut sb = SymBlock::new(alloc::vec![n, k]);
    sb.set(0, 0, top_left.clone())?;
    sb.set(1, 0, off_diag.clone())?;
    sb.set(1, 1, -eye(k))?;
    Ok(sb)
}

/// Symmetric block matrix stored by its upper-triangular blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct SymBlock {
    sizes: Vec<usize>,
    blocks: BTreeMap<(usize, usize), Mat>,
}

impl SymBlock {
    pub fn new(sizes: Vec<usize>) -> Self {
        Self { sizes, blocks: BTreeMap::new() }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Sets block `(i, j)`. Lower-triangular indices are stored transposed.
    pub fn set(&mut self, i: usize, j: usize, m: Mat) -> Result<()> {
        if i >= self.sizes.len() || j >= self.sizes.len() {
            return Err(mismatch("SymBlock index"));
        }
        if m.nrows() != self.sizes[i] || m.ncols() != self.sizes[j] {
            return Err(mismatch("SymBlock block shape"));
        }
        if i <= j {
            self.blocks.insert((i, j), m);
        } else {
            self.blocks.insert((j, i), m.transpose());
        }
        Ok(())
    }

    pub fn get(&self, i: usize, j: usize) -> Mat {
        if i <= j {
            self.blocks
                .get(&(i, j))
                .cloned()
                .unwrap_or_else(|| Mat::zeros(self.sizes[i], self.sizes[j]))
        } else {
            self.get(j, i).transpose()
        }
    }

    /// Dense matrix. Diagonal blocks are symmetrized and the lower triangle
    /// mirrors the upper one, so the result equals its transpose exactly.
    pub fn materialize(&self) -> Mat {
        let n: usize = self.sizes.iter().sum();
        let offsets: Vec<usize> = self
            .sizes
            .iter()
            .scan(0, |acc, &s| {
                let o = *acc;
                *acc += s;
                Some(o)
            })
            .collect();
        let mut out = Mat::zeros(n, n);
        for (&(i, j), b) in &self.blocks {
            out.view_mut((offsets[i], offsets[j]), (self.sizes[i], self.sizes[j])).copy_from(b);
        }
        for r in 0..n {
            for c in 0..r {
                out[(r, c)] = out[(c, r)];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sym(rng: &mut ChaCha8Rng, n: usize) -> Mat {
        let a = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a + a.transpose()
    }

    #[test]
    fn eig_sym_diagonal_and_swap() {
        let (l, _) = eig_sym(&diag(&[2.0, 1.0])).unwrap();
        assert_eq!(l, alloc::vec![1.0, 2.0]);
        let (l, _) = eig_sym(&mat(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        assert!((l[0] + 1.0).abs() < 1e-14 && (l[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn eig_sym_recomposes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let m = random_sym(&mut rng, 5);
            let (l, v) = eig_sym(&m).unwrap();
            assert!(l.windows(2).all(|w| w[0] <= w[1]));
            let rec = &v * diag(&l) * v.transpose();
            assert!(max_abs(&(rec - &m)) <= 1e-9 * norm(&m));
        }
    }

    #[test]
    fn eig_sym_errors() {
        assert!(matches!(eig_sym(&zeros(2, 3)), Err(Error::NonSquare { .. })));
        assert!(matches!(
            eig_sym(&mat(2, 2, &[0.0, 1.0, 0.0, 0.0])),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn psd_tests() {
        assert!(is_psd(&zeros(3, 3), 1e-8).unwrap());
        assert!(is_psd(&diag(&[1.0, -1e-12]), 1e-8).unwrap());
        assert!(!is_psd(&diag(&[1.0, -1.0]), 1e-8).unwrap());
    }

    #[test]
    fn schur_examples() {
        let sb = schur_complement_nsd(&(-eye(2)), &zeros(1, 2)).unwrap();
        assert_eq!(sb.materialize(), -eye(3));

        let sb = schur_complement_nsd(&mat(1, 1, &[-2.0]), &mat(1, 1, &[1.0])).unwrap();
        let m = sb.materialize();
        assert_eq!(m, mat(2, 2, &[-2.0, 1.0, 1.0, -1.0]));
        assert!(is_nsd(&m, 1e-12).unwrap());

        let m = schur_complement_nsd(&mat(1, 1, &[0.0]), &mat(1, 1, &[1.0])).unwrap().materialize();
        assert!(!is_nsd(&m, 1e-12).unwrap());
        assert!(schur_complement_nsd(&eye(2), &zeros(1, 3)).is_err());
    }

    #[test]
    fn factor_gram_examples() {
        let l = factor_gram(&eye(3), 1e-12).unwrap();
        assert!(max_abs(&(l.transpose() * &l - eye(3))) < 1e-12);
        assert_eq!(factor_gram(&zeros(2, 2), 1e-12).unwrap().nrows(), 0);
        let m = mat(2, 2, &[4.0, 2.0, 2.0, 1.0]);
        let l = factor_gram(&m, 1e-10).unwrap();
        assert_eq!(l.nrows(), 1);
        assert!(max_abs(&(l.transpose() * &l - &m)) < 1e-12);
        assert!((l[(0, 0)].abs() - 2.0).abs() < 1e-12 && (l[(0, 1)].abs() - 1.0).abs() < 1e-12);
        assert!(matches!(factor_gram(&diag(&[1.0, -1.0]), 1e-10), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn symblock_materializes_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut sb = SymBlock::new(alloc::vec![2, 3]);
        sb.set(0, 0, random_sym(&mut rng, 2)).unwrap();
        sb.set(0, 1, Mat::from_fn(2, 3, |_, _| rng.random_range(-1.0..1.0))).unwrap();
        sb.set(1, 1, random_sym(&mut rng, 3)).unwrap();
        let m = sb.materialize();
        assert_eq!(m, m.transpose());
    }
}
