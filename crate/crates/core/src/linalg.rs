//! Small dense linear-algebra helpers shared by the analysis modules.

#[allow(unused_imports)]
use num_traits::Float;
use nalgebra::{DMatrix, Matrix2, SymmetricEigen, Vector2};

pub type Mat2 = Matrix2<f64>;
pub type Vec2 = Vector2<f64>;

/// Relative eigenvalue floor used by symmetric square roots.
pub const EIGEN_FLOOR: f64 = 1e-14;

/// Relative threshold below which a symmetric matrix is treated as singular.
pub const SPD_RELATIVE_TOL: f64 = 1e-10;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn symmetrize2(m: &Mat2) -> Mat2 {
    (m + m.transpose()) * 0.5
}

/// Largest absolute eigenvalue of a symmetric matrix (its spectral norm).
pub fn sym_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let e = SymmetricEigen::new(symmetrize(m));
    e.eigenvalues.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()))
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let e = SymmetricEigen::new(symmetrize(m));
    e.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let e = SymmetricEigen::new(symmetrize(m));
    e.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Smallest eigenvalue of the symmetric part of `a - b`.
pub fn loewner_slack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    min_eigenvalue(&(a - b))
}

/// True when the smallest eigenvalue exceeds `SPD_RELATIVE_TOL` times the spectral norm.
pub fn is_spd(m: &DMatrix<f64>) -> bool {
    if m.nrows() == 0 {
        return true;
    }
    let e = SymmetricEigen::new(symmetrize(m));
    let max = e.eigenvalues.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()));
    let min = e.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    max > 0.0 && min > SPD_RELATIVE_TOL * max
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = symmetrize(m).cholesky()?;
    Some(symmetrize(&chol.inverse()))
}

fn sym_fn(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let e = SymmetricEigen::new(symmetrize(m));
    let scale = e.eigenvalues.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()));
    let floor = EIGEN_FLOOR * scale;
    let d = e.eigenvalues.map(|v| f(v.max(floor)));
    let v = &e.eigenvectors;
    symmetrize(&(v * DMatrix::from_diagonal(&d) * v.transpose()))
}

/// Principal square root of a symmetric PSD matrix. Eigenvalues are floored at
/// `EIGEN_FLOOR` times the spectral norm.
pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_fn(m, |v| v.sqrt())
}

pub fn sym_inv_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_fn(m, |v| 1.0 / v.sqrt())
}

/// Real eigenvalues of a general 2x2 matrix, ascending, or `None` when the
/// pair is complex.
pub fn eig2_real(m: &Mat2) -> Option<(f64, f64)> {
    let tr = m[(0, 0)] + m[(1, 1)];
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    let half = 0.5 * tr;
    let disc = half * half - det;
    let scale = half * half + det.abs();
    if disc < -1e-12 * scale {
        return None;
    }
    let r = disc.max(0.0).sqrt();
    Some((half - r, half + r))
}

/// Eigenvalues of a symmetric 2x2 matrix, ascending. Uses only the upper
/// triangle and never cancels near a double eigenvalue.
pub fn eig2_sym(m: &Mat2) -> (f64, f64) {
    let half = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    let r = (0.5 * (m[(0, 0)] - m[(1, 1)])).hypot(m[(0, 1)]);
    (half - r, half + r)
}

/// Eigenvalues of `A^{-1} B` for SPD `A` and symmetric `B`, through the
/// congruent form `L^{-1} B L^{-T}` with `A = L L^T`.
pub fn eig2_generalized(b: &Mat2, a: &Mat2) -> Option<(f64, f64)> {
    let l_inv = symmetrize2(a).cholesky()?.l().try_inverse()?;
    Some(eig2_sym(&symmetrize2(&(l_inv * b * l_inv.transpose()))))
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `||a - b||_F / max(||b||_F, tiny)`.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let denom = frobenius(b).max(f64::MIN_POSITIVE);
    frobenius(&(a - b)) / denom
}

pub fn rel_frobenius2(a: &Mat2, b: &Mat2) -> f64 {
    let denom = b.norm().max(f64::MIN_POSITIVE);
    (a - b).norm() / denom
}

pub fn get2(m: &DMatrix<f64>, i: usize, j: usize) -> Mat2 {
    Mat2::new(
        m[(2 * i, 2 * j)],
        m[(2 * i, 2 * j + 1)],
        m[(2 * i + 1, 2 * j)],
        m[(2 * i + 1, 2 * j + 1)],
    )
}

pub fn set2(m: &mut DMatrix<f64>, i: usize, j: usize, b: &Mat2) {
    for r in 0..2 {
        for c in 0..2 {
            m[(2 * i + r, 2 * j + c)] = b[(r, c)];
        }
    }
}

pub fn add2(m: &mut DMatrix<f64>, i: usize, j: usize, b: &Mat2) {
    for r in 0..2 {
        for c in 0..2 {
            m[(2 * i + r, 2 * j + c)] += b[(r, c)];
        }
    }
}

/// Block-diagonal matrix assembled from 2x2 blocks.
pub fn block_diag(blocks: &[Mat2]) -> DMatrix<f64> {
    let n = blocks.len();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for (i, b) in blocks.iter().enumerate() {
        set2(&mut m, i, i, b);
    }
    m
}

pub fn to_dmatrix(m: &Mat2) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]])
}

pub fn from_dmatrix(m: &DMatrix<f64>) -> Mat2 {
    get2(m, 0, 0)
}

pub fn mat2_from_rows(r: [[f64; 2]; 2]) -> Mat2 {
    Mat2::new(r[0][0], r[0][1], r[1][0], r[1][1])
}

pub fn mat2_to_rows(m: &Mat2) -> [[f64; 2]; 2] {
    [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]
}

/// Inverse of a 2x2 symmetric positive definite matrix, `None` if singular.
pub fn inv2_spd(m: &Mat2) -> Option<Mat2> {
    let s = symmetrize2(m);
    let det = s[(0, 0)] * s[(1, 1)] - s[(0, 1)] * s[(1, 0)];
    let scale = s.norm();
    if !(det > SPD_RELATIVE_TOL * scale * scale) || s[(0, 0)] <= 0.0 {
        return None;
    }
    Some(Mat2::new(s[(1, 1)], -s[(0, 1)], -s[(1, 0)], s[(0, 0)]) / det)
}
