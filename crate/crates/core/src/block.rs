//! Dense symmetric matrix over stacked user positions, addressed in 2x2 blocks.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat2};

/// A `2TK x 2TK` matrix with block index `gamma = t * K + k` (zero based).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatrix {
    pub n_steps: usize,
    pub n_users: usize,
    pub data: DMatrix<f64>,
}

impl BlockMatrix {
    pub fn zeros(n_steps: usize, n_users: usize) -> Self {
        let n = 2 * n_steps * n_users;
        Self { n_steps, n_users, data: DMatrix::zeros(n, n) }
    }

    pub fn from_matrix(n_steps: usize, n_users: usize, data: DMatrix<f64>) -> Result<Self> {
        let n = 2 * n_steps * n_users;
        if data.nrows() != n || data.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: data.nrows() });
        }
        Ok(Self { n_steps, n_users, data })
    }

    pub fn n_blocks(&self) -> usize {
        self.n_steps * self.n_users
    }

    pub fn dim(&self) -> usize {
        2 * self.n_blocks()
    }

    pub fn index(&self, t: usize, k: usize) -> usize {
        t * self.n_users + k
    }

    pub fn block(&self, g: usize, h: usize) -> Mat2 {
        linalg::get2(&self.data, g, h)
    }

    pub fn set_block(&mut self, g: usize, h: usize, b: &Mat2) {
        linalg::set2(&mut self.data, g, h, b);
    }

    pub fn add_block(&mut self, g: usize, h: usize, b: &Mat2) {
        linalg::add2(&mut self.data, g, h, b);
    }

    /// Copy keeping only the diagonal blocks.
    pub fn diagonal_part(&self) -> Self {
        let mut out = Self::zeros(self.n_steps, self.n_users);
        for g in 0..self.n_blocks() {
            out.set_block(g, g, &self.block(g, g));
        }
        out
    }

    pub fn diagonal_blocks(&self) -> alloc::vec::Vec<Mat2> {
        (0..self.n_blocks()).map(|g| self.block(g, g)).collect()
    }

    /// Sum of `B_{g,h}` over `h`, for each block row `g`.
    pub fn block_row_sums(&self) -> alloc::vec::Vec<Mat2> {
        let n = self.n_blocks();
        (0..n)
            .map(|g| (0..n).fold(Mat2::zeros(), |acc, h| acc + self.block(g, h)))
            .collect()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let d = &self.data - self.data.transpose();
        d.iter().fold(0.0, |a: f64, v| a.max(v.abs()))
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        let scale = self.data.iter().fold(0.0, |a: f64, v| a.max(v.abs()));
        self.max_asymmetry() <= rel_tol * scale.max(f64::MIN_POSITIVE)
    }

    /// Inverse through Cholesky, failing with the smallest eigenvalue when the
    /// matrix is not numerically positive definite.
    pub fn inverse_spd(&self) -> Result<DMatrix<f64>> {
        if !linalg::is_spd(&self.data) {
            return Err(Error::SingularEfim { min_eigenvalue: linalg::min_eigenvalue(&self.data) });
        }
        linalg::spd_inverse(&self.data)
            .ok_or(Error::SingularEfim { min_eigenvalue: linalg::min_eigenvalue(&self.data) })
    }
}

impl core::ops::Add for &BlockMatrix {
    type Output = BlockMatrix;
    fn add(self, rhs: &BlockMatrix) -> BlockMatrix {
        BlockMatrix { n_steps: self.n_steps, n_users: self.n_users, data: &self.data + &rhs.data }
    }
}

impl core::ops::Sub for &BlockMatrix {
    type Output = BlockMatrix;
    fn sub(self, rhs: &BlockMatrix) -> BlockMatrix {
        BlockMatrix { n_steps: self.n_steps, n_users: self.n_users, data: &self.data - &rhs.data }
    }
}
