//! Information coupling in the batch EFIM: the `D - A` split, the propagation
//! series, efficiency of correlation and its absorbing random-walk reading.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::block::BlockMatrix;
use crate::error::{Error, Result};
use crate::fim::{MeasurementFim, PriorFim};
use crate::linalg::{self, Mat2};

pub const DEFAULT_MAX_TERMS: usize = 10_000;
pub const DEFAULT_SERIES_TOL: f64 = 1e-10;
pub const POWER_ITERATIONS: usize = 1000;
pub const POWER_TOL: f64 = 1e-8;
/// Relative asymmetry of `Delta` or `E` above which an entry is flagged.
pub const ASYMMETRY_WARN: f64 = 1e-8;

/// `J_e = D - A` with `D` block diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DaSplit {
    pub d: BlockMatrix,
    pub a: BlockMatrix,
    /// Information reaching each node without passing through a neighbor:
    /// the measurement block, plus the anchor at the first step.
    pub direct: Vec<Mat2>,
    pub spectral_radius: f64,
}

impl DaSplit {
    pub fn d_block(&self, g: usize) -> Mat2 {
        self.d.block(g, g)
    }
}

pub fn split_d_a(efim: &BlockMatrix, meas: &MeasurementFim, prior: &PriorFim) -> Result<DaSplit> {
    let n = efim.n_blocks();
    if meas.blocks.len() != n || prior.spatial.n_blocks() != n {
        return Err(Error::DimensionMismatch { expected: n, found: meas.blocks.len() });
    }
    let d = efim.diagonal_part();
    let a = &d - efim;
    let mut direct = meas.blocks.clone();
    for (k, anc) in prior.anchor.iter().enumerate() {
        direct[k] += anc;
    }
    let spectral_radius = spectral_radius(&d, &a);
    Ok(DaSplit { d, a, direct, spectral_radius })
}

/// Spectral radius of `D^{-1} A` by power iteration in the `D` inner product,
/// where the operator is self-adjoint.
pub fn spectral_radius(d: &BlockMatrix, a: &BlockMatrix) -> f64 {
    let n = d.dim();
    if n == 0 || a.data.iter().all(|x| *x == 0.0) {
        return 0.0;
    }
    let dinv = match block_inverses(d) {
        Ok(v) => v,
        Err(_) => return f64::INFINITY,
    };
    let dnorm = |v: &nalgebra::DVector<f64>| (v.dot(&(&d.data * v))).max(0.0).sqrt();
    let mut v = nalgebra::DVector::from_fn(n, |i, _| 1.0 + 0.1 * ((i * 7919 % 13) as f64));
    let nv = dnorm(&v);
    v /= nv;
    let mut est = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let av = &a.data * &v;
        let mut w = apply_block_diag(&dinv, &av);
        let nw = dnorm(&w);
        if nw == 0.0 {
            return 0.0;
        }
        let prev = est;
        est = nw;
        w /= nw;
        v = w;
        if (est - prev).abs() <= POWER_TOL * est {
            break;
        }
    }
    est
}

fn block_inverses(d: &BlockMatrix) -> Result<Vec<Mat2>> {
    (0..d.n_blocks())
        .map(|g| linalg::inv2_spd(&d.block(g, g)).ok_or(Error::SingularBlock { index: g }))
        .collect()
}

fn apply_block_diag(blocks: &[Mat2], v: &nalgebra::DVector<f64>) -> nalgebra::DVector<f64> {
    let mut out = v.clone();
    for (g, b) in blocks.iter().enumerate() {
        let x = nalgebra::Vector2::new(v[2 * g], v[2 * g + 1]);
        let y = b * x;
        out[2 * g] = y.x;
        out[2 * g + 1] = y.y;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaSeries {
    pub delta: Mat2,
    pub terms_used: usize,
    pub converged: bool,
}

/// Partial sums of `[Q^n]_{gamma, gamma}`, `n >= 1`, with `Q = D^{-1} A`.
///
/// `A` has zero diagonal blocks, so odd terms can vanish on bipartite graphs.
/// The sum stops once the whole column `Q^n e_gamma` falls below `tol`, which
/// bounds every later increment.
pub fn delta_series(split: &DaSplit, t: usize, k: usize, max_terms: usize, tol: f64) -> Result<DeltaSeries> {
    if split.spectral_radius >= 1.0 {
        return Err(Error::SeriesDiverged { spectral_radius: split.spectral_radius });
    }
    let g = split.d.index(t, k);
    let dinv = block_inverses(&split.d)?;
    let n = split.d.dim();
    let mut x = DMatrix::zeros(n, 2);
    x[(2 * g, 0)] = 1.0;
    x[(2 * g + 1, 1)] = 1.0;
    let mut delta = Mat2::zeros();
    for term in 1..=max_terms {
        let ax = &split.a.data * &x;
        for (h, b) in dinv.iter().enumerate() {
            let blk = b * linalg::get2(&ax, h, 0);
            linalg::set2(&mut x, h, 0, &blk);
        }
        let inc = linalg::get2(&x, g, 0);
        delta += inc;
        if linalg::frobenius(&x) < tol {
            return Ok(DeltaSeries { delta, terms_used: term, converged: true });
        }
    }
    Ok(DeltaSeries { delta, terms_used: max_terms, converged: false })
}

fn delta_from_inverse(inv: &DMatrix<f64>, split: &DaSplit, g: usize) -> Mat2 {
    linalg::get2(inv, g, g) * split.d_block(g) - Mat2::identity()
}

/// `Delta = [J_e^{-1}]_{gamma gamma} D_gamma - I`. The product of two symmetric
/// matrices is not symmetric in general; the raw matrix is returned because
/// the identities `D (I + Delta)^{-1} = ([J^{-1}]_{gamma gamma})^{-1}` hold only for it.
/// Its eigenvalues are real and nonnegative.
pub fn delta_direct(efim: &BlockMatrix, split: &DaSplit, t: usize, k: usize) -> Result<Mat2> {
    let inv = efim.inverse_spd()?;
    Ok(delta_from_inverse(&inv, split, efim.index(t, k)))
}

/// Absorbing chain over the `TK` transient states plus the absorbing BS state.
#[derive(Debug, Clone, PartialEq)]
pub struct Ptpm {
    pub n_steps: usize,
    pub n_users: usize,
    /// `D^{-1} A`, transient to transient.
    pub q: DMatrix<f64>,
    /// `D^{-1}` times the direct information, transient to absorbing.
    pub r: DMatrix<f64>,
    pub spectral_radius: f64,
}

impl Ptpm {
    pub fn n_blocks(&self) -> usize {
        self.n_steps * self.n_users
    }

    /// The full `(2TK + 2)`-square matrix `[[Q, R], [0, I]]`.
    pub fn full_matrix(&self) -> DMatrix<f64> {
        let n = self.q.nrows();
        let mut p = DMatrix::zeros(n + 2, n + 2);
        p.view_mut((0, 0), (n, n)).copy_from(&self.q);
        p.view_mut((0, n), (n, 2)).copy_from(&self.r);
        p[(n, n)] = 1.0;
        p[(n + 1, n + 1)] = 1.0;
        p
    }

    /// Largest entry of `sum_j P_{gamma j} - I` over all block rows.
    pub fn max_row_sum_deviation(&self) -> f64 {
        let p = self.full_matrix();
        let nb = self.n_blocks() + 1;
        let mut worst: f64 = 0.0;
        for g in 0..nb {
            let mut s = Mat2::zeros();
            for h in 0..nb {
                s += linalg::get2(&p, g, h);
            }
            worst = worst.max((s - Mat2::identity()).abs().max());
        }
        worst
    }
}

pub fn build_ptpm(split: &DaSplit) -> Result<Ptpm> {
    let dinv = block_inverses(&split.d)?;
    let n = split.d.n_blocks();
    let mut q = DMatrix::zeros(2 * n, 2 * n);
    let mut r = DMatrix::zeros(2 * n, 2);
    for g in 0..n {
        for h in 0..n {
            let a = split.a.block(g, h);
            if a != Mat2::zeros() {
                linalg::set2(&mut q, g, h, &(dinv[g] * a));
            }
        }
        linalg::set2(&mut r, g, 0, &(dinv[g] * split.direct[g]));
    }
    Ok(Ptpm { n_steps: split.d.n_steps, n_users: split.d.n_users, q, r, spectral_radius: split.spectral_radius })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HittingProbabilities {
    /// Returns to the start node before absorption.
    pub f_return: Mat2,
    /// Absorption before returning to the start node.
    pub f_absorb: Mat2,
}

/// First-passage blocks from node `(t, k)`: the walk either comes back to the
/// node or is absorbed at the BS first. Computed on the taboo chain that
/// removes the start node.
pub fn hitting_probabilities(ptpm: &Ptpm, t: usize, k: usize) -> Result<HittingProbabilities> {
    if ptpm.spectral_radius >= 1.0 {
        return Err(Error::SeriesDiverged { spectral_radius: ptpm.spectral_radius });
    }
    let n = ptpm.n_blocks();
    let g = t * ptpm.n_users + k;
    let others: Vec<usize> = (0..n).filter(|&h| h != g).flat_map(|h| [2 * h, 2 * h + 1]).collect();
    let rows_g = [2 * g, 2 * g + 1];
    let q_gg = linalg::get2(&ptpm.q, g, g);
    let r_g = linalg::get2(&ptpm.r, g, 0);
    if others.is_empty() {
        return Ok(HittingProbabilities { f_return: q_gg, f_absorb: r_g });
    }
    let m = others.len();
    let q_ss = ptpm.q.select_rows(&others).select_columns(&others);
    let q_gs = ptpm.q.select_rows(&rows_g).select_columns(&others);
    let q_sg = ptpm.q.select_rows(&others).select_columns(&rows_g);
    let r_s = ptpm.r.select_rows(&others);
    let lhs = DMatrix::identity(m, m) - q_ss;
    let mut rhs = DMatrix::zeros(m, 4);
    rhs.view_mut((0, 0), (m, 2)).copy_from(&r_s);
    rhs.view_mut((0, 2), (m, 2)).copy_from(&q_sg);
    let sol = lhs.lu().solve(&rhs).ok_or(Error::SeriesDiverged { spectral_radius: ptpm.spectral_radius })?;
    let b = sol.columns(0, 2).into_owned();
    let h = sol.columns(2, 2).into_owned();
    let f_absorb = r_g + linalg::from_dmatrix(&(&q_gs * b));
    let f_return = q_gg + linalg::from_dmatrix(&(&q_gs * h));
    Ok(HittingProbabilities { f_return, f_absorb })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EocEntry {
    pub t: usize,
    pub k: usize,
    pub delta: Mat2,
    pub eoc: Mat2,
    pub f_return: Mat2,
    pub f_absorb: Mat2,
    /// `Tr(E) / 2`.
    pub scalar_eoc: f64,
    /// Trace of the `(gamma, gamma)` block of `J_e^{-1}`.
    pub bcrb: f64,
    /// `|E - E^T|_F / |E|_F`.
    pub asymmetry: f64,
    /// Relative gap between `D F_absorb` and the Schur-complement EFIM of the node.
    pub split_error: f64,
    /// Eigenvalues of `E`, ascending, from the symmetric form `D^{-1/2} J_e D^{-1/2}`.
    pub eoc_spectrum: (f64, f64),
}

impl EocEntry {
    pub fn asymmetry_warning(&self) -> bool {
        self.asymmetry > ASYMMETRY_WARN
    }

    /// `E = D^{-1} J_e` is similar to a symmetric matrix, so its eigenvalues
    /// are real. The raw 2x2 solve loses half the digits near a double
    /// eigenvalue; these come from the symmetric form.
    pub fn eoc_eigenvalues(&self) -> (f64, f64) {
        self.eoc_spectrum
    }

    /// `Delta = E^{-1} - I`, so its eigenvalues follow from those of `E`.
    pub fn delta_eigenvalues(&self) -> (f64, f64) {
        let (lo, hi) = self.eoc_spectrum;
        (1.0 / hi - 1.0, 1.0 / lo - 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EocReport {
    pub n_steps: usize,
    pub n_users: usize,
    pub entries: Vec<EocEntry>,
    /// `sum Tr(E) / 2TK`.
    pub mean_scalar_eoc: f64,
    pub max_split_error: f64,
}

impl EocReport {
    pub fn entry(&self, t: usize, k: usize) -> &EocEntry {
        &self.entries[t * self.n_users + k]
    }
}

pub fn eoc_report(efim: &BlockMatrix, split: &DaSplit, ptpm: &Ptpm) -> Result<EocReport> {
    let inv = efim.inverse_spd()?;
    let n = efim.n_blocks();
    let mut entries = Vec::with_capacity(n);
    for t in 0..efim.n_steps {
        for k in 0..efim.n_users {
            let g = efim.index(t, k);
            let delta = delta_from_inverse(&inv, split, g);
            let eoc = (Mat2::identity() + delta).try_inverse().ok_or(Error::SingularBlock { index: g })?;
            let hp = hitting_probabilities(ptpm, t, k)?;
            let inv_g = linalg::get2(&inv, g, g);
            let schur = linalg::inv2_spd(&inv_g).ok_or(Error::SingularEfim { min_eigenvalue: 0.0 })?;
            let split_error = linalg::rel_frobenius2(&(split.d_block(g) * hp.f_absorb), &schur);
            let asymmetry = (eoc - eoc.transpose()).norm() / eoc.norm().max(f64::MIN_POSITIVE);
            let eoc_spectrum =
                linalg::eig2_generalized(&schur, &split.d_block(g)).ok_or(Error::SingularBlock { index: g })?;
            entries.push(EocEntry {
                t,
                k,
                delta,
                eoc,
                f_return: hp.f_return,
                f_absorb: hp.f_absorb,
                scalar_eoc: 0.5 * eoc.trace(),
                bcrb: inv_g.trace(),
                asymmetry,
                split_error,
                eoc_spectrum,
            });
        }
    }
    let mean_scalar_eoc = entries.iter().map(|e| e.scalar_eoc).sum::<f64>() / n as f64;
    let max_split_error = entries.iter().map(|e| e.split_error).fold(0.0, f64::max);
    Ok(EocReport { n_steps: efim.n_steps, n_users: efim.n_users, entries, mean_scalar_eoc, max_split_error })
}

/// Per-node `E = (I + Delta)^{-1}` and bound, from the inverse only. Works for
/// any spectral radius, unlike the random-walk route.
pub fn eoc_direct(efim: &BlockMatrix, split: &DaSplit) -> Result<Vec<(Mat2, f64)>> {
    let inv = efim.inverse_spd()?;
    (0..efim.n_blocks())
        .map(|g| {
            let delta = delta_from_inverse(&inv, split, g);
            let eoc = (Mat2::identity() + delta).try_inverse().ok_or(Error::SingularBlock { index: g })?;
            Ok((eoc, linalg::get2(&inv, g, g).trace()))
        })
        .collect()
}

/// Mean scalar EoC computed from the inverse only, without the random-walk route.
pub fn mean_scalar_eoc_direct(efim: &BlockMatrix, split: &DaSplit) -> Result<f64> {
    let e = eoc_direct(efim, split)?;
    Ok(e.iter().map(|(m, _)| 0.5 * m.trace()).sum::<f64>() / e.len() as f64)
}
