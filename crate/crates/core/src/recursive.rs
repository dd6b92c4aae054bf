//! Filtering-mode EFIM recursion over time slices, its convergence condition
//! and the Riccati fixed point it settles on under constant inputs.

use alloc::vec::Vec;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fim::{MeasurementFim, PriorFim};
use crate::linalg::{self, Mat2};

/// Eigenvalue threshold for Loewner comparisons.
pub const LOEWNER_TOL: f64 = -1e-10;
pub const DEFAULT_CONVERGENCE_TOL: f64 = 1e-6;
pub const NEUMANN_TOL: f64 = 1e-10;
pub const NEUMANN_MAX_TERMS: usize = 10_000;

/// Inputs entering the recursion at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInputs {
    /// Measurement information per user; at the first step it also carries the anchor.
    pub direct: Vec<Mat2>,
    /// Spatial prior information of the slice, `2K x 2K`.
    pub spatial: DMatrix<f64>,
    /// Temporal precision linking the previous step to this one, zero at the first step.
    pub gamma_prev: Vec<Mat2>,
}

impl StepInputs {
    pub fn n_users(&self) -> usize {
        self.direct.len()
    }

    /// `D~ = Lambda_D + Lambda_PS^D + Gamma_prev`, block diagonal.
    pub fn npi(&self) -> DMatrix<f64> {
        let blocks: Vec<Mat2> = (0..self.n_users())
            .map(|k| self.direct[k] + linalg::get2(&self.spatial, k, k) + self.gamma_prev[k])
            .collect();
        linalg::block_diag(&blocks)
    }

    /// Off-diagonal spatial coupling `Lambda^o`, the negated off-diagonal blocks of `Lambda_PS`.
    pub fn spatial_ic(&self) -> DMatrix<f64> {
        let mut o = -self.spatial.clone();
        for k in 0..self.n_users() {
            linalg::set2(&mut o, k, k, &Mat2::zeros());
        }
        o
    }

    pub fn gamma_matrix(&self) -> DMatrix<f64> {
        linalg::block_diag(&self.gamma_prev)
    }

    /// `Lambda_D + Lambda_PS`, the snapshot information of the slice.
    pub fn snapshot(&self) -> DMatrix<f64> {
        &linalg::block_diag(&self.direct) + &self.spatial
    }

    pub fn with_direct_scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.direct.iter_mut().for_each(|d| *d *= s);
        out
    }
}

/// Builds the inputs for step `t` (zero based) from batch components.
pub fn step_inputs(meas: &MeasurementFim, prior: &PriorFim, t: usize) -> Result<StepInputs> {
    let kn = meas.n_users;
    let mut direct: Vec<Mat2> = (0..kn).map(|k| meas.block(t, k)).collect();
    if t == 0 {
        for (d, a) in direct.iter_mut().zip(&prior.anchor) {
            *d += a;
        }
    }
    let gamma_prev = (0..kn)
        .map(|k| {
            if t == 0 {
                Mat2::zeros()
            } else {
                // The off-diagonal temporal block between t-1 and t is -Gamma.
                let g = prior.temporal.index(t - 1, k);
                let h = prior.temporal.index(t, k);
                -prior.temporal.block(g, h)
            }
        })
        .collect();
    Ok(StepInputs { direct, spatial: prior.spatial_slice(t), gamma_prev })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserState {
    pub efim: Mat2,
    pub npi: Mat2,
    pub eoc: Mat2,
    pub bcrb: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecursiveState {
    /// One-based step index.
    pub step: usize,
    pub efim: DMatrix<f64>,
    pub npi: DMatrix<f64>,
    /// `D~^{-1} J~`.
    pub eoc: DMatrix<f64>,
    /// `G = Gamma (J~_prev + Gamma)^{-1} Gamma`.
    pub temporal_loss: DMatrix<f64>,
    pub spatial_ic: DMatrix<f64>,
    pub gamma_prev: DMatrix<f64>,
    pub condition_satisfied: bool,
    pub slack: f64,
    pub per_user: Vec<UserState>,
    /// Factor applied to the direct information of the next step.
    pub next_measurement_scale: f64,
}

impl RecursiveState {
    pub fn n_users(&self) -> usize {
        self.per_user.len()
    }

    /// Mean per-coordinate bound, `Tr(J~^{-1}) / 2K`.
    pub fn bcrb_mean(&self) -> f64 {
        self.per_user.iter().map(|u| u.bcrb).sum::<f64>() / (2 * self.n_users()) as f64
    }

    /// Averaged EoC `Tr(E~_t) / 2K` over the joint slice. `Lambda^o` has zero
    /// diagonal blocks, so only the temporal loss `G` lowers it.
    pub fn eoc_mean(&self) -> f64 {
        self.eoc.trace() / self.eoc.nrows() as f64
    }

    /// Mean over users of `Tr(D~_k^{-1} J~_{t,k}) / 2`, with `J~_{t,k}` the
    /// marginal information of user k.
    pub fn eoc_user_mean(&self) -> f64 {
        self.per_user.iter().map(|u| 0.5 * u.eoc.trace()).sum::<f64>() / self.n_users() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCheck {
    pub satisfied: bool,
    /// Smallest eigenvalue of `D~ - (J~_prev + Lambda^o + G)`.
    pub slack: f64,
}

fn temporal_loss(prev_j: Option<&DMatrix<f64>>, gamma: &DMatrix<f64>, step: usize) -> Result<DMatrix<f64>> {
    let n = gamma.nrows();
    match prev_j {
        None => Ok(DMatrix::zeros(n, n)),
        Some(j) => {
            if gamma.iter().all(|x| *x == 0.0) {
                return Ok(DMatrix::zeros(n, n));
            }
            let inner = j + gamma;
            let chol = linalg::symmetrize(&inner).cholesky().ok_or(Error::SingularInner { step })?;
            Ok(linalg::symmetrize(&(gamma * chol.solve(gamma))))
        }
    }
}

/// Checks whether the information can only grow from the previous step.
pub fn check_convergence(prev_j: Option<&DMatrix<f64>>, inputs: &StepInputs) -> Result<ConvergenceCheck> {
    let gamma = inputs.gamma_matrix();
    let g = temporal_loss(prev_j, &gamma, 0)?;
    let n = gamma.nrows();
    let zero = DMatrix::zeros(n, n);
    let rhs = prev_j.unwrap_or(&zero) + inputs.spatial_ic() + g;
    let slack = linalg::loewner_slack(&inputs.npi(), &rhs);
    Ok(ConvergenceCheck { satisfied: slack >= LOEWNER_TOL, slack })
}

/// `L~ = J (J + T)^{-1} J`, the right-hand side of the growth condition.
pub fn temporal_loss_bound(j: &DMatrix<f64>, t_mat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = linalg::symmetrize(&(j + t_mat)).cholesky().ok_or(Error::SingularInner { step: 0 })?;
    Ok(linalg::symmetrize(&(j * chol.solve(j))))
}

pub fn recursive_step(prev: Option<&RecursiveState>, inputs: &StepInputs) -> Result<RecursiveState> {
    let scale = prev.map_or(1.0, |p| p.next_measurement_scale);
    let scaled;
    let inputs = if scale != 1.0 {
        scaled = inputs.with_direct_scaled(scale);
        &scaled
    } else {
        inputs
    };
    let step = prev.map_or(1, |p| p.step + 1);
    let prev_j = prev.map(|p| &p.efim);
    let gamma = inputs.gamma_matrix();
    let g = temporal_loss(prev_j, &gamma, step)?;
    let npi = inputs.npi();
    let spatial_ic = inputs.spatial_ic();
    let efim = linalg::symmetrize(&(&npi - &spatial_ic - &g));
    let n = npi.nrows();
    let zero = DMatrix::zeros(n, n);
    let slack = linalg::loewner_slack(&npi, &(prev_j.unwrap_or(&zero) + &spatial_ic + &g));

    let kn = inputs.n_users();
    let npi_inv = {
        let blocks = (0..kn)
            .map(|k| linalg::inv2_spd(&linalg::get2(&npi, k, k)).ok_or(Error::SingularBlock { index: k }))
            .collect::<Result<Vec<_>>>()?;
        linalg::block_diag(&blocks)
    };
    let eoc = &npi_inv * &efim;
    let efim_inv = linalg::spd_inverse(&efim).ok_or(Error::SingularState)?;
    let mut per_user = Vec::with_capacity(kn);
    for k in 0..kn {
        let inv_k = linalg::get2(&efim_inv, k, k);
        let jk = linalg::inv2_spd(&inv_k).ok_or(Error::SingularState)?;
        let dk = linalg::get2(&npi, k, k);
        let ek = linalg::get2(&npi_inv, k, k) * jk;
        per_user.push(UserState { efim: jk, npi: dk, eoc: ek, bcrb: inv_k.trace() });
    }
    Ok(RecursiveState {
        step,
        efim,
        npi,
        eoc,
        temporal_loss: g,
        spatial_ic,
        gamma_prev: gamma,
        condition_satisfied: slack >= LOEWNER_TOL,
        slack,
        per_user,
        next_measurement_scale: 1.0,
    })
}

/// Runs the recursion over all steps of a batch problem.
pub fn run_recursion(meas: &MeasurementFim, prior: &PriorFim) -> Result<Vec<RecursiveState>> {
    run_recursion_scaled(meas, prior, &|_| 1.0)
}

/// As `run_recursion`, with the measurement information of step `t` (zero
/// based) scaled by `scale(t)`.
pub fn run_recursion_scaled(
    meas: &MeasurementFim,
    prior: &PriorFim,
    scale: &dyn Fn(usize) -> f64,
) -> Result<Vec<RecursiveState>> {
    let mut out: Vec<RecursiveState> = Vec::with_capacity(meas.n_steps);
    for t in 0..meas.n_steps {
        let inputs = step_inputs(meas, prior, t)?;
        let s = scale(t);
        let state = match out.last() {
            Some(p) => recursive_step(Some(&inject_disturbance(p, s)), &inputs)?,
            None => recursive_step(None, &inputs.with_direct_scaled(s))?,
        };
        out.push(state);
    }
    Ok(out)
}

/// Marks the state so that the next step's direct information is scaled by `scale`.
pub fn inject_disturbance(state: &RecursiveState, scale: f64) -> RecursiveState {
    let mut s = state.clone();
    s.next_measurement_scale = scale;
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryPoint {
    pub m: DMatrix<f64>,
    pub t_mat: DMatrix<f64>,
    pub j_star: DMatrix<f64>,
    /// `|M + T - T (J + T)^{-1} T - J|_F / |J|_F`.
    pub riccati_residual: f64,
}

/// Residual of `M + T - T (X + T)^{-1} T = X`, relative to `|X|_F`.
pub fn riccati_residual(m: &DMatrix<f64>, t_mat: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    let Some(chol) = linalg::symmetrize(&(x + t_mat)).cholesky() else {
        return f64::INFINITY;
    };
    let lhs = m + t_mat - t_mat * chol.solve(t_mat);
    linalg::rel_frobenius(&lhs, x)
}

/// Fixed point of `X = M + T - T (X + T)^{-1} T`.
///
/// With `S = T^{1/2} M^{-1} T^{1/2}` and `W = I + 4S`, the solution is
/// `X = (1/2) T^{1/2} (W^{1/2} + I) T^{-1/2} M`, which is the inverse of
/// `(1/2) T^{-1/2} W^{1/2} T^{-1/2} - (1/2) T^{-1}` written without the
/// cancellation in `W^{1/2} - I`.
pub fn stationary_point(m: &DMatrix<f64>, t_mat: &DMatrix<f64>) -> Result<StationaryPoint> {
    if !linalg::is_spd(m) {
        return Err(Error::NotSpd("M"));
    }
    if !linalg::is_spd(t_mat) {
        return Err(Error::NotSpd("T"));
    }
    let n = m.nrows();
    let m_inv = linalg::spd_inverse(m).ok_or(Error::NotSpd("M"))?;
    let th = linalg::sym_sqrt(t_mat);
    let thi = linalg::sym_inv_sqrt(t_mat);
    let s = linalg::symmetrize(&(&th * &m_inv * &th));
    let w = DMatrix::identity(n, n) + s * 4.0;
    let wh = linalg::sym_sqrt(&w);
    let x = (&th * (wh + DMatrix::identity(n, n)) * &thi * m) * 0.5;
    let j_star = linalg::symmetrize(&x);
    let riccati_residual = riccati_residual(m, t_mat, &j_star);
    Ok(StationaryPoint { m: m.clone(), t_mat: t_mat.clone(), j_star, riccati_residual })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationOutcome {
    pub j_limit: DMatrix<f64>,
    pub steps: usize,
    pub converged: bool,
    /// `Tr(J^{-1}) / n` after each step.
    pub bcrb: Vec<f64>,
    /// `Tr(D~^{-1} J) / n` after each step, `D~ = M + Lambda^o + T`.
    pub eoc: Vec<f64>,
    /// Per-user counterpart, see [`mean_user_eoc`].
    pub eoc_user: Vec<f64>,
}

impl IterationOutcome {
    pub fn into_result(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::MaxStepsExceeded { steps: self.steps })
        }
    }
}

/// Iterates the constant-input recursion from `j_init`. A non-converged run
/// returns the last iterate with `converged = false`.
pub fn iterate_to_convergence(
    m: &DMatrix<f64>,
    t_mat: &DMatrix<f64>,
    spatial_ic: &DMatrix<f64>,
    j_init: &DMatrix<f64>,
    max_steps: usize,
    tol: f64,
) -> Result<IterationOutcome> {
    let n = m.nrows();
    let npi = m + spatial_ic + t_mat;
    let npi_inv = npi.try_inverse().ok_or(Error::SingularState)?;
    let mut j = j_init.clone();
    let mut bcrb = Vec::new();
    let mut eoc = Vec::new();
    let mut eoc_user = Vec::new();
    for step in 1..=max_steps {
        let g = temporal_loss(Some(&j), t_mat, step)?;
        let next = linalg::symmetrize(&(m + t_mat - g));
        let inv = linalg::spd_inverse(&next).ok_or(Error::SingularState)?;
        bcrb.push(inv.trace() / n as f64);
        eoc.push((&npi_inv * &next).trace() / n as f64);
        eoc_user.push(mean_user_eoc(&npi_inv, &inv)?);
        let done = linalg::frobenius(&(&next - &j)) < tol * linalg::frobenius(&next);
        j = next;
        if done {
            return Ok(IterationOutcome { j_limit: j, steps: step, converged: true, bcrb, eoc, eoc_user });
        }
    }
    Ok(IterationOutcome { j_limit: j, steps: max_steps, converged: false, bcrb, eoc, eoc_user })
}

/// Mean over users of `Tr(D~_k^{-1} J_k) / 2` where `J_k = ([J^{-1}]_kk)^{-1}`.
pub fn mean_user_eoc(npi_inv: &DMatrix<f64>, efim_inv: &DMatrix<f64>) -> Result<f64> {
    let kn = npi_inv.nrows() / 2;
    let mut s = 0.0;
    for k in 0..kn {
        let jk = linalg::inv2_spd(&linalg::get2(efim_inv, k, k)).ok_or(Error::SingularState)?;
        s += 0.5 * (linalg::get2(npi_inv, k, k) * jk).trace();
    }
    Ok(s / kn as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerUserRecursion {
    pub efim: Mat2,
    pub npi: Mat2,
    /// `(I + sum_n [Q~^n]_{kk})^{-1}` with `Q~ = D~^{-1}(Lambda^o + G)`.
    pub eoc_series: Mat2,
    /// `D~_k^{-1} J~_k`.
    pub eoc_direct: Mat2,
    pub terms_used: usize,
    pub series_converged: bool,
}

pub fn per_user_recursive(state: &RecursiveState, k: usize) -> Result<PerUserRecursion> {
    let inv = linalg::spd_inverse(&state.efim).ok_or(Error::SingularState)?;
    let efim = linalg::inv2_spd(&linalg::get2(&inv, k, k)).ok_or(Error::SingularState)?;
    let npi = linalg::get2(&state.npi, k, k);
    let npi_k_inv = linalg::inv2_spd(&npi).ok_or(Error::SingularState)?;
    let eoc_direct = npi_k_inv * efim;

    let (sum, terms_used, series_converged) = neumann_diag(&state.npi, &(&state.spatial_ic + &state.temporal_loss), k)?;
    let eoc_series = (Mat2::identity() + sum).try_inverse().ok_or(Error::SingularState)?;
    Ok(PerUserRecursion { efim, npi, eoc_series, eoc_direct, terms_used, series_converged })
}

/// `sum_{n >= 1} [(D^{-1} C)^n]_{kk}` for block-diagonal `D`. Stops when the
/// propagated column `(D^{-1} C)^n e_k` is below tolerance; `C` may have zero
/// diagonal blocks, so a single increment can vanish early.
pub fn neumann_diag(d: &DMatrix<f64>, c: &DMatrix<f64>, k: usize) -> Result<(Mat2, usize, bool)> {
    let q = d.clone().try_inverse().ok_or(Error::SingularState)? * c;
    let n = d.nrows();
    let mut x = DMatrix::zeros(n, 2);
    x[(2 * k, 0)] = 1.0;
    x[(2 * k + 1, 1)] = 1.0;
    let mut sum = Mat2::zeros();
    for term in 1..=NEUMANN_MAX_TERMS {
        x = &q * x;
        let inc = linalg::get2(&x, k, 0);
        sum += inc;
        if !x.iter().all(|v| v.is_finite()) {
            return Ok((sum, term, false));
        }
        if linalg::frobenius(&x) < NEUMANN_TOL {
            return Ok((sum, term, true));
        }
    }
    Ok((sum, NEUMANN_MAX_TERMS, false))
}
