//! Closed-form limits of the recursion for vanishing or unbounded spatial
//! correlation and unbounded temporal correlation, checked against the full
//! recursion at finite parameters.

use alloc::vec::Vec;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fim::{self, PriorFim};
use crate::linalg::{self, Mat2};
use crate::recursive;
use crate::scenario::{PriorModel, ScenarioConfig, Trajectory};

/// Precision standing in for an unbounded correlation.
pub const LARGE_PRECISION: f64 = 1e3;
/// Precision standing in for a vanishing correlation.
pub const SMALL_PRECISION: f64 = 1e-3;

/// Step cap for running the recursion to its fixed point.
pub const MAX_RECURSION_STEPS: usize = 100_000;
/// Stopping tolerance for the empirical limits.
pub const EMPIRICAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    SpatialZero,
    SpatialInf,
    TemporalInf,
}

impl Regime {
    pub fn label(self) -> &'static str {
        match self {
            Regime::SpatialZero => "spatial-zero",
            Regime::SpatialInf => "spatial-inf",
            Regime::TemporalInf => "temporal-inf",
        }
    }
}

/// Time-invariant inputs of the recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConstants {
    pub lambda_d: Vec<Mat2>,
    /// Spatial prior information of one slice, `2K x 2K`.
    pub spatial: DMatrix<f64>,
    pub gamma: Vec<Mat2>,
}

impl ScenarioConstants {
    /// Constants evaluated with every user at its initial position, using the
    /// first step's edges and the first transition's covariance.
    pub fn at_initial_positions(c: &ScenarioConfig) -> Result<Self> {
        let traj = Trajectory::stationary(c);
        Self::at_step(c, &traj, 0)
    }

    /// Constants taken from step `t` of `traj`: measurement and spatial blocks
    /// of step `t` and the temporal precision of the transition into it (or
    /// out of step 0 when `t = 0`).
    pub fn at_step(c: &ScenarioConfig, traj: &Trajectory, t: usize) -> Result<Self> {
        let meas = fim::measurement_fim(c, traj)?;
        let prior = PriorModel::from_config(c)?;
        let pf = fim::prior_fim(&prior, core::slice::from_ref(traj))?;
        let tr = if t == 0 { 0 } else { t - 1 };
        let gamma = (0..c.num_users)
            .map(|k| linalg::inv2_spd(&c.temporal_cov(tr, k)).ok_or(Error::NotSpd("temporal covariance")))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { lambda_d: (0..c.num_users).map(|k| meas.block(t, k)).collect(), spatial: pf.spatial_slice(t), gamma })
    }

    pub fn from_prior_fim(lambda_d: Vec<Mat2>, prior: &PriorFim, t: usize, gamma: Vec<Mat2>) -> Self {
        Self { lambda_d, spatial: prior.spatial_slice(t), gamma }
    }

    pub fn n_users(&self) -> usize {
        self.lambda_d.len()
    }

    /// `M = Lambda_D + Lambda_PS`.
    pub fn m(&self) -> DMatrix<f64> {
        &linalg::block_diag(&self.lambda_d) + &self.spatial
    }

    pub fn t_mat(&self) -> DMatrix<f64> {
        linalg::block_diag(&self.gamma)
    }

    pub fn spatial_ic(&self) -> DMatrix<f64> {
        let mut o = -self.spatial.clone();
        for k in 0..self.n_users() {
            linalg::set2(&mut o, k, k, &Mat2::zeros());
        }
        o
    }

    /// Per-user `M_k = Lambda_{D,k} + Xi_kk`.
    pub fn m_k(&self, k: usize) -> Mat2 {
        self.lambda_d[k] + linalg::get2(&self.spatial, k, k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserLimit {
    pub predicted: Mat2,
    pub empirical: Mat2,
    /// `|tr(empirical) - tr(predicted)| / tr(predicted)`.
    pub relative_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalGrowth {
    pub m_k: Vec<Mat2>,
    pub c_k: Vec<Mat2>,
    /// `M_k C_k`, the predicted per-step information gain.
    pub predicted_slope: Vec<Mat2>,
    /// Least-squares slope of `tr(J~_{t,k})` against `t` over the last half of the horizon.
    pub fitted_slope: Vec<f64>,
    pub r_squared: Vec<f64>,
    /// `|fitted - tr(predicted)| / tr(predicted)` per user.
    pub slope_gap: Vec<f64>,
    /// Largest relative spread of `tr(J~_{t,k}) / t` over the last half of the horizon.
    pub ratio_spread: Vec<f64>,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticReport {
    pub regime: Regime,
    pub per_user: Vec<UserLimit>,
    /// Averaged EoC `Tr(E~_t) / 2K` after each recursion step.
    pub eoc_trend: Vec<f64>,
    /// Mean per-user EoC after each recursion step.
    pub eoc_user_trend: Vec<f64>,
    /// Mean per-coordinate BCRB after each recursion step.
    pub bcrb_trend: Vec<f64>,
    pub temporal: Option<TemporalGrowth>,
}

impl AsymptoticReport {
    pub fn max_gap(&self) -> f64 {
        self.per_user.iter().map(|u| u.relative_gap).fold(0.0, f64::max)
    }
}

fn trace_gap(emp: &Mat2, pred: &Mat2) -> f64 {
    (emp.trace() - pred.trace()).abs() / pred.trace().abs()
}

/// Runs the full recursion under constant inputs until it stops moving, and
/// returns the limit with the per-step trends.
fn run_to_limit(c: &ScenarioConstants) -> Result<recursive::IterationOutcome> {
    let m = c.m();
    let out = recursive::iterate_to_convergence(
        &m,
        &c.t_mat(),
        &c.spatial_ic(),
        &m,
        MAX_RECURSION_STEPS,
        EMPIRICAL_TOL,
    )?;
    Ok(out)
}

fn per_user_efim(j: &DMatrix<f64>, k: usize) -> Result<Mat2> {
    let inv = linalg::spd_inverse(j).ok_or(Error::SingularState)?;
    linalg::inv2_spd(&linalg::get2(&inv, k, k)).ok_or(Error::SingularState)
}

/// Decoupled users: each converges to the stationary point of `(Lambda_{D,k}, Gamma_k)`.
pub fn limit_spatial_zero(c: &ScenarioConstants) -> Result<AsymptoticReport> {
    let out = run_to_limit(c)?;
    let j = &out.j_limit;
    let mut per_user = Vec::with_capacity(c.n_users());
    for k in 0..c.n_users() {
        let sp = recursive::stationary_point(&linalg::to_dmatrix(&c.lambda_d[k]), &linalg::to_dmatrix(&c.gamma[k]))?;
        let predicted = linalg::from_dmatrix(&sp.j_star);
        let empirical = per_user_efim(j, k)?;
        per_user.push(UserLimit { predicted, empirical, relative_gap: trace_gap(&empirical, &predicted) });
    }
    Ok(AsymptoticReport {
        regime: Regime::SpatialZero,
        per_user,
        eoc_trend: out.eoc,
        eoc_user_trend: out.eoc_user,
        bcrb_trend: out.bcrb,
        temporal: None,
    })
}

/// Rigidly coupled users share the summed information: every user converges to
/// the stationary point of `(sum_k Lambda_{D,k}, sum_k Gamma_k)`.
pub fn limit_spatial_inf(c: &ScenarioConstants) -> Result<AsymptoticReport> {
    let out = run_to_limit(c)?;
    let j = &out.j_limit;
    let m_s = c.lambda_d.iter().fold(Mat2::zeros(), |a, b| a + b);
    let t_s = c.gamma.iter().fold(Mat2::zeros(), |a, b| a + b);
    let sp = recursive::stationary_point(&linalg::to_dmatrix(&m_s), &linalg::to_dmatrix(&t_s))?;
    let predicted = linalg::from_dmatrix(&sp.j_star);
    let mut per_user = Vec::with_capacity(c.n_users());
    for k in 0..c.n_users() {
        let empirical = per_user_efim(j, k)?;
        per_user.push(UserLimit { predicted, empirical, relative_gap: trace_gap(&empirical, &predicted) });
    }
    Ok(AsymptoticReport {
        regime: Regime::SpatialInf,
        per_user,
        eoc_trend: out.eoc,
        eoc_user_trend: out.eoc_user,
        bcrb_trend: out.bcrb,
        temporal: None,
    })
}

/// `C_k = (I + sum_n [(M_d^{-1} Lambda^o)^n]_kk)^{-1}`, with `M_d` the block
/// diagonal of `M_k`. The series sums to `[(I - M_d^{-1} Lambda^o)^{-1}]_kk =
/// [M^{-1}]_kk M_k`, so `C_k = M_k^{-1} ([M^{-1}]_kk)^{-1}`. That form is used
/// directly: the spectral radius approaches 1 as spatial precision dominates.
pub fn spatial_efficiency(c: &ScenarioConstants, k: usize) -> Result<Mat2> {
    let m_inv = linalg::spd_inverse(&c.m()).ok_or(Error::NotSpd("M"))?;
    let marginal = linalg::inv2_spd(&linalg::get2(&m_inv, k, k)).ok_or(Error::SingularState)?;
    let mk_inv = linalg::inv2_spd(&c.m_k(k)).ok_or(Error::NotSpd("M_k"))?;
    Ok(mk_inv * marginal)
}

fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, r2)
}

/// Deterministic transitions: information accumulates linearly, `J~_{t,k} ~ t M_k C_k`.
pub fn limit_temporal_inf(c: &ScenarioConstants, horizon: usize) -> Result<AsymptoticReport> {
    if horizon < 10 {
        return Err(Error::InvalidConfig("horizon must be at least 10".into()));
    }
    let kn = c.n_users();
    let m = c.m();
    if !linalg::is_spd(&m) {
        return Err(Error::NotSpd("M"));
    }
    let t_mat = c.t_mat();
    let spatial_ic = c.spatial_ic();
    let mut traces = alloc::vec![Vec::with_capacity(horizon); kn];
    let mut bcrb_trend = Vec::with_capacity(horizon);
    let mut eoc_trend = Vec::with_capacity(horizon);
    let mut eoc_user_trend = Vec::with_capacity(horizon);
    let mut j = m.clone();
    for step in 1..=horizon {
        if step > 1 {
            let chol = linalg::symmetrize(&(&j + &t_mat)).cholesky().ok_or(Error::SingularInner { step })?;
            j = linalg::symmetrize(&(&m + &t_mat - &t_mat * chol.solve(&t_mat)));
        }
        let inv = linalg::spd_inverse(&j).ok_or(Error::SingularState)?;
        let gamma = if step > 1 { t_mat.clone() } else { DMatrix::zeros(2 * kn, 2 * kn) };
        let npi = &m + &spatial_ic + &gamma;
        let npi_inv = npi.try_inverse().ok_or(Error::SingularState)?;
        bcrb_trend.push(inv.trace() / (2 * kn) as f64);
        eoc_trend.push((&npi_inv * &j).trace() / (2 * kn) as f64);
        eoc_user_trend.push(recursive::mean_user_eoc(&npi_inv, &inv)?);
        for (k, tr) in traces.iter_mut().enumerate() {
            let jk = linalg::inv2_spd(&linalg::get2(&inv, k, k)).ok_or(Error::SingularState)?;
            tr.push(jk.trace());
        }
    }
    let j_inv = linalg::spd_inverse(&j).ok_or(Error::SingularState)?;
    let start = horizon / 2;
    let xs: Vec<f64> = (start + 1..=horizon).map(|t| t as f64).collect();
    let mut m_k = Vec::with_capacity(kn);
    let mut c_k = Vec::with_capacity(kn);
    let mut predicted_slope = Vec::with_capacity(kn);
    let mut fitted_slope = Vec::with_capacity(kn);
    let mut r_squared = Vec::with_capacity(kn);
    let mut slope_gap = Vec::with_capacity(kn);
    let mut ratio_spread = Vec::with_capacity(kn);
    let mut per_user = Vec::with_capacity(kn);
    for k in 0..kn {
        let mk = c.m_k(k);
        let ck = spatial_efficiency(c, k)?;
        let slope = mk * ck;
        let (fit, r2) = linear_fit(&xs, &traces[k][start..]);
        let ratios: Vec<f64> = xs.iter().zip(&traces[k][start..]).map(|(t, y)| y / t).collect();
        let (lo, hi) = ratios.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(*r), b.max(*r)));
        let pred_tr = slope.trace();
        m_k.push(mk);
        c_k.push(ck);
        predicted_slope.push(slope);
        fitted_slope.push(fit);
        r_squared.push(r2);
        slope_gap.push((fit - pred_tr).abs() / pred_tr);
        ratio_spread.push((hi - lo) / pred_tr);
        let empirical = linalg::inv2_spd(&linalg::get2(&j_inv, k, k)).ok_or(Error::SingularState)?;
        let predicted = slope * horizon as f64;
        per_user.push(UserLimit { predicted, empirical, relative_gap: trace_gap(&empirical, &predicted) });
    }
    Ok(AsymptoticReport {
        regime: Regime::TemporalInf,
        per_user,
        eoc_trend,
        eoc_user_trend,
        bcrb_trend,
        temporal: Some(TemporalGrowth {
            m_k,
            c_k,
            predicted_slope,
            fitted_slope,
            r_squared,
            slope_gap,
            ratio_spread,
            horizon,
        }),
    })
}
