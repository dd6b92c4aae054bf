//! Cascaded BS-RIS-user channel, geometry parameters and analytic derivatives.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vec2;
use crate::scenario::{PhaseProfiles, ScenarioConfig, Trajectory, MIN_SEPARATION};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryParams {
    /// Angle of arrival at the RIS, in `[0, pi]`.
    pub aoa_ru: f64,
    pub gain_ru: f64,
    pub distance: f64,
}

/// Gradients of the RIS-user angle and gain with respect to the user position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryGradient {
    pub d_theta: Vec2,
    pub d_rho: Vec2,
}

/// Path amplitude `d^{-|alpha|/2}`. The sign of `alpha` is ignored so that
/// gain always decays with distance.
pub fn path_gain(distance: f64, alpha: f64) -> f64 {
    distance.powf(-0.5 * alpha.abs())
}

fn separation(ris: &Vec2, user: &Vec2) -> Result<(Vec2, f64)> {
    let diff = user - ris;
    let d = diff.norm();
    if !(d > MIN_SEPARATION) {
        return Err(Error::DegenerateGeometry { distance: d, min_separation: MIN_SEPARATION });
    }
    Ok((diff, d))
}

pub fn geometry_params(ris: &Vec2, user: &Vec2, alpha: f64) -> Result<GeometryParams> {
    let (diff, d) = separation(ris, user)?;
    let aoa_ru = (diff.x / d).clamp(-1.0, 1.0).acos();
    Ok(GeometryParams { aoa_ru, gain_ru: path_gain(d, alpha), distance: d })
}

/// Analytic gradients. On the line `dy = 0` the angle is not differentiable in
/// `u_y`; the one-sided derivative from `dy > 0` is returned.
pub fn geometry_gradient(ris: &Vec2, user: &Vec2, alpha: f64) -> Result<GeometryGradient> {
    let (diff, d) = separation(ris, user)?;
    let d2 = d * d;
    let s = if diff.y >= 0.0 { 1.0 } else { -1.0 };
    let d_theta = Vec2::new(-diff.y.abs() / d2, s * diff.x / d2);
    let a = 0.5 * alpha.abs();
    let d_rho = diff * (-a * d.powf(-a - 2.0));
    Ok(GeometryGradient { d_theta, d_rho })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrayKind {
    Bs,
    Ris,
}

/// Half-wavelength ULA response `exp(j pi m cos(angle))`, `m = 0..n`.
/// Both array kinds share the same geometry.
pub fn steering_vector(_kind: ArrayKind, angle: f64, n: usize) -> Vec<Complex64> {
    let c = angle.cos();
    (0..n).map(|m| Complex64::from_polar(1.0, PI * m as f64 * c)).collect()
}

/// Derivative of `steering_vector` with respect to the angle.
pub fn steering_derivative(angle: f64, n: usize) -> Vec<Complex64> {
    let (s, c) = angle.sin_cos();
    (0..n)
        .map(|m| {
            let mf = m as f64;
            Complex64::new(0.0, -PI * mf * s) * Complex64::from_polar(1.0, PI * mf * c)
        })
        .collect()
}

fn los_fraction(kappa: f64) -> f64 {
    if kappa.is_infinite() {
        1.0
    } else {
        kappa / (1.0 + kappa)
    }
}

/// Amplitude factor of the LoS cascade, `sqrt(k_br k_ru / ((1 + k_br)(1 + k_ru)))`.
pub fn rician_los_factor(kappa_br: f64, kappa_ru: f64) -> f64 {
    (los_fraction(kappa_br) * los_fraction(kappa_ru)).sqrt()
}

/// Combined weight of the three NLoS cross terms, `1 - los_br los_ru`.
pub fn rician_nlos_power(kappa_br: f64, kappa_ru: f64) -> f64 {
    1.0 - los_fraction(kappa_br) * los_fraction(kappa_ru)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelVector {
    pub mean: Vec<Complex64>,
    pub effective_noise_variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelJacobian {
    /// `d_h_d_theta[i]` is the derivative with respect to RIS i's angle.
    pub d_h_d_theta: Vec<Vec<Complex64>>,
    pub d_h_d_rho: Vec<Vec<Complex64>>,
}

/// Phases of RIS `i` at step `t` while user `k` transmits.
pub fn ris_phases(c: &ScenarioConfig, traj: &Trajectory, t: usize, i: usize, k: usize) -> Result<Vec<f64>> {
    let n = c.n_ris_elements;
    match &c.ris_phase_profiles {
        PhaseProfiles::Aligned => {
            let g = geometry_params(&c.ris(i), &traj.at(t, k), c.path_loss_exponent)?;
            let shift = c.bs_ris_aod[i].cos() - g.aoa_ru.cos();
            Ok((0..n).map(|m| PI * m as f64 * shift).collect())
        }
        PhaseProfiles::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            rng.set_stream((t * c.num_ris + i) as u64);
            Ok((0..n).map(|_| rng.random::<f64>() * 2.0 * PI).collect())
        }
        PhaseProfiles::Explicit(p) => Ok(p[t][i].clone()),
    }
}

#[derive(Debug, Clone)]
struct Link {
    /// `rician factor * rho_br`.
    coef: f64,
    a_bs: Vec<Complex64>,
    /// `conj(a_R(phi)) * exp(j omega) / sqrt(N_r)`, elementwise.
    combiner: Vec<Complex64>,
}

/// Per-(t, k) cascade with the RIS-user parameters left free, so the channel
/// can be evaluated at arbitrary `(theta_i, rho_i)`.
#[derive(Debug, Clone)]
pub struct CascadeLinks {
    n_bs: usize,
    links: Vec<Link>,
}

impl CascadeLinks {
    pub fn new(c: &ScenarioConfig, phases: &[Vec<f64>]) -> Self {
        let kap = rician_los_factor(c.rician_factor_br, c.rician_factor_ru);
        let norm = 1.0 / (c.n_ris_elements as f64).sqrt();
        let links = (0..c.num_ris)
            .map(|i| {
                let a_r = steering_vector(ArrayKind::Ris, c.bs_ris_aod[i], c.n_ris_elements);
                let combiner = a_r
                    .iter()
                    .zip(&phases[i])
                    .map(|(a, w)| a.conj() * Complex64::from_polar(norm, *w))
                    .collect();
                Link {
                    coef: kap * c.bs_ris_gains[i],
                    a_bs: steering_vector(ArrayKind::Bs, c.bs_ris_aoa[i], c.n_bs_antennas),
                    combiner,
                }
            })
            .collect();
        Self { n_bs: c.n_bs_antennas, links }
    }

    pub fn num_ris(&self) -> usize {
        self.links.len()
    }

    /// Scalar RIS combining gain `a_R^H(phi) Omega a_R(theta)` and its angle derivative.
    pub fn combining_gain(&self, i: usize, theta: f64) -> (Complex64, Complex64) {
        let (s, c) = theta.sin_cos();
        let mut g = Complex64::new(0.0, 0.0);
        let mut dg = Complex64::new(0.0, 0.0);
        for (m, w) in self.links[i].combiner.iter().enumerate() {
            let mf = m as f64;
            let term = w * Complex64::from_polar(1.0, PI * mf * c);
            g += term;
            dg += term * Complex64::new(0.0, -PI * mf * s);
        }
        (g, dg)
    }

    /// Contribution of RIS `i` to the channel.
    pub fn summand(&self, i: usize, theta: f64, rho: f64) -> Vec<Complex64> {
        let (g, _) = self.combining_gain(i, theta);
        let l = &self.links[i];
        let s = g * (l.coef * rho);
        l.a_bs.iter().map(|a| a * s).collect()
    }

    /// Channel at `params[i] = (theta_i, rho_i)`.
    pub fn channel(&self, params: &[(f64, f64)]) -> Vec<Complex64> {
        let mut h = alloc::vec![Complex64::new(0.0, 0.0); self.n_bs];
        for (i, &(theta, rho)) in params.iter().enumerate() {
            for (hm, s) in h.iter_mut().zip(self.summand(i, theta, rho)) {
                *hm += s;
            }
        }
        h
    }

    pub fn jacobian(&self, params: &[(f64, f64)]) -> ChannelJacobian {
        let mut d_theta = Vec::with_capacity(params.len());
        let mut d_rho = Vec::with_capacity(params.len());
        for (i, &(theta, rho)) in params.iter().enumerate() {
            let l = &self.links[i];
            let (g, dg) = self.combining_gain(i, theta);
            let st = dg * (l.coef * rho);
            let sr = g * l.coef;
            d_theta.push(l.a_bs.iter().map(|a| a * st).collect());
            d_rho.push(l.a_bs.iter().map(|a| a * sr).collect());
        }
        ChannelJacobian { d_h_d_theta: d_theta, d_h_d_rho: d_rho }
    }
}

/// Geometry of every RIS relative to user `k` at step `t`.
pub fn link_geometry(c: &ScenarioConfig, traj: &Trajectory, t: usize, k: usize) -> Result<Vec<GeometryParams>> {
    (0..c.num_ris).map(|i| geometry_params(&c.ris(i), &traj.at(t, k), c.path_loss_exponent)).collect()
}

/// Cascade and RIS-user parameters for `(t, k)`.
pub fn cascade_links(
    c: &ScenarioConfig,
    traj: &Trajectory,
    t: usize,
    k: usize,
) -> Result<(CascadeLinks, Vec<GeometryParams>)> {
    let geo = link_geometry(c, traj, t, k)?;
    let phases = (0..c.num_ris).map(|i| ris_phases(c, traj, t, i, k)).collect::<Result<Vec<_>>>()?;
    Ok((CascadeLinks::new(c, &phases), geo))
}

/// Noise variance including the NLoS cascade terms, treated as white.
pub fn effective_noise_variance(c: &ScenarioConfig, geo: &[GeometryParams]) -> f64 {
    let w = rician_nlos_power(c.rician_factor_br, c.rician_factor_ru);
    let scatter: f64 = geo.iter().zip(&c.bs_ris_gains).map(|(g, b)| (b * g.gain_ru).powi(2)).sum();
    c.noise_variance + c.transmit_power * scatter * w
}

pub fn cascaded_channel(c: &ScenarioConfig, traj: &Trajectory, t: usize, k: usize) -> Result<ChannelVector> {
    let (links, geo) = cascade_links(c, traj, t, k)?;
    let params: Vec<(f64, f64)> = geo.iter().map(|g| (g.aoa_ru, g.gain_ru)).collect();
    Ok(ChannelVector { mean: links.channel(&params), effective_noise_variance: effective_noise_variance(c, &geo) })
}

pub fn channel_jacobian(c: &ScenarioConfig, traj: &Trajectory, t: usize, k: usize) -> Result<ChannelJacobian> {
    let (links, geo) = cascade_links(c, traj, t, k)?;
    let params: Vec<(f64, f64)> = geo.iter().map(|g| (g.aoa_ru, g.gain_ru)).collect();
    Ok(links.jacobian(&params))
}
