mod common;

use std::f64::consts::PI;

use loctrack_core::channel::{self, ArrayKind, CascadeLinks};
use loctrack_core::scenario::{PhaseProfiles, Trajectory};
use loctrack_core::{Error, Vec2};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;

fn vnorm(v: &[Complex64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

fn vdiff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}

#[test]
fn geometry_axis_aligned() {
    let g = channel::geometry_params(&Vec2::new(0.0, 0.0), &Vec2::new(1.0, 0.0), 2.0).unwrap();
    assert_eq!((g.aoa_ru, g.distance, g.gain_ru), (0.0, 1.0, 1.0));
}

#[test]
fn geometry_vertical() {
    let g = channel::geometry_params(&Vec2::new(0.0, 0.0), &Vec2::new(0.0, 2.0), 2.0).unwrap();
    assert!((g.aoa_ru - PI / 2.0).abs() < 1e-15);
    assert!((g.gain_ru - 0.5).abs() < 1e-15);
}

#[test]
fn geometry_first_ris_first_user() {
    let g = channel::geometry_params(&Vec2::new(80.0, 30.0), &Vec2::new(100.0, 10.0), -2.08).unwrap();
    assert!((g.aoa_ru - PI / 4.0).abs() < 1e-14);
    assert!((g.distance - 800f64.sqrt()).abs() < 1e-12);
    assert!((g.gain_ru - 800f64.sqrt().powf(-1.04)).abs() < 1e-15);
}

#[test]
fn geometry_rejects_coincident_points() {
    let r = Vec2::new(3.0, 4.0);
    let err = channel::geometry_params(&r, &(r + Vec2::new(1e-4, 0.0)), 2.0).unwrap_err();
    assert!(matches!(err, Error::DegenerateGeometry { .. }));
    assert!(channel::geometry_gradient(&r, &r, 2.0).is_err());
}

#[test]
fn steering_examples() {
    for n in [1, 4, 33] {
        let a = channel::steering_vector(ArrayKind::Bs, PI / 2.0, n);
        assert!(a.iter().all(|x| (x - Complex64::new(1.0, 0.0)).norm() < 1e-13));
    }
    let a = channel::steering_vector(ArrayKind::Ris, 0.0, 2);
    assert!((a[0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
    assert!((a[1] - Complex64::new(-1.0, 0.0)).norm() < 1e-15);
}

#[test]
fn steering_derivative_matches_difference() {
    let mut g = common::rng(1);
    for _ in 0..50 {
        let th = g.random_range(0.05..PI - 0.05);
        let h = 1e-6;
        let ap = channel::steering_vector(ArrayKind::Ris, th + h, 16);
        let am = channel::steering_vector(ArrayKind::Ris, th - h, 16);
        let fd: Vec<Complex64> = ap.iter().zip(&am).map(|(p, m)| (p - m) / (2.0 * h)).collect();
        let an = channel::steering_derivative(th, 16);
        assert!(vdiff(&fd, &an) / vnorm(&an) < 1e-7);
    }
}

#[test]
fn aligned_beam_gain_is_coherent() {
    let c = common::config(1, 1, 1);
    let traj = Trajectory::stationary(&c);
    let (links, geo) = channel::cascade_links(&c, &traj, 0, 0).unwrap();
    let (g, _) = links.combining_gain(0, geo[0].aoa_ru);
    assert!((g.norm() - (c.n_ris_elements as f64).sqrt()).abs() < 1e-12);
    // Any other angle loses gain.
    let (off, _) = links.combining_gain(0, geo[0].aoa_ru + 0.3);
    assert!(off.norm() < g.norm());
}

#[test]
fn los_limit_noise_is_thermal() {
    let mut c = common::config(2, 3, 1);
    c.rician_factor_br = f64::INFINITY;
    c.rician_factor_ru = f64::INFINITY;
    let traj = Trajectory::stationary(&c);
    let h = channel::cascaded_channel(&c, &traj, 0, 1).unwrap();
    assert_eq!(h.effective_noise_variance, c.noise_variance);
    assert_eq!(channel::rician_los_factor(f64::INFINITY, f64::INFINITY), 1.0);
    c.rician_factor_br = 1e12;
    c.rician_factor_ru = 1e12;
    let h = channel::cascaded_channel(&c, &traj, 0, 1).unwrap();
    assert!((h.effective_noise_variance - c.noise_variance).abs() < 1e-9);
}

#[test]
fn random_phase_mean_power() {
    let mut c = common::config(1, 2, 1);
    c.n_ris_elements = 32;
    let traj = Trajectory::stationary(&c);
    let geo = channel::link_geometry(&c, &traj, 0, 0).unwrap();
    let params: Vec<(f64, f64)> = geo.iter().map(|g| (g.aoa_ru, g.gain_ru)).collect();
    let kap = channel::rician_los_factor(c.rician_factor_br, c.rician_factor_ru);
    let expect: f64 = geo
        .iter()
        .zip(&c.bs_ris_gains)
        .map(|(g, b)| (kap * b * g.gain_ru).powi(2) * c.n_bs_antennas as f64)
        .sum();
    let mut rng = common::rng(7);
    let n = 100_000;
    let mut acc = 0.0;
    for _ in 0..n {
        let phases: Vec<Vec<f64>> =
            (0..2).map(|_| (0..32).map(|_| rng.random_range(0.0..2.0 * PI)).collect()).collect();
        let links = CascadeLinks::new(&c, &phases);
        acc += vnorm(&links.channel(&params)).powi(2);
    }
    let mean = acc / n as f64;
    assert!((mean - expect).abs() / expect < 0.02, "{mean} vs {expect}");
}

#[test]
fn random_profile_is_seeded() {
    let mut c = common::config(2, 2, 3);
    c.ris_phase_profiles = PhaseProfiles::Random { seed: 5 };
    let traj = Trajectory::stationary(&c);
    let a = channel::ris_phases(&c, &traj, 1, 0, 0).unwrap();
    assert_eq!(a, channel::ris_phases(&c, &traj, 1, 0, 1).unwrap());
    assert_ne!(a, channel::ris_phases(&c, &traj, 2, 0, 0).unwrap());
    assert!(a.iter().all(|w| (0.0..2.0 * PI).contains(w)));
}

#[test]
fn rho_derivative_is_colinear_with_summand() {
    let c = common::config(2, 3, 1);
    let traj = Trajectory::stationary(&c);
    let (links, geo) = channel::cascade_links(&c, &traj, 0, 1).unwrap();
    let params: Vec<(f64, f64)> = geo.iter().map(|g| (g.aoa_ru, g.gain_ru)).collect();
    let jac = links.jacobian(&params);
    for (i, &(th, rho)) in params.iter().enumerate() {
        let s = links.summand(i, th, rho);
        let scaled: Vec<Complex64> = s.iter().map(|x| x / rho).collect();
        assert!(vdiff(&scaled, &jac.d_h_d_rho[i]) <= 1e-14 * vnorm(&scaled));
    }
}

#[test]
fn jacobian_ignores_other_ris_phases() {
    let mut c = common::config(1, 2, 1);
    let n = c.n_ris_elements;
    let mut g = common::rng(3);
    let base: Vec<Vec<f64>> = (0..2).map(|_| (0..n).map(|_| g.random_range(0.0..6.0)).collect()).collect();
    let mut other = base.clone();
    other[1] = (0..n).map(|_| g.random_range(0.0..6.0)).collect();
    let traj = Trajectory::stationary(&c);
    c.ris_phase_profiles = PhaseProfiles::Explicit(vec![base]);
    let ja = channel::channel_jacobian(&c, &traj, 0, 0).unwrap();
    c.ris_phase_profiles = PhaseProfiles::Explicit(vec![other]);
    let jb = channel::channel_jacobian(&c, &traj, 0, 0).unwrap();
    assert_eq!(ja.d_h_d_theta[0], jb.d_h_d_theta[0]);
    assert_eq!(ja.d_h_d_rho[0], jb.d_h_d_rho[0]);
    assert_ne!(ja.d_h_d_theta[1], jb.d_h_d_theta[1]);
}

/// Random geometry with 1 to 4 RISs and random phases.
fn random_links(seed: u64) -> (CascadeLinks, Vec<(f64, f64)>) {
    let mut g = common::rng(seed);
    let r = g.random_range(1..=4);
    let mut c = common::config(1, r, 1);
    c.ris_positions = (0..r).map(|_| [g.random_range(50.0..90.0), g.random_range(20.0..60.0)]).collect();
    let (aoa, aod) = common::derived_angles(c.bs_position, &c.ris_positions);
    c.bs_ris_aoa = aoa;
    c.bs_ris_aod = aod;
    c.bs_ris_gains = (0..r).map(|_| g.random_range(0.5..2.0)).collect();
    let phases: Vec<Vec<f64>> =
        (0..r).map(|_| (0..c.n_ris_elements).map(|_| g.random_range(0.0..2.0 * PI)).collect()).collect();
    let params = (0..r).map(|_| (g.random_range(0.1..PI - 0.1), g.random_range(0.01..0.1))).collect();
    (CascadeLinks::new(&c, &phases), params)
}

#[test]
fn channel_jacobian_matches_central_differences() {
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let (links, params) = random_links(seed);
        let jac = links.jacobian(&params);
        for i in 0..params.len() {
            for (which, an) in [(0, &jac.d_h_d_theta[i]), (1, &jac.d_h_d_rho[i])] {
                let (mut p, mut m) = (params.clone(), params.clone());
                let step = if which == 0 { h } else { h * params[i].1 };
                if which == 0 {
                    p[i].0 += step;
                    m[i].0 -= step;
                } else {
                    p[i].1 += step;
                    m[i].1 -= step;
                }
                let (hp, hm) = (links.channel(&p), links.channel(&m));
                let fd: Vec<Complex64> = hp.iter().zip(&hm).map(|(a, b)| (a - b) / (2.0 * step)).collect();
                let scale = vnorm(an).max(1e-300);
                worst = worst.max(vdiff(&fd, an) / scale);
            }
        }
    }
    assert!(worst < 1e-5, "max relative error {worst}");
}

#[test]
fn geometry_gradient_matches_central_differences() {
    let mut g = common::rng(11);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let r = Vec2::new(g.random_range(50.0..90.0), g.random_range(20.0..60.0));
        let u = Vec2::new(g.random_range(90.0..130.0), g.random_range(-10.0..15.0));
        let alpha = g.random_range(-4.0..-1.5);
        let grad = channel::geometry_gradient(&r, &u, alpha).unwrap();
        let h = 1e-5;
        for axis in 0..2 {
            let mut e = Vec2::zeros();
            e[axis] = h;
            let p = channel::geometry_params(&r, &(u + e), alpha).unwrap();
            let m = channel::geometry_params(&r, &(u - e), alpha).unwrap();
            let dth = (p.aoa_ru - m.aoa_ru) / (2.0 * h);
            let drh = (p.gain_ru - m.gain_ru) / (2.0 * h);
            worst = worst.max((dth - grad.d_theta[axis]).abs() / grad.d_theta.norm());
            worst = worst.max((drh - grad.d_rho[axis]).abs() / grad.d_rho.norm());
        }
    }
    assert!(worst < 1e-5, "max relative error {worst}");
}

#[test]
fn gradient_on_symmetry_axis() {
    let r = Vec2::new(0.0, 0.0);
    let u = Vec2::new(3.0, 0.0);
    let gr = channel::geometry_gradient(&r, &u, 2.0).unwrap();
    assert_eq!(gr.d_theta.x, 0.0);
    assert_eq!(gr.d_rho.y, 0.0);
    // alpha = 2, d = 1: |d rho / d u| = 1.
    let gr = channel::geometry_gradient(&r, &Vec2::new(0.6, 0.8), 2.0).unwrap();
    assert!((gr.d_rho.norm() - 1.0).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn steering_norm_is_sqrt_n(theta in 0.0f64..PI, n in 1usize..80) {
        let a = channel::steering_vector(ArrayKind::Bs, theta, n);
        prop_assert!((vnorm(&a).powi(2) - n as f64).abs() < 1e-10 * n as f64);
    }

    #[test]
    fn common_phase_rotation_keeps_channel_norm(seed in 0u64..500, shift in 0.0f64..(2.0 * PI)) {
        let mut g = common::rng(seed);
        let c = common::config(1, 3, 1);
        let phases: Vec<Vec<f64>> =
            (0..3).map(|_| (0..c.n_ris_elements).map(|_| g.random_range(0.0..6.3)).collect()).collect();
        let rotated: Vec<Vec<f64>> = phases.iter().map(|p| p.iter().map(|w| w + shift).collect()).collect();
        let params: Vec<(f64, f64)> = (0..3).map(|_| (g.random_range(0.1..3.0), g.random_range(0.01..0.1))).collect();
        let a = vnorm(&CascadeLinks::new(&c, &phases).channel(&params));
        let b = vnorm(&CascadeLinks::new(&c, &rotated).channel(&params));
        prop_assert!((a - b).abs() <= 1e-12 * a);
    }

    #[test]
    fn single_ris_phase_rotation_keeps_channel_norm(seed in 0u64..500, shift in 0.0f64..(2.0 * PI)) {
        let mut g = common::rng(seed);
        let c = common::config(1, 1, 1);
        let p: Vec<f64> = (0..c.n_ris_elements).map(|_| g.random_range(0.0..6.3)).collect();
        let q: Vec<f64> = p.iter().map(|w| w + shift).collect();
        let params = [(g.random_range(0.1..3.0), 0.05)];
        let a = vnorm(&CascadeLinks::new(&c, &[p]).channel(&params));
        let b = vnorm(&CascadeLinks::new(&c, &[q]).channel(&params));
        prop_assert!((a - b).abs() <= 1e-12 * a);
    }

    #[test]
    fn effective_noise_dominates_thermal(
        kbr in 0.0f64..1e4,
        kru in 0.0f64..1e4,
        p in 0.0f64..100.0,
        x in 85.0f64..130.0,
        y in -20.0f64..20.0,
    ) {
        let mut c = common::config(1, 2, 1);
        c.rician_factor_br = kbr;
        c.rician_factor_ru = kru;
        c.transmit_power = p;
        c.user_initial_positions = vec![[x, y]];
        let geo = channel::link_geometry(&c, &Trajectory::stationary(&c), 0, 0).unwrap();
        prop_assert!(channel::effective_noise_variance(&c, &geo) >= c.noise_variance);
    }
}
