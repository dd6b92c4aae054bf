mod common;

use loctrack_core::fim;
use loctrack_core::linalg::{self, Mat2};
use loctrack_core::scenario::{
    self, EdgeKeyword, EdgeSet, GaussianSampler, McmcSampler, McmcSettings, PriorKind, PriorModel, SamplerOptions,
    TemporalCovariance, Trajectory,
};
use loctrack_core::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn flat(tr: &Trajectory) -> DVector<f64> {
    DVector::from_iterator(2 * tr.positions.len(), tr.positions.iter().flat_map(|p| [p.x, p.y]))
}

fn sample_cov(xs: &[DVector<f64>]) -> DMatrix<f64> {
    let n = xs.len() as f64;
    let mean = xs.iter().fold(DVector::zeros(xs[0].len()), |a, x| a + x) / n;
    let mut c = DMatrix::zeros(mean.len(), mean.len());
    for x in xs {
        let d = x - &mean;
        c += &d * d.transpose();
    }
    c / (n - 1.0)
}

#[test]
fn baseline_is_valid() {
    let c = common::baseline();
    assert!(scenario::validate(&c).is_ok(), "{:?}", scenario::validate(&c));
    assert_eq!((c.num_users, c.num_ris, c.n_bs_antennas, c.n_ris_elements), (3, 4, 64, 32));
}

#[test]
fn short_pilot_is_reported() {
    let mut c = common::baseline();
    c.pilot_length = 2;
    let r = scenario::validate(&c);
    assert!(r.violations.iter().any(|v| v == "pilot length < user count"));
}

#[test]
fn zero_temporal_covariance_is_reported() {
    let mut c = common::config(1, 1, 3);
    c.temporal_covariance = TemporalCovariance::PerStep(vec![vec![[[0.0; 2]; 2]]; 2]);
    let r = scenario::validate(&c);
    assert!(r.violations.iter().any(|v| v.starts_with("temporal covariance not SPD")));
    c.temporal_covariance = TemporalCovariance::Uniform([[0.0; 2]; 2]);
    assert!(scenario::validate(&c).violations.iter().any(|v| v == "temporal covariance not SPD"));
    assert!(c.check().is_err());
}

#[test]
fn self_loop_is_reported() {
    let mut c = common::config(2, 1, 1);
    c.spatial_edges = EdgeSet::Static(vec![scenario::Edge { i: 1, j: 1, precision: None }]);
    assert!(!scenario::validate(&c).is_ok());
}

#[test]
fn config_json_round_trip() {
    let c = common::baseline();
    let text = serde_json::to_string(&c).unwrap();
    assert!(text.contains("\"bs-position\""));
    let back: scenario::ScenarioConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, c);
}

#[test]
fn two_node_chain_precision() {
    let mut c = common::config(1, 1, 2);
    c.temporal_covariance = TemporalCovariance::Isotropic(0.25);
    c.first_step_anchor_variance = 2.0;
    let lam = scenario::joint_precision(&PriorModel::from_config(&c).unwrap()).unwrap();
    let q = 4.0;
    let s = DMatrix::from_row_slice(2, 2, &[0.5 + q, -q, -q, q]);
    let expect = s.kronecker(&DMatrix::<f64>::identity(2, 2));
    assert!(linalg::rel_frobenius(&lam.data, &expect) < 1e-15);
}

#[test]
fn complete_graph_diagonal_blocks() {
    let mut c = common::config(3, 1, 1);
    c.spatial_precision = 7.0;
    let lam = scenario::joint_precision(&PriorModel::from_config(&c).unwrap()).unwrap();
    for k in 0..3 {
        assert!((lam.block(k, k) - Mat2::identity() * (1.0 + 14.0)).norm() < 1e-14);
        for j in 0..3 {
            if j != k {
                assert!((lam.block(k, j) + Mat2::identity() * 7.0).norm() < 1e-14);
            }
        }
    }
}

#[test]
fn joint_precision_matches_prior_fim() {
    let c = common::config(3, 2, 4);
    let model = PriorModel::from_config(&c).unwrap();
    let lam = scenario::joint_precision(&model).unwrap();
    let pf = fim::prior_fim(&model, &[Trajectory::stationary(&c)]).unwrap();
    let no_anchor = &lam - &pf.anchor_block_matrix();
    let fim_part = &pf.spatial + &pf.temporal;
    assert!(linalg::frobenius(&(&no_anchor.data - &fim_part.data)) < 1e-12);
    assert!(linalg::frobenius(&(&lam.data - &pf.total().data)) < 1e-12);
}

#[test]
fn l1_prior_is_not_gaussian() {
    let mut c = common::config(2, 1, 2);
    c.prior_kind = PriorKind::L1Norm;
    let model = PriorModel::from_config(&c).unwrap();
    assert_eq!(scenario::joint_precision(&model).unwrap_err(), Error::NotGaussian);
    let err = scenario::sample_trajectory_with(&c, 1, &SamplerOptions::default()).unwrap_err();
    assert!(matches!(err, Error::SamplingUnsupported(_)));
    assert!(scenario::sample_trajectory(&c, 1).is_ok());
}

#[test]
fn sampling_is_deterministic_in_seed() {
    let c = common::config(3, 2, 5);
    assert_eq!(scenario::sample_trajectory(&c, 9).unwrap(), scenario::sample_trajectory(&c, 9).unwrap());
    assert_ne!(scenario::sample_trajectory(&c, 9).unwrap(), scenario::sample_trajectory(&c, 10).unwrap());
}

#[test]
fn decoupled_chain_is_a_random_walk() {
    let mut c = common::config(2, 1, 5);
    c.spatial_edges = EdgeSet::Keyword(EdgeKeyword::None);
    c.temporal_covariance = TemporalCovariance::Isotropic(0.5);
    c.first_step_anchor_variance = 2.0;
    let s = GaussianSampler::new(&PriorModel::from_config(&c).unwrap()).unwrap();
    let n = 10_000;
    let draws: Vec<Trajectory> = (0..n).map(|i| s.sample(i)).collect();
    for t in 0..5 {
        let mut acc = 0.0;
        for tr in &draws {
            for k in 0..2 {
                let d = tr.at(t, k) - c.initial_position(k);
                acc += d.norm_squared();
            }
        }
        let var = acc / (4 * n) as f64;
        let expect = 2.0 + t as f64 * 0.5;
        assert!((var - expect).abs() / expect < 0.03, "t={t}: {var} vs {expect}");
    }
}

#[test]
fn frozen_dynamics_keep_users_in_place() {
    let mut c = common::config(3, 1, 6);
    c.temporal_covariance = TemporalCovariance::Isotropic(1e-10);
    for seed in 0..20 {
        let tr = scenario::sample_trajectory(&c, seed).unwrap();
        for t in 1..6 {
            for k in 0..3 {
                assert!((tr.at(t, k) - tr.at(0, k)).norm() < 1e-3);
            }
        }
    }
}

#[test]
fn exact_sampler_covariance() {
    let c = common::config(2, 1, 3);
    let model = PriorModel::from_config(&c).unwrap();
    let lam = scenario::joint_precision(&model).unwrap();
    let s = GaussianSampler::new(&model).unwrap();
    let xs: Vec<DVector<f64>> = (0..10_000).map(|i| flat(&s.sample(i))).collect();
    let cov = sample_cov(&xs);
    let expect = lam.inverse_spd().unwrap();
    let err = linalg::rel_frobenius(&cov, &expect);
    assert!(err < 0.03, "relative Frobenius error {err}");
}

#[test]
fn iid_anchors_without_edges() {
    let mut c = common::config(3, 1, 1);
    c.spatial_edges = EdgeSet::Keyword(EdgeKeyword::None);
    c.first_step_anchor_variance = 3.0;
    let s = GaussianSampler::new(&PriorModel::from_config(&c).unwrap()).unwrap();
    let xs: Vec<DVector<f64>> = (0..10_000).map(|i| flat(&s.sample(i))).collect();
    let cov = sample_cov(&xs);
    let var = cov.diagonal().mean();
    assert!((var - 3.0).abs() / 3.0 < 0.02, "{var}");
}

#[test]
fn baseline_displacement_covariance() {
    let c = common::baseline();
    let model = PriorModel::from_config(&c).unwrap();
    let sigma = scenario::joint_precision(&model).unwrap().inverse_spd().unwrap();
    let s = GaussianSampler::new(&model).unwrap();
    let (tn, kn) = (c.num_steps, c.num_users);
    // Implied displacement covariance, averaged over every transition and user.
    let mut implied = Mat2::zeros();
    for t in 0..tn - 1 {
        for k in 0..kn {
            let (a, b) = (t * kn + k, (t + 1) * kn + k);
            implied += linalg::get2(&sigma, a, a) + linalg::get2(&sigma, b, b)
                - linalg::get2(&sigma, a, b)
                - linalg::get2(&sigma, b, a);
        }
    }
    let m = ((tn - 1) * kn) as f64;
    implied /= m;
    let mut emp = Mat2::zeros();
    let mut mean = nalgebra::Vector2::zeros();
    let n = 2000;
    let mut disp = Vec::with_capacity(n * (tn - 1) * kn);
    for seed in 0..n as u64 {
        let tr = s.sample(seed);
        for t in 0..tn - 1 {
            for k in 0..kn {
                let d = tr.at(t + 1, k) - tr.at(t, k);
                mean += d;
                disp.push(d);
            }
        }
    }
    mean /= disp.len() as f64;
    for d in &disp {
        emp += (d - mean) * (d - mean).transpose();
    }
    emp /= (disp.len() - 1) as f64;
    let err = linalg::rel_frobenius2(&emp, &implied);
    assert!(err < 0.05, "relative error {err}");
}

#[test]
fn mcmc_matches_exact_gaussian() {
    let c = common::config(2, 1, 2);
    let model = PriorModel::from_config(&c).unwrap();
    let expect = scenario::joint_precision(&model).unwrap().inverse_spd().unwrap();
    let settings = McmcSettings { burn_in: 1000, thinning: 5, proposal_scale: 1.0 };
    let draws = McmcSampler::new(&model, settings, 3).unwrap().draw(40_000);
    let xs: Vec<DVector<f64>> = draws.iter().map(flat).collect();
    let err = linalg::rel_frobenius(&sample_cov(&xs), &expect);
    assert!(err < 0.08, "relative Frobenius error {err}");
}

#[test]
fn prior_energy_of_anchor_mean_is_zero() {
    let c = common::config(3, 1, 4);
    let model = PriorModel::from_config(&c).unwrap();
    let mut tr = Trajectory::stationary(&c);
    let e0 = scenario::prior_energy(&model, &tr).unwrap();
    // Only the spatial edges between distinct initial positions contribute.
    let mut spatial = 0.0;
    for (i, j, w) in c.edges_at(0) {
        spatial += 0.5 * w * (c.initial_position(i) - c.initial_position(j)).norm_squared();
    }
    assert!((e0 - 4.0 * spatial).abs() < 1e-9 * e0);
    let p = tr.at(2, 1) + nalgebra::Vector2::new(0.1, 0.0);
    tr.set(2, 1, p);
    assert!(scenario::prior_energy(&model, &tr).unwrap() > e0);
}

#[test]
fn geometry_check_rejects_ris_collision() {
    let c = common::config(1, 1, 1);
    let tr = Trajectory::new(1, 1, vec![c.ris(0)], 0).unwrap();
    assert!(matches!(tr.check_geometry(&c), Err(Error::DegenerateGeometry { .. })));
    assert!(Trajectory::new(2, 1, vec![c.ris(0)], 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn anchored_precision_is_spd(
        k in 1usize..4,
        t in 1usize..5,
        sigma0 in 1e-3f64..1e3,
        ws in 0.0f64..100.0,
        q in 1e-3f64..1e3,
    ) {
        let mut c = common::config(k, 1, t);
        c.first_step_anchor_variance = sigma0;
        c.spatial_precision = ws;
        c.temporal_covariance = TemporalCovariance::Isotropic(q);
        let lam = scenario::joint_precision(&PriorModel::from_config(&c).unwrap()).unwrap();
        prop_assert!(lam.is_symmetric(1e-15));
        prop_assert!(lam.data.clone().cholesky().is_some());
    }

    #[test]
    fn prior_energy_is_nonnegative(seed in 0u64..1000, l1 in any::<bool>()) {
        let mut c = common::config(3, 1, 3);
        if l1 {
            c.prior_kind = PriorKind::L1Norm;
        }
        let model = PriorModel::from_config(&c).unwrap();
        let tr = common::random_walk(&c, &mut common::rng(seed), 2.0);
        prop_assert!(scenario::prior_energy(&model, &tr).unwrap() >= 0.0);
    }
}
