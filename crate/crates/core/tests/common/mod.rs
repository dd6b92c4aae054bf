#![allow(dead_code)]

use loctrack_core::fim::{self, MeasurementFim, PriorFim};
use loctrack_core::scenario::{
    EdgeKeyword, EdgeSet, PhaseProfiles, PriorKind, PriorModel, ScenarioConfig, TemporalCovariance, Trajectory,
};
use loctrack_core::{BlockMatrix, Vec2};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// BS-RIS angles derived from positions, as in the shipped baseline.
pub fn derived_angles(bs: [f64; 2], ris: &[[f64; 2]]) -> (Vec<f64>, Vec<f64>) {
    let ang = |from: [f64; 2], to: [f64; 2]| {
        let (dx, dy) = (to[0] - from[0], to[1] - from[1]);
        (dx / (dx * dx + dy * dy).sqrt()).acos()
    };
    (ris.iter().map(|r| ang(bs, *r)).collect(), ris.iter().map(|r| ang(*r, bs)).collect())
}

/// Baseline-like geometry with `k` users, `r` RISs and `t` steps.
pub fn config(k: usize, r: usize, t: usize) -> ScenarioConfig {
    let bs = [0.0, 0.0];
    let ris: Vec<[f64; 2]> = (0..r).map(|i| [80.0, 30.0 + 5.0 * i as f64]).collect();
    let users: Vec<[f64; 2]> = (0..k).map(|j| [100.0 + 5.0 * j as f64, 10.0 + 3.0 * (j % 2) as f64]).collect();
    let (aoa, aod) = derived_angles(bs, &ris);
    ScenarioConfig {
        bs_position: bs,
        ris_positions: ris,
        user_initial_positions: users,
        num_users: k,
        num_ris: r,
        num_steps: t,
        n_bs_antennas: 16,
        n_ris_elements: 16,
        carrier_frequency_hz: 28e9,
        path_loss_exponent: -2.08,
        rician_factor_br: 100.0,
        rician_factor_ru: 100.0,
        bs_ris_gains: vec![1.0; r],
        bs_ris_aoa: aoa,
        bs_ris_aod: aod,
        noise_variance: 1.0,
        transmit_power: 10.0,
        pilot_length: k,
        ris_phase_profiles: PhaseProfiles::Aligned,
        spatial_edges: EdgeSet::Keyword(EdgeKeyword::Complete),
        spatial_precision: 10.0,
        temporal_covariance: TemporalCovariance::Isotropic(0.1),
        first_step_anchor_variance: 1.0,
        prior_kind: PriorKind::L2Squared,
    }
}

fn shipped(name: &str) -> ScenarioConfig {
    let path = format!("{}/../../scenarios/{name}.json", env!("CARGO_MANIFEST_DIR"));
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

pub fn baseline() -> ScenarioConfig {
    shipped("baseline")
}

/// K = 2, T = 2 toy used for the trend sweeps.
pub fn toy() -> ScenarioConfig {
    shipped("toy")
}

/// Random small scenario: K <= 3, T <= 4, R <= 2, random users, precisions and power.
pub fn random_config(seed: u64) -> (ScenarioConfig, Trajectory) {
    let mut g = rng(seed);
    let k = g.random_range(1..=3);
    let t = g.random_range(1..=4);
    let r = g.random_range(1..=2);
    let mut c = config(k, r, t);
    c.user_initial_positions =
        (0..k).map(|_| [g.random_range(90.0..120.0), g.random_range(0.0..25.0)]).collect();
    c.spatial_precision = 10f64.powf(g.random_range(-1.0..1.0));
    c.temporal_covariance = TemporalCovariance::Isotropic(10f64.powf(g.random_range(-1.0..1.0)));
    c.transmit_power = 10f64.powf(g.random_range(-1.0..1.5));
    let traj = random_walk(&c, &mut g, 1.0);
    (c, traj)
}

/// Users wander around their initial positions with steps of size `step`.
pub fn random_walk(c: &ScenarioConfig, g: &mut ChaCha8Rng, step: f64) -> Trajectory {
    let mut traj = Trajectory::stationary(c);
    for t in 1..c.num_steps {
        for k in 0..c.num_users {
            let p = traj.at(t - 1, k) + Vec2::new(g.random_range(-step..step), g.random_range(-step..step));
            traj.set(t, k, p);
        }
    }
    traj
}

pub struct Pipeline {
    pub meas: MeasurementFim,
    pub prior: PriorFim,
    pub efim: BlockMatrix,
}

pub fn pipeline(c: &ScenarioConfig, traj: &Trajectory) -> Pipeline {
    let meas = fim::measurement_fim(c, traj).unwrap();
    let model = PriorModel::from_config(c).unwrap();
    let prior = fim::prior_fim(&model, std::slice::from_ref(traj)).unwrap();
    let efim = fim::assemble_efim(&meas, &prior).unwrap();
    Pipeline { meas, prior, efim }
}

pub fn random_spd(g: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| g.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * floor
}

/// Schur complement of `m` onto its trailing `keep` rows and columns.
pub fn schur_trailing(m: &DMatrix<f64>, keep: usize) -> DMatrix<f64> {
    let inv = m.clone().try_inverse().unwrap();
    let n = m.nrows();
    inv.view((n - keep, n - keep), (keep, keep)).into_owned().try_inverse().unwrap()
}
