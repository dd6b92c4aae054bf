//! Scenario description, validation, the spatio-temporal prior and trajectory sampling.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::block::BlockMatrix;
use crate::error::{Error, Result};
use crate::linalg::{self, Mat2, Vec2};

/// Minimum user to RIS separation in meters.
pub const MIN_SEPARATION: f64 = 1e-3;

pub const DEFAULT_ANCHOR_VARIANCE: f64 = 1.0;

fn default_anchor_variance() -> f64 {
    DEFAULT_ANCHOR_VARIANCE
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorKind {
    /// Gaussian pairwise potential on squared distances.
    #[default]
    L2Squared,
    /// Laplace-like pairwise potential on distances.
    L1Norm,
}

/// RIS phase configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseProfiles {
    /// Each RIS conjugates the BS-RIS-user phase of the user currently
    /// transmitting, so user k is measured with the beam pointed at it.
    Aligned,
    /// Independent uniform phases per (t, i), shared by all users.
    Random { seed: u64 },
    /// Phases indexed `[t][i][n]`.
    Explicit(Vec<Vec<Vec<f64>>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    /// Overrides `spatial-precision` for this edge.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeKeyword {
    Complete,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EdgeSet {
    Keyword(EdgeKeyword),
    Static(Vec<Edge>),
    PerStep {
        #[serde(rename = "per-step")]
        per_step: Vec<Vec<Edge>>,
    },
}

impl Default for EdgeSet {
    fn default() -> Self {
        EdgeSet::Keyword(EdgeKeyword::Complete)
    }
}

/// Covariance of the per-step displacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TemporalCovariance {
    /// `Q = v I` for every transition and user.
    Isotropic(f64),
    Uniform([[f64; 2]; 2]),
    /// Indexed `[t][k]` for the transition from step t to t+1.
    PerStep(Vec<Vec<[[f64; 2]; 2]>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ScenarioConfig {
    pub bs_position: [f64; 2],
    pub ris_positions: Vec<[f64; 2]>,
    pub user_initial_positions: Vec<[f64; 2]>,
    pub num_users: usize,
    pub num_ris: usize,
    pub num_steps: usize,
    pub n_bs_antennas: usize,
    pub n_ris_elements: usize,
    pub carrier_frequency_hz: f64,
    pub path_loss_exponent: f64,
    pub rician_factor_br: f64,
    pub rician_factor_ru: f64,
    pub bs_ris_gains: Vec<f64>,
    pub bs_ris_aoa: Vec<f64>,
    pub bs_ris_aod: Vec<f64>,
    pub noise_variance: f64,
    pub transmit_power: f64,
    pub pilot_length: usize,
    pub ris_phase_profiles: PhaseProfiles,
    #[serde(default)]
    pub spatial_edges: EdgeSet,
    pub spatial_precision: f64,
    pub temporal_covariance: TemporalCovariance,
    #[serde(default = "default_anchor_variance")]
    pub first_step_anchor_variance: f64,
    #[serde(default)]
    pub prior_kind: PriorKind,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

fn push(v: &mut Vec<String>, s: impl Into<String>) {
    v.push(s.into());
}

fn finite2(p: &[f64; 2]) -> bool {
    p[0].is_finite() && p[1].is_finite()
}

/// Collects every violated invariant. An empty report means the config is usable.
pub fn validate(c: &ScenarioConfig) -> ValidationReport {
    let mut v = Vec::new();
    if c.num_users == 0 {
        push(&mut v, "num-users must be at least 1");
    }
    if c.num_ris == 0 {
        push(&mut v, "num-ris must be at least 1");
    }
    if c.num_steps == 0 {
        push(&mut v, "num-steps must be at least 1");
    }
    if c.pilot_length < c.num_users {
        push(&mut v, "pilot length < user count");
    }
    if c.n_bs_antennas == 0 || c.n_ris_elements == 0 {
        push(&mut v, "antenna and element counts must be positive");
    }
    if !(c.carrier_frequency_hz > 0.0 && c.carrier_frequency_hz.is_finite()) {
        push(&mut v, "carrier frequency must be positive");
    }
    if !c.path_loss_exponent.is_finite() {
        push(&mut v, "path loss exponent must be finite");
    }
    if !(c.rician_factor_br >= 0.0) || !(c.rician_factor_ru >= 0.0) {
        push(&mut v, "rician factors must be nonnegative");
    }
    if !(c.noise_variance > 0.0 && c.noise_variance.is_finite()) {
        push(&mut v, "noise variance must be positive");
    }
    if !(c.transmit_power >= 0.0 && c.transmit_power.is_finite()) {
        push(&mut v, "transmit power must be nonnegative");
    }
    if !(c.first_step_anchor_variance > 0.0 && c.first_step_anchor_variance.is_finite()) {
        push(&mut v, "first-step anchor variance must be positive");
    }
    if !finite2(&c.bs_position) {
        push(&mut v, "bs position must be finite");
    }
    if c.ris_positions.len() != c.num_ris {
        push(&mut v, format!("expected {} ris positions, found {}", c.num_ris, c.ris_positions.len()));
    }
    if c.user_initial_positions.len() != c.num_users {
        push(
            &mut v,
            format!("expected {} user positions, found {}", c.num_users, c.user_initial_positions.len()),
        );
    }
    for (name, list) in [("bs-ris-gains", &c.bs_ris_gains), ("bs-ris-aoa", &c.bs_ris_aoa), ("bs-ris-aod", &c.bs_ris_aod)] {
        if list.len() != c.num_ris {
            push(&mut v, format!("{name} must have one entry per RIS"));
        }
        if list.iter().any(|x| !x.is_finite()) {
            push(&mut v, format!("{name} must be finite"));
        }
    }
    if c.bs_ris_gains.iter().any(|g| *g < 0.0) {
        push(&mut v, "bs-ris-gains must be nonnegative");
    }
    if c.ris_positions.iter().chain(c.user_initial_positions.iter()).any(|p| !finite2(p)) {
        push(&mut v, "positions must be finite");
    }
    for (k, u) in c.user_initial_positions.iter().enumerate() {
        for (i, r) in c.ris_positions.iter().enumerate() {
            let d = ((u[0] - r[0]).powi(2) + (u[1] - r[1]).powi(2)).sqrt();
            if d <= MIN_SEPARATION {
                push(&mut v, format!("user {k} coincides with RIS {i}"));
            }
        }
    }
    validate_phases(c, &mut v);
    validate_edges(c, &mut v);
    validate_temporal(c, &mut v);
    ValidationReport { violations: v }
}

fn validate_phases(c: &ScenarioConfig, v: &mut Vec<String>) {
    if let PhaseProfiles::Explicit(p) = &c.ris_phase_profiles {
        let shape_ok = p.len() == c.num_steps
            && p.iter().all(|s| s.len() == c.num_ris && s.iter().all(|w| w.len() == c.n_ris_elements));
        if !shape_ok {
            push(v, "explicit phase profiles must be indexed [t][i][n] with full shape");
        }
        if p.iter().flatten().flatten().any(|w| !w.is_finite()) {
            push(v, "RIS phases must be finite");
        }
    }
}

fn check_edge(c: &ScenarioConfig, e: &Edge, v: &mut Vec<String>) {
    if e.i == e.j {
        push(v, format!("spatial edge ({}, {}) is a self-loop", e.i, e.j));
    }
    if e.i >= c.num_users || e.j >= c.num_users {
        push(v, format!("spatial edge ({}, {}) references a missing user", e.i, e.j));
    }
    if let Some(p) = e.precision {
        if !(p >= 0.0 && p.is_finite()) {
            push(v, "edge precision must be nonnegative");
        }
    }
}

fn validate_edges(c: &ScenarioConfig, v: &mut Vec<String>) {
    if !(c.spatial_precision >= 0.0 && c.spatial_precision.is_finite()) {
        push(v, "spatial precision must be nonnegative");
    }
    match &c.spatial_edges {
        EdgeSet::Keyword(_) => {}
        EdgeSet::Static(es) => es.iter().for_each(|e| check_edge(c, e, v)),
        EdgeSet::PerStep { per_step } => {
            if per_step.len() != c.num_steps {
                push(v, "per-step edge sets must have one entry per step");
            }
            per_step.iter().flatten().for_each(|e| check_edge(c, e, v));
        }
    }
}

fn validate_temporal(c: &ScenarioConfig, v: &mut Vec<String>) {
    let spd = |m: &[[f64; 2]; 2]| {
        let m = linalg::mat2_from_rows(*m);
        (m - m.transpose()).norm() <= 1e-12 * m.norm() && linalg::inv2_spd(&m).is_some()
    };
    match &c.temporal_covariance {
        TemporalCovariance::Isotropic(x) => {
            if !(*x > 0.0 && x.is_finite()) {
                push(v, "temporal covariance not SPD");
            }
        }
        TemporalCovariance::Uniform(m) => {
            if !spd(m) {
                push(v, "temporal covariance not SPD");
            }
        }
        TemporalCovariance::PerStep(q) => {
            let need = c.num_steps.saturating_sub(1);
            if q.len() < need || q.iter().take(need).any(|s| s.len() != c.num_users) {
                push(v, "per-step temporal covariance must cover every transition and user");
            }
            for (t, s) in q.iter().enumerate() {
                for (k, m) in s.iter().enumerate() {
                    if !spd(m) {
                        push(v, format!("temporal covariance not SPD at ({}, {})", t + 1, k + 1));
                    }
                }
            }
        }
    }
}

impl ScenarioConfig {
    pub fn check(&self) -> Result<()> {
        let r = validate(self);
        if r.is_ok() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(r.violations.join("; ")))
        }
    }

    pub fn bs(&self) -> Vec2 {
        Vec2::new(self.bs_position[0], self.bs_position[1])
    }

    pub fn ris(&self, i: usize) -> Vec2 {
        Vec2::new(self.ris_positions[i][0], self.ris_positions[i][1])
    }

    pub fn initial_position(&self, k: usize) -> Vec2 {
        let p = self.user_initial_positions[k];
        Vec2::new(p[0], p[1])
    }

    /// Edges present at step `t` as `(i, j, precision)` with `i < j`.
    pub fn edges_at(&self, t: usize) -> Vec<(usize, usize, f64)> {
        let resolve = |es: &[Edge]| {
            es.iter()
                .map(|e| (e.i.min(e.j), e.i.max(e.j), e.precision.unwrap_or(self.spatial_precision)))
                .collect::<Vec<_>>()
        };
        match &self.spatial_edges {
            EdgeSet::Keyword(EdgeKeyword::Complete) => {
                let mut out = Vec::new();
                for i in 0..self.num_users {
                    for j in i + 1..self.num_users {
                        out.push((i, j, self.spatial_precision));
                    }
                }
                out
            }
            EdgeSet::Keyword(EdgeKeyword::None) => Vec::new(),
            EdgeSet::Static(es) => resolve(es),
            EdgeSet::PerStep { per_step } => resolve(&per_step[t]),
        }
    }

    /// Displacement covariance for the transition from step `t` to `t + 1`.
    pub fn temporal_cov(&self, t: usize, k: usize) -> Mat2 {
        match &self.temporal_covariance {
            TemporalCovariance::Isotropic(x) => Mat2::identity() * *x,
            TemporalCovariance::Uniform(m) => linalg::mat2_from_rows(*m),
            TemporalCovariance::PerStep(q) => linalg::mat2_from_rows(q[t][k]),
        }
    }

    /// Copy with the RIS list truncated to the first `r` entries.
    pub fn with_num_ris(&self, r: usize) -> Self {
        let mut c = self.clone();
        c.num_ris = r;
        c.ris_positions.truncate(r);
        c.bs_ris_gains.truncate(r);
        c.bs_ris_aoa.truncate(r);
        c.bs_ris_aod.truncate(r);
        if let PhaseProfiles::Explicit(p) = &mut c.ris_phase_profiles {
            p.iter_mut().for_each(|s| s.truncate(r));
        }
        c
    }
}

/// Resolved prior: edge precisions per step, displacement covariances and the anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorModel {
    pub kind: PriorKind,
    pub n_steps: usize,
    pub n_users: usize,
    /// `edges[t]` lists `(i, j, precision)` with `i < j`.
    pub edges: Vec<Vec<(usize, usize, f64)>>,
    /// `temporal[t][k]` is `Q` for the transition from t to t+1, `t < T - 1`.
    pub temporal: Vec<Vec<Mat2>>,
    pub anchor_variance: f64,
    pub anchor_means: Vec<Vec2>,
}

impl PriorModel {
    pub fn from_config(c: &ScenarioConfig) -> Result<Self> {
        c.check()?;
        let t_n = c.num_steps;
        Ok(Self {
            kind: c.prior_kind,
            n_steps: t_n,
            n_users: c.num_users,
            edges: (0..t_n).map(|t| c.edges_at(t)).collect(),
            temporal: (0..t_n.saturating_sub(1))
                .map(|t| (0..c.num_users).map(|k| c.temporal_cov(t, k)).collect())
                .collect(),
            anchor_variance: c.first_step_anchor_variance,
            anchor_means: (0..c.num_users).map(|k| c.initial_position(k)).collect(),
        })
    }

    /// Inverse displacement covariance for transition t to t+1.
    pub fn gamma(&self, t: usize, k: usize) -> Result<Mat2> {
        linalg::inv2_spd(&self.temporal[t][k]).ok_or(Error::NotSpd("temporal covariance"))
    }

    pub fn anchor_precision(&self) -> f64 {
        1.0 / self.anchor_variance
    }
}

/// User positions over the horizon, indexed `(t, k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub n_steps: usize,
    pub n_users: usize,
    pub positions: Vec<Vec2>,
    pub seed: u64,
}

impl Trajectory {
    pub fn new(n_steps: usize, n_users: usize, positions: Vec<Vec2>, seed: u64) -> Result<Self> {
        if positions.len() != n_steps * n_users {
            return Err(Error::DimensionMismatch { expected: n_steps * n_users, found: positions.len() });
        }
        Ok(Self { n_steps, n_users, positions, seed })
    }

    /// Every user parked at its initial position for all steps.
    pub fn stationary(c: &ScenarioConfig) -> Self {
        let positions = (0..c.num_steps)
            .flat_map(|_| (0..c.num_users).map(|k| c.initial_position(k)))
            .collect();
        Self { n_steps: c.num_steps, n_users: c.num_users, positions, seed: 0 }
    }

    pub fn at(&self, t: usize, k: usize) -> Vec2 {
        self.positions[t * self.n_users + k]
    }

    pub fn set(&mut self, t: usize, k: usize, p: Vec2) {
        self.positions[t * self.n_users + k] = p;
    }

    /// Checks finiteness and the minimum RIS separation.
    pub fn check_geometry(&self, c: &ScenarioConfig) -> Result<()> {
        for p in &self.positions {
            if !p.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidConfig("non-finite trajectory coordinate".into()));
            }
            for i in 0..c.num_ris {
                let d = (p - c.ris(i)).norm();
                if d <= MIN_SEPARATION {
                    return Err(Error::DegenerateGeometry { distance: d, min_separation: MIN_SEPARATION });
                }
            }
        }
        Ok(())
    }
}

/// Precision of the anchored Gaussian prior over all stacked positions.
pub fn joint_precision(prior: &PriorModel) -> Result<BlockMatrix> {
    if prior.kind != PriorKind::L2Squared {
        return Err(Error::NotGaussian);
    }
    let mut m = BlockMatrix::zeros(prior.n_steps, prior.n_users);
    let id = Mat2::identity();
    for t in 0..prior.n_steps {
        for &(i, j, w) in &prior.edges[t] {
            let (gi, gj) = (m.index(t, i), m.index(t, j));
            m.add_block(gi, gi, &(id * w));
            m.add_block(gj, gj, &(id * w));
            m.add_block(gi, gj, &(-id * w));
            m.add_block(gj, gi, &(-id * w));
        }
    }
    for t in 0..prior.n_steps.saturating_sub(1) {
        for k in 0..prior.n_users {
            let g = prior.gamma(t, k)?;
            let (a, b) = (m.index(t, k), m.index(t + 1, k));
            m.add_block(a, a, &g);
            m.add_block(b, b, &g);
            m.add_block(a, b, &(-g));
            m.add_block(b, a, &(-g));
        }
    }
    for k in 0..prior.n_users {
        m.add_block(k, k, &(id * prior.anchor_precision()));
    }
    Ok(m)
}

/// Exact sampler for the Gaussian prior. Factorizes once and draws many trajectories.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    n_steps: usize,
    n_users: usize,
    mean: DVector<f64>,
    chol_l: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn new(prior: &PriorModel) -> Result<Self> {
        let lam = joint_precision(prior)?;
        let mut b = DVector::zeros(lam.dim());
        for (k, mu) in prior.anchor_means.iter().enumerate() {
            b[2 * k] = mu.x * prior.anchor_precision();
            b[2 * k + 1] = mu.y * prior.anchor_precision();
        }
        let chol = lam.data.clone().cholesky().ok_or(Error::NotSpd("joint precision"))?;
        let mean = chol.solve(&b);
        Ok(Self { n_steps: prior.n_steps, n_users: prior.n_users, mean, chol_l: chol.l() })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn sample(&self, seed: u64) -> Trajectory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        // L L^T x = 0 + noise: x = L^{-T} z has covariance (L L^T)^{-1}.
        let dx = self.chol_l.tr_solve_lower_triangular(&z).expect("cholesky factor is nonsingular");
        let x = &self.mean + dx;
        let positions = (0..self.n_steps * self.n_users).map(|g| Vec2::new(x[2 * g], x[2 * g + 1])).collect();
        Trajectory { n_steps: self.n_steps, n_users: self.n_users, positions, seed }
    }
}

/// Settings for the Metropolis-within-Gibbs sampler used by non-Gaussian priors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McmcSettings {
    pub burn_in: usize,
    /// Sweeps between retained samples.
    pub thinning: usize,
    /// Multiplier on the per-node proposal standard deviation.
    pub proposal_scale: f64,
}

impl Default for McmcSettings {
    fn default() -> Self {
        Self { burn_in: 1000, thinning: 1, proposal_scale: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SamplerOptions {
    /// `None` disables MCMC, making non-Gaussian priors unsampleable.
    pub mcmc: Option<McmcSettings>,
}

impl SamplerOptions {
    pub fn with_mcmc() -> Self {
        Self { mcmc: Some(McmcSettings::default()) }
    }
}

/// Draws one trajectory from the prior. Gaussian priors are sampled exactly,
/// L1 priors through MCMC with default settings.
pub fn sample_trajectory(c: &ScenarioConfig, seed: u64) -> Result<Trajectory> {
    sample_trajectory_with(c, seed, &SamplerOptions::with_mcmc())
}

pub fn sample_trajectory_with(c: &ScenarioConfig, seed: u64, opts: &SamplerOptions) -> Result<Trajectory> {
    let prior = PriorModel::from_config(c)?;
    let traj = match prior.kind {
        PriorKind::L2Squared => GaussianSampler::new(&prior)?.sample(seed),
        PriorKind::L1Norm => {
            let s = opts.mcmc.ok_or(Error::SamplingUnsupported("l1 prior requires MCMC"))?;
            McmcSampler::new(&prior, s, seed)?.draw(1).pop().ok_or(Error::EmptyEnsemble)?
        }
    };
    traj.check_geometry(c)?;
    Ok(traj)
}

/// Negative log density of the prior, up to a constant.
pub fn prior_energy(prior: &PriorModel, traj: &Trajectory) -> Result<f64> {
    let mut e = 0.0;
    for k in 0..prior.n_users {
        e += 0.5 * (traj.at(0, k) - prior.anchor_means[k]).norm_squared() * prior.anchor_precision();
    }
    for t in 0..prior.n_steps.saturating_sub(1) {
        for k in 0..prior.n_users {
            let d = traj.at(t + 1, k) - traj.at(t, k);
            e += 0.5 * (d.transpose() * prior.gamma(t, k)? * d)[0];
        }
    }
    for t in 0..prior.n_steps {
        for &(i, j, w) in &prior.edges[t] {
            e += edge_energy(prior.kind, w, &(traj.at(t, i) - traj.at(t, j)));
        }
    }
    Ok(e)
}

fn edge_energy(kind: PriorKind, w: f64, diff: &Vec2) -> f64 {
    match kind {
        PriorKind::L2Squared => 0.5 * w * diff.norm_squared(),
        PriorKind::L1Norm => 0.5 * w * diff.norm(),
    }
}

/// Random-walk Metropolis over single nodes, sweeping all `(t, k)` in order.
pub struct McmcSampler {
    prior: PriorModel,
    gammas: Vec<Vec<Mat2>>,
    steps: Vec<f64>,
    settings: McmcSettings,
    state: Trajectory,
    rng: ChaCha8Rng,
    burned: bool,
    seed: u64,
}

impl McmcSampler {
    pub fn new(prior: &PriorModel, settings: McmcSettings, seed: u64) -> Result<Self> {
        let gammas: Vec<Vec<Mat2>> = (0..prior.n_steps.saturating_sub(1))
            .map(|t| (0..prior.n_users).map(|k| prior.gamma(t, k)).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
        // Proposal width from the Gaussian part of each node's conditional.
        let mut steps = Vec::with_capacity(prior.n_steps * prior.n_users);
        for t in 0..prior.n_steps {
            for k in 0..prior.n_users {
                let mut p = if t == 0 { prior.anchor_precision() } else { 0.0 };
                if t > 0 {
                    p += gammas[t - 1][k].trace() * 0.5;
                }
                if t + 1 < prior.n_steps {
                    p += gammas[t][k].trace() * 0.5;
                }
                for &(i, j, w) in &prior.edges[t] {
                    if i == k || j == k {
                        p += w;
                    }
                }
                steps.push(settings.proposal_scale / p.max(1e-12).sqrt());
            }
        }
        let positions = (0..prior.n_steps).flat_map(|_| prior.anchor_means.iter().copied()).collect();
        Ok(Self {
            prior: prior.clone(),
            gammas,
            steps,
            settings,
            state: Trajectory { n_steps: prior.n_steps, n_users: prior.n_users, positions, seed },
            rng: ChaCha8Rng::seed_from_u64(seed),
            burned: false,
            seed,
        })
    }

    fn local_energy(&self, t: usize, k: usize, p: &Vec2) -> f64 {
        let pr = &self.prior;
        let mut e = 0.0;
        if t == 0 {
            e += 0.5 * (p - pr.anchor_means[k]).norm_squared() * pr.anchor_precision();
        }
        if t > 0 {
            let d = p - self.state.at(t - 1, k);
            e += 0.5 * (d.transpose() * self.gammas[t - 1][k] * d)[0];
        }
        if t + 1 < pr.n_steps {
            let d = self.state.at(t + 1, k) - p;
            e += 0.5 * (d.transpose() * self.gammas[t][k] * d)[0];
        }
        for &(i, j, w) in &pr.edges[t] {
            let other = if i == k {
                j
            } else if j == k {
                i
            } else {
                continue;
            };
            e += edge_energy(pr.kind, w, &(p - self.state.at(t, other)));
        }
        e
    }

    fn sweep(&mut self) {
        for t in 0..self.prior.n_steps {
            for k in 0..self.prior.n_users {
                let cur = self.state.at(t, k);
                let s = self.steps[t * self.prior.n_users + k];
                let zx: f64 = self.rng.sample(StandardNormal);
                let zy: f64 = self.rng.sample(StandardNormal);
                let prop = cur + Vec2::new(zx, zy) * s;
                let de = self.local_energy(t, k, &prop) - self.local_energy(t, k, &cur);
                let u: f64 = self.rng.random();
                if de <= 0.0 || u < (-de).exp() {
                    self.state.set(t, k, prop);
                }
            }
        }
    }

    /// Runs burn-in on first use, then returns `n` samples separated by the thinning interval.
    pub fn draw(&mut self, n: usize) -> Vec<Trajectory> {
        if !self.burned {
            for _ in 0..self.settings.burn_in {
                self.sweep();
            }
            self.burned = true;
        }
        let mut out = Vec::with_capacity(n);
        for idx in 0..n {
            for _ in 0..self.settings.thinning.max(1) {
                self.sweep();
            }
            let mut tr = self.state.clone();
            tr.seed = self.seed.wrapping_add(idx as u64);
            out.push(tr);
        }
        out
    }
}

/// Draws `n` trajectories, exact for Gaussian priors (seeds `seed + i`) and
/// from one MCMC chain otherwise.
pub fn sample_ensemble(c: &ScenarioConfig, seed: u64, n: usize, opts: &SamplerOptions) -> Result<Vec<Trajectory>> {
    let prior = PriorModel::from_config(c)?;
    match prior.kind {
        PriorKind::L2Squared => {
            let s = GaussianSampler::new(&prior)?;
            Ok((0..n as u64).map(|i| s.sample(seed.wrapping_add(i))).collect())
        }
        PriorKind::L1Norm => {
            let s = opts.mcmc.ok_or(Error::SamplingUnsupported("l1 prior requires MCMC"))?;
            Ok(McmcSampler::new(&prior, s, seed)?.draw(n))
        }
    }
}
