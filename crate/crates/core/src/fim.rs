//! Measurement and prior Fisher information, the equivalent FIM over all
//! stacked positions, and the Bayesian CRB.

use alloc::vec::Vec;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::block::BlockMatrix;
use crate::channel::{self, CascadeLinks, GeometryParams};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat2};
use crate::scenario::{PriorKind, PriorModel, ScenarioConfig, Trajectory};

/// Which channel parameters are treated as unknown nuisances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Nuisance {
    /// BS-RIS links known; only the RIS-user angle and gain carry information.
    #[default]
    None,
    /// An unknown common phase on each RIS cascade.
    CascadePhase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceBlocks {
    pub lambda_xi: DMatrix<f64>,
    pub lambda_xi_theta: DMatrix<f64>,
}

/// Per-(t, k) measurement information, stored in block order `gamma = t K + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementFim {
    pub n_steps: usize,
    pub n_users: usize,
    pub blocks: Vec<Mat2>,
    /// `T_u`, `2 x 2R`, columns ordered `[theta_1..theta_R, rho_1..rho_R]`.
    pub jacobians: Vec<DMatrix<f64>>,
    /// Channel-parameter information before the position transform.
    pub param_fims: Vec<DMatrix<f64>>,
    pub nuisance: Option<Vec<NuisanceBlocks>>,
}

impl MeasurementFim {
    pub fn zeros(n_steps: usize, n_users: usize) -> Self {
        Self {
            n_steps,
            n_users,
            blocks: alloc::vec![Mat2::zeros(); n_steps * n_users],
            jacobians: Vec::new(),
            param_fims: Vec::new(),
            nuisance: None,
        }
    }

    /// Build from explicit blocks, e.g. for synthetic tests.
    pub fn from_blocks(n_steps: usize, n_users: usize, blocks: Vec<Mat2>) -> Result<Self> {
        if blocks.len() != n_steps * n_users {
            return Err(Error::DimensionMismatch { expected: n_steps * n_users, found: blocks.len() });
        }
        Ok(Self { n_steps, n_users, blocks, jacobians: Vec::new(), param_fims: Vec::new(), nuisance: None })
    }

    pub fn block(&self, t: usize, k: usize) -> Mat2 {
        self.blocks[t * self.n_users + k]
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.blocks.iter_mut().for_each(|b| *b *= s);
        out
    }

    pub fn as_block_matrix(&self) -> BlockMatrix {
        let mut m = BlockMatrix::zeros(self.n_steps, self.n_users);
        for (g, b) in self.blocks.iter().enumerate() {
            m.set_block(g, g, b);
        }
        m
    }
}

/// `T_u = d(theta, rho)/du` as a `2 x 2R` matrix.
pub fn position_jacobian(c: &ScenarioConfig, traj: &Trajectory, t: usize, k: usize) -> Result<DMatrix<f64>> {
    let r = c.num_ris;
    let mut tu = DMatrix::zeros(2, 2 * r);
    for i in 0..r {
        let g = channel::geometry_gradient(&c.ris(i), &traj.at(t, k), c.path_loss_exponent)?;
        tu[(0, i)] = g.d_theta.x;
        tu[(1, i)] = g.d_theta.y;
        tu[(0, r + i)] = g.d_rho.x;
        tu[(1, r + i)] = g.d_rho.y;
    }
    Ok(tu)
}

/// `Re{A^H B}` for column lists.
fn re_gram(a: &[&[Complex64]], b: &[&[Complex64]]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| a[i].iter().zip(b[j]).map(|(x, y)| (x.conj() * y).re).sum())
}

/// Channel-parameter FIM for one (t, k), plus the nuisance blocks when requested.
pub fn parameter_fim(
    c: &ScenarioConfig,
    links: &CascadeLinks,
    geo: &[GeometryParams],
    nuisance: Nuisance,
) -> (DMatrix<f64>, Option<NuisanceBlocks>) {
    let params: Vec<(f64, f64)> = geo.iter().map(|g| (g.aoa_ru, g.gain_ru)).collect();
    let jac = links.jacobian(&params);
    let scale = 2.0 * c.transmit_power / channel::effective_noise_variance(c, geo);
    let cols: Vec<&[Complex64]> =
        jac.d_h_d_theta.iter().chain(jac.d_h_d_rho.iter()).map(|v| v.as_slice()).collect();
    let lambda_theta = re_gram(&cols, &cols) * scale;
    let nb = match nuisance {
        Nuisance::None => None,
        Nuisance::CascadePhase => {
            let j = Complex64::new(0.0, 1.0);
            let xi: Vec<Vec<Complex64>> = params
                .iter()
                .enumerate()
                .map(|(i, &(th, rho))| links.summand(i, th, rho).into_iter().map(|s| s * j).collect())
                .collect();
            let xr: Vec<&[Complex64]> = xi.iter().map(|v| v.as_slice()).collect();
            Some(NuisanceBlocks {
                lambda_xi: re_gram(&xr, &xr) * scale,
                lambda_xi_theta: re_gram(&xr, &cols) * scale,
            })
        }
    };
    (lambda_theta, nb)
}

/// `Lambda_theta - Lambda_xt^T Lambda_xi^{-1} Lambda_xt`.
pub fn schur_correction(
    lambda_theta: &DMatrix<f64>,
    lambda_xi_theta: &DMatrix<f64>,
    lambda_xi: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if lambda_xi.nrows() == 0 {
        return Ok(lambda_theta.clone());
    }
    if !linalg::is_spd(lambda_xi) {
        return Err(Error::SingularNuisance);
    }
    let chol = linalg::symmetrize(lambda_xi).cholesky().ok_or(Error::SingularNuisance)?;
    let x = chol.solve(lambda_xi_theta);
    Ok(linalg::symmetrize(&(lambda_theta - lambda_xi_theta.transpose() * x)))
}

pub fn measurement_fim(c: &ScenarioConfig, traj: &Trajectory) -> Result<MeasurementFim> {
    measurement_fim_with(c, traj, Nuisance::None)
}

pub fn measurement_fim_with(c: &ScenarioConfig, traj: &Trajectory, nuisance: Nuisance) -> Result<MeasurementFim> {
    if traj.n_steps != c.num_steps || traj.n_users != c.num_users {
        return Err(Error::DimensionMismatch { expected: c.num_steps * c.num_users, found: traj.positions.len() });
    }
    let n = c.num_steps * c.num_users;
    let mut blocks = Vec::with_capacity(n);
    let mut jacobians = Vec::with_capacity(n);
    let mut param_fims = Vec::with_capacity(n);
    let mut nuis = Vec::new();
    for t in 0..c.num_steps {
        for k in 0..c.num_users {
            let (links, geo) = channel::cascade_links(c, traj, t, k)?;
            let tu = position_jacobian(c, traj, t, k)?;
            let (lt, nb) = parameter_fim(c, &links, &geo, nuisance);
            let eff = match &nb {
                Some(b) => schur_correction(&lt, &b.lambda_xi_theta, &b.lambda_xi)?,
                None => lt.clone(),
            };
            let d = linalg::symmetrize(&(&tu * eff * tu.transpose()));
            blocks.push(linalg::from_dmatrix(&d));
            jacobians.push(tu);
            param_fims.push(lt);
            if let Some(b) = nb {
                nuis.push(b);
            }
        }
    }
    Ok(MeasurementFim {
        n_steps: c.num_steps,
        n_users: c.num_users,
        blocks,
        jacobians,
        param_fims,
        nuisance: if nuisance == Nuisance::None { None } else { Some(nuis) },
    })
}

/// Prior information split into spatial edges, temporal transitions and the first-step anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorFim {
    pub spatial: BlockMatrix,
    pub temporal: BlockMatrix,
    /// Anchor precision per user, applied at the first step only.
    pub anchor: Vec<Mat2>,
}

impl PriorFim {
    pub fn n_steps(&self) -> usize {
        self.spatial.n_steps
    }

    pub fn n_users(&self) -> usize {
        self.spatial.n_users
    }

    pub fn anchor_block_matrix(&self) -> BlockMatrix {
        let mut m = BlockMatrix::zeros(self.n_steps(), self.n_users());
        for (k, a) in self.anchor.iter().enumerate() {
            m.set_block(k, k, a);
        }
        m
    }

    /// `Lambda_PS + Lambda_PT + anchor`.
    pub fn total(&self) -> BlockMatrix {
        &(&self.spatial + &self.temporal) + &self.anchor_block_matrix()
    }

    /// The `2K x 2K` spatial block at step `t`.
    pub fn spatial_slice(&self, t: usize) -> DMatrix<f64> {
        let k = 2 * self.n_users();
        self.spatial.data.view((t * k, t * k), (k, k)).into_owned()
    }

    pub fn without_anchor(&self) -> Self {
        let mut p = self.clone();
        p.anchor.iter_mut().for_each(|a| *a = Mat2::zeros());
        p
    }
}

fn add_edge(m: &mut BlockMatrix, gi: usize, gj: usize, h: &Mat2) {
    m.add_block(gi, gi, h);
    m.add_block(gj, gj, h);
    m.add_block(gi, gj, &(-h));
    m.add_block(gj, gi, &(-h));
}

/// Hessian of the L1 edge energy `w |d| / 2` with respect to one endpoint.
pub fn l1_edge_hessian(w: f64, diff: &linalg::Vec2) -> Mat2 {
    let d = diff.norm();
    let n = diff / d;
    (Mat2::identity() - n * n.transpose()) * (0.5 * w / d)
}

/// Prior FIM. L2 priors use the closed form; L1 priors average the edge
/// Hessians over `ensemble`.
pub fn prior_fim(prior: &PriorModel, ensemble: &[Trajectory]) -> Result<PriorFim> {
    let (tn, kn) = (prior.n_steps, prior.n_users);
    let mut spatial = BlockMatrix::zeros(tn, kn);
    match prior.kind {
        PriorKind::L2Squared => {
            for t in 0..tn {
                for &(i, j, w) in &prior.edges[t] {
                    let (gi, gj) = (spatial.index(t, i), spatial.index(t, j));
                    add_edge(&mut spatial, gi, gj, &(Mat2::identity() * w));
                }
            }
        }
        PriorKind::L1Norm => {
            if ensemble.is_empty() {
                return Err(Error::EmptyEnsemble);
            }
            let inv_n = 1.0 / ensemble.len() as f64;
            for t in 0..tn {
                for &(i, j, w) in &prior.edges[t] {
                    let mut h = Mat2::zeros();
                    for tr in ensemble {
                        h += l1_edge_hessian(w, &(tr.at(t, i) - tr.at(t, j)));
                    }
                    let (gi, gj) = (spatial.index(t, i), spatial.index(t, j));
                    add_edge(&mut spatial, gi, gj, &(h * inv_n));
                }
            }
        }
    }
    let mut temporal = BlockMatrix::zeros(tn, kn);
    for t in 0..tn.saturating_sub(1) {
        for k in 0..kn {
            let g = prior.gamma(t, k)?;
            let (ga, gb) = (temporal.index(t, k), temporal.index(t + 1, k));
            add_edge(&mut temporal, ga, gb, &g);
        }
    }
    let anchor = (0..kn).map(|_| Mat2::identity() * prior.anchor_precision()).collect();
    Ok(PriorFim { spatial, temporal, anchor })
}

/// `J_e = Lambda_D + Lambda_PS + Lambda_PT + anchor`.
pub fn assemble_efim(meas: &MeasurementFim, prior: &PriorFim) -> Result<BlockMatrix> {
    if meas.n_steps != prior.n_steps() || meas.n_users != prior.n_users() {
        return Err(Error::DimensionMismatch {
            expected: prior.n_steps() * prior.n_users(),
            found: meas.n_steps * meas.n_users,
        });
    }
    let mut j = prior.total();
    for (g, b) in meas.blocks.iter().enumerate() {
        j.add_block(g, g, b);
    }
    j.data = linalg::symmetrize(&j.data);
    Ok(j)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bcrb {
    pub total: f64,
    /// `per_user[t][k]`.
    pub per_user: Vec<Vec<f64>>,
}

impl Bcrb {
    /// Mean per-coordinate bound, `total / (2 T K)`.
    pub fn per_coordinate(&self) -> f64 {
        let n: usize = self.per_user.iter().map(|r| r.len()).sum();
        self.total / (2 * n) as f64
    }
}

pub fn bcrb_from_inverse(n_steps: usize, n_users: usize, inv: &DMatrix<f64>) -> Bcrb {
    let per_user: Vec<Vec<f64>> = (0..n_steps)
        .map(|t| (0..n_users).map(|k| linalg::get2(inv, t * n_users + k, t * n_users + k).trace()).collect())
        .collect();
    Bcrb { total: inv.trace(), per_user }
}

pub fn bcrb(efim: &BlockMatrix) -> Result<Bcrb> {
    let inv = efim.inverse_spd()?;
    Ok(bcrb_from_inverse(efim.n_steps, efim.n_users, &inv))
}
