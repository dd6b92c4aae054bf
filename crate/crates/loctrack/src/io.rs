//! File formats. Every CSV carries a header and uses one-based `t` and `k`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use loctrack_core::asymptotics::AsymptoticReport;
use loctrack_core::channel;
use loctrack_core::coupling::{EocReport, Ptpm};
use loctrack_core::fim::Bcrb;
use loctrack_core::recursive::{RecursiveState, StationaryPoint};
use loctrack_core::scenario::{ScenarioConfig, Trajectory};
use loctrack_core::{BlockMatrix, Vec2};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn read_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_scenario(path: &Path, c: &ScenarioConfig) -> Result<()> {
    let text = serde_json::to_string_pretty(c)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct PositionRow {
    t: usize,
    k: usize,
    x: f64,
    y: f64,
}

pub fn write_trajectory<W: Write>(w: W, traj: &Trajectory) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for t in 0..traj.n_steps {
        for k in 0..traj.n_users {
            let p = traj.at(t, k);
            out.serialize(PositionRow { t: t + 1, k: k + 1, x: p[0], y: p[1] })?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a `t,k,x,y` table. Rows may come in any order but must cover every `(t, k)` once.
pub fn read_trajectory<R: Read>(r: R) -> Result<Trajectory> {
    let mut rows = Vec::new();
    for row in csv::Reader::from_reader(r).deserialize() {
        let row: PositionRow = row?;
        if row.t == 0 || row.k == 0 {
            return Err(Error::Format("t and k are one-based".into()));
        }
        rows.push(row);
    }
    let n_steps = rows.iter().map(|r| r.t).max().unwrap_or(0);
    let n_users = rows.iter().map(|r| r.k).max().unwrap_or(0);
    if rows.len() != n_steps * n_users {
        return Err(Error::Format(format!("expected {} rows, found {}", n_steps * n_users, rows.len())));
    }
    let mut positions = vec![None; n_steps * n_users];
    for r in rows {
        let slot = &mut positions[(r.t - 1) * n_users + (r.k - 1)];
        if slot.is_some() {
            return Err(Error::Format(format!("duplicate row t={} k={}", r.t, r.k)));
        }
        *slot = Some(Vec2::new(r.x, r.y));
    }
    let positions = positions.into_iter().map(|p| p.unwrap()).collect();
    Ok(Trajectory::new(n_steps, n_users, positions, 0)?)
}

/// Debug dump of the RIS-user geometry, `t,k,i,theta_ru,rho_ru`.
pub fn write_channel_gains<W: Write>(w: W, c: &ScenarioConfig, traj: &Trajectory) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "k", "i", "theta_ru", "rho_ru"])?;
    for t in 0..traj.n_steps {
        for k in 0..traj.n_users {
            for i in 0..c.num_ris {
                let g = channel::geometry_params(&c.ris(i), &traj.at(t, k), c.path_loss_exponent)?;
                out.write_record([
                    (t + 1).to_string(),
                    (k + 1).to_string(),
                    (i + 1).to_string(),
                    g.aoa_ru.to_string(),
                    g.gain_ru.to_string(),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_bcrb<W: Write>(w: W, b: &Bcrb) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "k", "bcrb"])?;
    for (t, row) in b.per_user.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            out.write_record([(t + 1).to_string(), (k + 1).to_string(), v.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_eoc<W: Write>(w: W, r: &EocReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "k", "eoc", "delta_trace", "f_to_b_trace", "bcrb"])?;
    for e in &r.entries {
        out.write_record([
            (e.t + 1).to_string(),
            (e.k + 1).to_string(),
            e.scalar_eoc.to_string(),
            e.delta.trace().to_string(),
            e.f_absorb.trace().to_string(),
            e.bcrb.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_recursion<W: Write>(w: W, states: &[RecursiveState]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "bcrb_mean", "eoc_mean", "condition_satisfied", "slack"])?;
    for s in states {
        out.write_record([
            s.step.to_string(),
            s.bcrb_mean().to_string(),
            s.eoc_mean().to_string(),
            s.condition_satisfied.to_string(),
            s.slack.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Time series of an asymptotic run, `t,regime,bcrb_mean,eoc_mean`.
pub fn write_asymptotic_series<W: Write>(w: W, r: &AsymptoticReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "regime", "bcrb_mean", "eoc_mean"])?;
    for (i, (b, e)) in r.bcrb_trend.iter().zip(&r.eoc_trend).enumerate() {
        out.write_record([(i + 1).to_string(), r.regime.label().to_string(), b.to_string(), e.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_asymptotic_report<W: Write>(w: W, r: &AsymptoticReport) -> Result<()> {
    serde_json::to_writer_pretty(w, r)?;
    Ok(())
}

/// Dense row-major CSV without a header.
pub fn write_dense<W: Write>(w: W, m: &DMatrix<f64>) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for i in 0..m.nrows() {
        out.write_record(m.row(i).iter().map(|v| v.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dense<R: Read>(r: R) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in csv::ReaderBuilder::new().has_headers(false).from_reader(r).records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Format(format!("{s:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::Format("ragged matrix".into()));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

pub fn write_block_matrix_csv<W: Write>(w: W, b: &BlockMatrix) -> Result<()> {
    write_dense(w, &b.data)
}

pub fn read_block_matrix_csv<R: Read>(r: R, n_steps: usize, n_users: usize) -> Result<BlockMatrix> {
    Ok(BlockMatrix::from_matrix(n_steps, n_users, read_dense(r)?)?)
}

/// Binary layout: `n_steps` and `n_users` as u64 LE, then the `2TK x 2TK`
/// entries row-major as f64 LE.
pub fn write_block_matrix_bin<W: Write>(mut w: W, b: &BlockMatrix) -> Result<()> {
    w.write_all(&(b.n_steps as u64).to_le_bytes())?;
    w.write_all(&(b.n_users as u64).to_le_bytes())?;
    for i in 0..b.dim() {
        for j in 0..b.dim() {
            w.write_all(&b.data[(i, j)].to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_block_matrix_bin<R: Read>(mut r: R) -> Result<BlockMatrix> {
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let n_steps = u64::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let n_users = u64::from_le_bytes(word) as usize;
    let n = 2 * n_steps * n_users;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != 8 * n * n {
        return Err(Error::Format(format!("expected {} payload bytes, found {}", 8 * n * n, bytes.len())));
    }
    let vals: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(BlockMatrix::from_matrix(n_steps, n_users, DMatrix::from_row_slice(n, n, &vals))?)
}

/// Dense `[Q R]` dump of the pseudo-transition matrix.
pub fn write_ptpm<W: Write>(w: W, p: &Ptpm) -> Result<()> {
    write_dense(w, &p.full_matrix())
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn from_rows(name: &str, r: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = r.len();
    if n == 0 || r.iter().any(|row| row.len() != n) {
        return Err(Error::Format(format!("{name} must be a non-empty square matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| r[i][j]))
}

/// Input of `loctrack stationary`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationaryInput {
    #[serde(rename = "M")]
    pub m: Vec<Vec<f64>>,
    #[serde(rename = "T")]
    pub t: Vec<Vec<f64>>,
}

impl StationaryInput {
    pub fn matrices(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let m = from_rows("M", &self.m)?;
        let t = from_rows("T", &self.t)?;
        if m.nrows() != t.nrows() {
            return Err(Error::Format("M and T differ in size".into()));
        }
        Ok((m, t))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationaryJson {
    #[serde(rename = "M")]
    pub m: Vec<Vec<f64>>,
    #[serde(rename = "T")]
    pub t: Vec<Vec<f64>>,
    #[serde(rename = "J_star")]
    pub j_star: Vec<Vec<f64>>,
    pub residual: f64,
}

impl From<&StationaryPoint> for StationaryJson {
    fn from(s: &StationaryPoint) -> Self {
        Self { m: rows(&s.m), t: rows(&s.t_mat), j_star: rows(&s.j_star), residual: s.riccati_residual }
    }
}
