//! Seeded Monte Carlo campaigns over a scenario, aggregated into a long-format table.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use loctrack_core::asymptotics::{self, ScenarioConstants};
use loctrack_core::linalg::{self, Mat2};
use loctrack_core::recursive::{self, RecursiveState, StepInputs};
use loctrack_core::scenario::{
    self, PhaseProfiles, PriorModel, SamplerOptions, ScenarioConfig, TemporalCovariance, Trajectory,
};
use loctrack_core::{coupling, fim};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io;

/// Runs abort once this fraction of them has failed.
pub const ABORT_FAILURE_RATE: f64 = 0.1;
pub const THREADS_ENV: &str = "LOCTRACK_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExperimentKind {
    EocVsSnr,
    EocVsNumRis,
    EpConvergence,
    AsymptoticSpatial,
    AsymptoticTemporal,
    Trajectory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Parameter {
    /// `10 log10(1 / sigma^2)` with the transmit power held fixed.
    SnrDb,
    SigmaSInv2,
    SigmaTInv2,
    /// Keeps the first `r` RISs.
    NumRis,
    /// `aligned` or `random`.
    Beamforming,
    TransmitPower,
}

impl Parameter {
    pub fn column(self) -> &'static str {
        match self {
            Parameter::SnrDb => "snr_db",
            Parameter::SigmaSInv2 => "sigma_s_inv2",
            Parameter::SigmaTInv2 => "sigma_t_inv2",
            Parameter::NumRis => "num_ris",
            Parameter::Beamforming => "beamforming",
            Parameter::TransmitPower => "transmit_power",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeriesValue {
    Number(f64),
    Label(String),
}

impl std::fmt::Display for SeriesValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SeriesValue::Number(v) => write!(f, "{v}"),
            SeriesValue::Label(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub parameter: Parameter,
    pub values: Vec<f64>,
}

/// Second parameter, one curve per value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub parameter: Parameter,
    pub values: Vec<SeriesValue>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryMode {
    /// One prior draw per run.
    #[default]
    Sampled,
    /// Users parked at their initial positions; every run is identical.
    Initial,
}

/// Measurement loss on a few steps of the recursion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    /// One-based steps whose measurement information is scaled.
    pub steps: Vec<usize>,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    /// Relative paths are taken from the experiment file's directory.
    pub scenario: PathBuf,
    pub kind: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series: Option<Series>,
    pub num_monte_carlo: usize,
    pub base_seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub trajectory: TrajectoryMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<Disturbance>,
    /// Steps of the constant-input recursion for the asymptotic kinds; defaults to `num-steps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<(Self, ScenarioConfig)> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let scenario = io::read_scenario(&base.join(&spec.scenario))?;
        Ok((spec, scenario))
    }

    fn sweep_values(&self) -> Vec<Option<f64>> {
        match &self.sweep {
            Some(s) => s.values.iter().map(|v| Some(*v)).collect(),
            None => vec![None],
        }
    }

    fn series_values(&self) -> Vec<Option<SeriesValue>> {
        match &self.series {
            Some(s) => s.values.iter().cloned().map(Some).collect(),
            None => vec![None],
        }
    }

    fn horizon(&self, c: &ScenarioConfig) -> usize {
        self.horizon.unwrap_or(c.num_steps)
    }

    /// Checks the experiment against the scenario, including every swept configuration.
    pub fn validate(&self, base: &ScenarioConfig) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.num_monte_carlo == 0 {
            return bad("num-monte-carlo must be at least 1".into());
        }
        let report = scenario::validate(base);
        if !report.is_ok() {
            return Err(Error::InvalidScenario(report.violations));
        }
        match (&self.sweep, self.kind) {
            (None, ExperimentKind::Trajectory) => {}
            (None, _) => return bad("this experiment kind needs a sweep".into()),
            (Some(s), _) => {
                if s.values.is_empty() || s.values.iter().any(|v| !v.is_finite()) {
                    return bad("sweep values must be finite and non-empty".into());
                }
                if s.values.windows(2).any(|w| w[1] <= w[0]) {
                    return bad("sweep values must be strictly increasing".into());
                }
                if s.parameter == Parameter::Beamforming {
                    return bad("beamforming takes labels and can only be a series".into());
                }
            }
        }
        if let Some(s) = &self.series {
            if s.values.is_empty() {
                return bad("series values must be non-empty".into());
            }
            for v in &s.values {
                match (s.parameter, v) {
                    (Parameter::Beamforming, SeriesValue::Label(l)) if l == "aligned" || l == "random" => {}
                    (Parameter::Beamforming, _) => return bad("beamforming values are \"aligned\" or \"random\"".into()),
                    (_, SeriesValue::Number(x)) if x.is_finite() => {}
                    _ => return bad(format!("series {:?} takes finite numbers", s.parameter)),
                }
            }
        }
        if self.kind == ExperimentKind::EpConvergence && base.num_steps < 2 {
            return bad("EP_CONVERGENCE needs at least two steps".into());
        }
        if self.kind == ExperimentKind::AsymptoticTemporal && self.horizon(base) < 10 {
            return bad("ASYMPTOTIC_TEMPORAL needs a horizon of at least 10".into());
        }
        if let Some(d) = &self.disturbance {
            if !(d.scale > 0.0 && d.scale.is_finite()) {
                return bad("disturbance scale must be positive".into());
            }
            if d.steps.iter().any(|s| *s == 0 || *s > base.num_steps) {
                return bad("disturbance steps must lie in 1..=num-steps".into());
            }
        }
        for sv in self.series_values() {
            for v in self.sweep_values() {
                let c = self.configure(base, sv.as_ref(), v, 0)?;
                let report = scenario::validate(&c);
                if !report.is_ok() {
                    return Err(Error::InvalidScenario(report.violations));
                }
            }
        }
        Ok(())
    }

    fn configure(
        &self,
        base: &ScenarioConfig,
        series: Option<&SeriesValue>,
        sweep: Option<f64>,
        seed: u64,
    ) -> Result<ScenarioConfig> {
        let mut c = base.clone();
        if let (Some(s), Some(v)) = (&self.series, series) {
            apply(&mut c, s.parameter, v, seed)?;
        }
        if let (Some(s), Some(v)) = (&self.sweep, sweep) {
            apply(&mut c, s.parameter, &SeriesValue::Number(v), seed)?;
        }
        Ok(c)
    }
}

fn apply(c: &mut ScenarioConfig, p: Parameter, v: &SeriesValue, seed: u64) -> Result<()> {
    let num = |v: &SeriesValue| match v {
        SeriesValue::Number(x) => Ok(*x),
        SeriesValue::Label(l) => Err(Error::InvalidSpec(format!("{p:?} expects a number, got {l:?}"))),
    };
    match p {
        Parameter::SnrDb => c.noise_variance = 10f64.powf(-num(v)? / 10.0),
        Parameter::SigmaSInv2 => c.spatial_precision = num(v)?,
        Parameter::SigmaTInv2 => c.temporal_covariance = TemporalCovariance::Isotropic(1.0 / num(v)?),
        Parameter::TransmitPower => c.transmit_power = num(v)?,
        Parameter::NumRis => {
            let x = num(v)?;
            if x.fract() != 0.0 || x < 1.0 || x as usize > c.num_ris {
                return Err(Error::InvalidSpec(format!("num-ris {x} must be an integer in 1..={}", c.num_ris)));
            }
            *c = c.with_num_ris(x as usize);
        }
        Parameter::Beamforming => {
            c.ris_phase_profiles = match v {
                SeriesValue::Label(l) if l == "aligned" => PhaseProfiles::Aligned,
                SeriesValue::Label(l) if l == "random" => PhaseProfiles::Random { seed },
                _ => return Err(Error::InvalidSpec("beamforming is \"aligned\" or \"random\"".into())),
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub series: String,
    pub sweep_value: Option<f64>,
    pub t: Option<usize>,
    pub k: Option<usize>,
    pub metric_name: String,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub series: String,
    pub sweep_value: Option<f64>,
    pub run: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: ExperimentSpec,
    /// SHA-256 of the scenario's canonical JSON.
    pub scenario_sha256: String,
    pub seeds: Vec<u64>,
    pub runs_total: usize,
    pub failures: Vec<RunFailure>,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
    pub manifest: Manifest,
}

pub const TABLE_FILE: &str = "results.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

impl ResultTable {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_rows<R: std::io::Read>(r: R) -> Result<Vec<ResultRow>> {
        csv::Reader::from_reader(r).deserialize().map(|row| row.map_err(Error::from)).collect()
    }

    /// Writes `results.csv` and `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        let table = dir.join(TABLE_FILE);
        fs::write(&table, buf).map_err(|e| Error::io(&table, e))?;
        write_manifest(dir, &self.manifest)
    }

    /// Reads a table and the manifest next to it.
    pub fn load(table: &Path) -> Result<Self> {
        let f = fs::File::open(table).map_err(|e| Error::io(table, e))?;
        let rows = Self::read_rows(f)?;
        let mpath = table.with_file_name(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        Ok(Self { rows, manifest: serde_json::from_str(&text)? })
    }

    pub fn metric(&self, name: &str) -> impl Iterator<Item = &ResultRow> {
        let name = name.to_string();
        self.rows.iter().filter(move |r| r.metric_name == name)
    }
}

pub fn write_manifest(dir: &Path, m: &Manifest) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(m)? + "\n").map_err(|e| Error::io(&path, e))
}

pub fn scenario_hash(c: &ScenarioConfig) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(c)?)))
}

/// Worker count from `LOCTRACK_THREADS`; unset, zero or unparsable means rayon's default.
pub fn thread_count() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|n| *n > 0)
}

type MetricKey = (&'static str, Option<usize>, Option<usize>);
type RunMetrics = Vec<(MetricKey, f64)>;

struct Item {
    series: usize,
    sweep: usize,
    run: usize,
}

pub fn run_experiment(spec: &ExperimentSpec, base: &ScenarioConfig) -> Result<ResultTable> {
    spec.validate(base)?;
    let series = spec.series_values();
    let sweeps = spec.sweep_values();
    let mut items = Vec::new();
    for si in 0..series.len() {
        for vi in 0..sweeps.len() {
            for run in 0..spec.num_monte_carlo {
                items.push(Item { series: si, sweep: vi, run });
            }
        }
    }
    let work = |it: &Item| -> Result<RunMetrics> {
        let seed = spec.base_seed + it.run as u64;
        let c = spec.configure(base, series[it.series].as_ref(), sweeps[it.sweep], seed)?;
        run_once(spec, &c, seed, sweeps[it.sweep])
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count() {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::InvalidSpec(e.to_string()))?;
    // `collect` keeps item order, so the merge below never depends on scheduling.
    let results: Vec<Result<RunMetrics>> = pool.install(|| items.par_iter().map(work).collect());

    let label = |si: usize| series[si].as_ref().map(|s| s.to_string()).unwrap_or_default();
    let mut failures = Vec::new();
    let mut groups: BTreeMap<(usize, usize), BTreeMap<MetricKey, Vec<f64>>> = BTreeMap::new();
    for (it, res) in items.iter().zip(results) {
        match res {
            Ok(metrics) => {
                let g = groups.entry((it.series, it.sweep)).or_default();
                for (key, v) in metrics {
                    g.entry(key).or_default().push(v);
                }
            }
            Err(e) => failures.push(RunFailure {
                series: label(it.series),
                sweep_value: sweeps[it.sweep],
                run: it.run,
                seed: spec.base_seed + it.run as u64,
                error: e.to_string(),
            }),
        }
    }
    let manifest = Manifest {
        spec: spec.clone(),
        scenario_sha256: scenario_hash(base)?,
        seeds: (0..spec.num_monte_carlo as u64).map(|r| spec.base_seed + r).collect(),
        runs_total: items.len(),
        failures,
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let failed = manifest.failures.len();
    if failed as f64 >= ABORT_FAILURE_RATE * items.len() as f64 && failed > 0 {
        return Err(Error::Aborted { failed, total: items.len(), manifest: Box::new(manifest) });
    }
    let mut rows = Vec::new();
    for ((si, vi), metrics) in groups {
        for ((name, t, k), vals) in metrics {
            let (mean, stderr) = mean_stderr(&vals);
            rows.push(ResultRow {
                experiment: spec.name.clone(),
                series: label(si),
                sweep_value: sweeps[vi],
                t,
                k,
                metric_name: name.to_string(),
                mean,
                stderr,
                n: vals.len(),
            });
        }
    }
    Ok(ResultTable { rows, manifest })
}

fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn trajectory(spec: &ExperimentSpec, c: &ScenarioConfig, seed: u64) -> Result<Trajectory> {
    Ok(match spec.trajectory {
        TrajectoryMode::Sampled => scenario::sample_trajectory_with(c, seed, &SamplerOptions::with_mcmc())?,
        TrajectoryMode::Initial => Trajectory::stationary(c),
    })
}

fn run_once(spec: &ExperimentSpec, c: &ScenarioConfig, seed: u64, sweep: Option<f64>) -> Result<RunMetrics> {
    let traj = trajectory(spec, c, seed)?;
    if spec.kind == ExperimentKind::Trajectory {
        let mut out = Vec::new();
        for t in 0..traj.n_steps {
            for k in 0..traj.n_users {
                let p = traj.at(t, k);
                out.push((("x", Some(t + 1), Some(k + 1)), p[0]));
                out.push((("y", Some(t + 1), Some(k + 1)), p[1]));
            }
        }
        return Ok(out);
    }
    let meas = fim::measurement_fim(c, &traj)?;
    let model = PriorModel::from_config(c)?;
    let prior = fim::prior_fim(&model, std::slice::from_ref(&traj))?;
    match spec.kind {
        ExperimentKind::EocVsSnr | ExperimentKind::EocVsNumRis => eoc_metrics(&meas, &prior),
        ExperimentKind::EpConvergence => ep_metrics(spec, c, &meas, &prior),
        ExperimentKind::AsymptoticSpatial | ExperimentKind::AsymptoticTemporal => {
            asymptotic_metrics(spec, c, &meas, &prior, sweep.unwrap_or(f64::NAN))
        }
        ExperimentKind::Trajectory => unreachable!(),
    }
}

fn eoc_metrics(meas: &fim::MeasurementFim, prior: &fim::PriorFim) -> Result<RunMetrics> {
    let efim = fim::assemble_efim(meas, prior)?;
    let split = coupling::split_d_a(&efim, meas, prior)?;
    let nodes = coupling::eoc_direct(&efim, &split)?;
    let n = nodes.len() as f64;
    let mut out = vec![
        (("eoc_mean", None, None), nodes.iter().map(|(e, _)| 0.5 * e.trace()).sum::<f64>() / n),
        (("bcrb_mean", None, None), nodes.iter().map(|(_, b)| b).sum::<f64>() / (2.0 * n)),
        (("spectral_radius", None, None), split.spectral_radius),
    ];
    for (g, (e, b)) in nodes.iter().enumerate() {
        let (t, k) = (g / efim.n_users + 1, g % efim.n_users + 1);
        out.push((("eoc", Some(t), Some(k)), 0.5 * e.trace()));
        out.push((("bcrb", Some(t), Some(k)), *b));
    }
    Ok(out)
}

/// Constants of step 1 (zero based) of a run, the first step with a temporal prior.
fn run_constants(c: &ScenarioConfig, meas: &fim::MeasurementFim, prior: &fim::PriorFim) -> Result<ScenarioConstants> {
    let t = if c.num_steps > 1 { 1 } else { 0 };
    let lambda_d = (0..c.num_users).map(|k| meas.block(t, k)).collect();
    let gamma = (0..c.num_users)
        .map(|k| linalg::inv2_spd(&c.temporal_cov(t.saturating_sub(1), k)).ok_or(loctrack_core::Error::NotSpd("Q")))
        .collect::<std::result::Result<Vec<Mat2>, _>>()?;
    Ok(ScenarioConstants::from_prior_fim(lambda_d, prior, t, gamma))
}

fn bound_of(j: &nalgebra::DMatrix<f64>) -> Result<f64> {
    let inv = linalg::spd_inverse(j).ok_or(loctrack_core::Error::SingularState)?;
    Ok(inv.trace() / j.nrows() as f64)
}

fn state_metrics(out: &mut RunMetrics, states: &[RecursiveState]) {
    for s in states {
        let t = Some(s.step);
        out.push((("bcrb_mean", t, None), s.bcrb_mean()));
        out.push((("eoc_mean", t, None), s.eoc_mean()));
        out.push((("eoc_user_mean", t, None), s.eoc_user_mean()));
        out.push((("condition_satisfied", t, None), if s.condition_satisfied { 1.0 } else { 0.0 }));
        out.push((("slack", t, None), s.slack));
    }
}

fn ep_metrics(
    spec: &ExperimentSpec,
    c: &ScenarioConfig,
    meas: &fim::MeasurementFim,
    prior: &fim::PriorFim,
) -> Result<RunMetrics> {
    let scale = |t: usize| match &spec.disturbance {
        Some(d) if d.steps.contains(&(t + 1)) => d.scale,
        _ => 1.0,
    };
    let states = recursive::run_recursion_scaled(meas, prior, &scale)?;
    let k = run_constants(c, meas, prior)?;
    let sp = recursive::stationary_point(&k.m(), &k.t_mat())?;
    let mut out = vec![(("theory_bcrb_star", None, None), bound_of(&sp.j_star)?)];
    state_metrics(&mut out, &states);
    Ok(out)
}

/// The recursion under constant inputs, with no temporal prior at the first step.
pub fn constant_recursion(k: &ScenarioConstants, horizon: usize) -> Result<Vec<RecursiveState>> {
    let mut states: Vec<RecursiveState> = Vec::with_capacity(horizon);
    for step in 0..horizon {
        let gamma_prev = if step == 0 { vec![Mat2::zeros(); k.n_users()] } else { k.gamma.clone() };
        let inputs = StepInputs { direct: k.lambda_d.clone(), spatial: k.spatial.clone(), gamma_prev };
        let s = recursive::recursive_step(states.last(), &inputs)?;
        states.push(s);
    }
    Ok(states)
}

fn asymptotic_metrics(
    spec: &ExperimentSpec,
    c: &ScenarioConfig,
    meas: &fim::MeasurementFim,
    prior: &fim::PriorFim,
    value: f64,
) -> Result<RunMetrics> {
    let k = run_constants(c, meas, prior)?;
    let horizon = spec.horizon(c);
    let mut out = Vec::new();
    let report = if spec.kind == ExperimentKind::AsymptoticSpatial {
        if value < 1.0 {
            asymptotics::limit_spatial_zero(&k)?
        } else {
            asymptotics::limit_spatial_inf(&k)?
        }
    } else if value < 1.0 {
        // Weak temporal coupling has no closed form; only the series is reported.
        state_metrics(&mut out, &constant_recursion(&k, horizon)?);
        return Ok(out);
    } else {
        let r = asymptotics::limit_temporal_inf(&k, horizon)?;
        let g = r.temporal.as_ref().expect("temporal growth");
        out.push((("slope_gap", None, None), g.slope_gap.iter().cloned().fold(0.0, f64::max)));
        out.push((("ratio_spread", None, None), g.ratio_spread.iter().cloned().fold(0.0, f64::max)));
        r
    };
    let theory = report.per_user.iter().map(|u| pred_bound(&u.predicted)).sum::<f64>() / report.per_user.len() as f64;
    out.push((("theory_bcrb", None, None), theory));
    out.push((("limit_gap", None, None), report.max_gap()));
    state_metrics(&mut out, &constant_recursion(&k, horizon)?);
    Ok(out)
}

fn pred_bound(m: &Mat2) -> f64 {
    linalg::inv2_spd(m).map_or(f64::INFINITY, |i| 0.5 * i.trace())
}
