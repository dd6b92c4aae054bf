//! Per-figure CSV panels cut from a result table. Data only, no plotting.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use loctrack_core::asymptotics::{LARGE_PRECISION, SMALL_PRECISION};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{ExperimentKind, Parameter, ResultRow, ResultTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Figure {
    /// `t,k,x,y`
    Fig3,
    /// `snr_db,sigma_s_inv2,eoc_mean,bcrb_mean`
    Fig4,
    /// `snr_db,sigma_t_inv2,eoc_mean,bcrb_mean`
    Fig5,
    /// `num_ris,beamforming,eoc_mean,bcrb_mean`
    Fig6,
    /// `t,sigma_t_inv2,condition_satisfied,slack`
    Fig7,
    /// `t,sigma_t_inv2,bcrb_mean,eoc_mean,theory_bcrb_star`
    Fig8,
    /// `t,regime,bcrb_mean,eoc_mean`
    Fig9,
    /// `t,regime,bcrb_mean,eoc_mean`
    Fig10,
}

impl Figure {
    pub fn name(self) -> &'static str {
        match self {
            Figure::Fig3 => "fig3",
            Figure::Fig4 => "fig4",
            Figure::Fig5 => "fig5",
            Figure::Fig6 => "fig6",
            Figure::Fig7 => "fig7",
            Figure::Fig8 => "fig8",
            Figure::Fig9 => "fig9",
            Figure::Fig10 => "fig10",
        }
    }

    fn kind(self) -> ExperimentKind {
        match self {
            Figure::Fig3 => ExperimentKind::Trajectory,
            Figure::Fig4 | Figure::Fig5 => ExperimentKind::EocVsSnr,
            Figure::Fig6 => ExperimentKind::EocVsNumRis,
            Figure::Fig7 | Figure::Fig8 => ExperimentKind::EpConvergence,
            Figure::Fig9 => ExperimentKind::AsymptoticSpatial,
            Figure::Fig10 => ExperimentKind::AsymptoticTemporal,
        }
    }

    /// Expected sweep and series parameters.
    fn parameters(self) -> (Option<Parameter>, Option<Parameter>) {
        match self {
            Figure::Fig3 => (None, None),
            Figure::Fig4 => (Some(Parameter::SnrDb), Some(Parameter::SigmaSInv2)),
            Figure::Fig5 => (Some(Parameter::SnrDb), Some(Parameter::SigmaTInv2)),
            Figure::Fig6 => (Some(Parameter::NumRis), Some(Parameter::Beamforming)),
            Figure::Fig7 | Figure::Fig8 => (Some(Parameter::SigmaTInv2), None),
            Figure::Fig9 => (Some(Parameter::SigmaSInv2), None),
            Figure::Fig10 => (Some(Parameter::SigmaTInv2), None),
        }
    }
}

fn mismatch(f: Figure, reason: impl Into<String>) -> Error {
    Error::SchemaMismatch { figure: f.name().into(), reason: reason.into() }
}

fn check(table: &ResultTable, f: Figure) -> Result<()> {
    if table.rows.is_empty() {
        return Err(mismatch(f, "table is empty"));
    }
    let spec = &table.manifest.spec;
    if spec.kind != f.kind() {
        return Err(mismatch(f, format!("needs {:?}, table is {:?}", f.kind(), spec.kind)));
    }
    let (sweep, series) = f.parameters();
    if spec.sweep.as_ref().map(|s| s.parameter) != sweep {
        return Err(mismatch(f, format!("needs sweep over {sweep:?}")));
    }
    if spec.series.as_ref().map(|s| s.parameter) != series {
        return Err(mismatch(f, format!("needs series over {series:?}")));
    }
    Ok(())
}

/// `(series, sweep, t, k) -> metric -> mean`, in table order.
type Index = BTreeMap<(String, Option<u64>, Option<usize>, Option<usize>), BTreeMap<String, f64>>;

fn index(rows: &[ResultRow]) -> Index {
    let mut ix = Index::new();
    for r in rows {
        ix.entry((r.series.clone(), r.sweep_value.map(order_key), r.t, r.k))
            .or_default()
            .insert(r.metric_name.clone(), r.mean);
    }
    ix
}

/// Total order on finite f64 that matches numeric order.
fn order_key(v: f64) -> u64 {
    let b = v.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

fn from_key(k: u64) -> f64 {
    f64::from_bits(if k >> 63 == 1 { k & !(1 << 63) } else { !k })
}

fn get(f: Figure, m: &BTreeMap<String, f64>, name: &str) -> Result<String> {
    m.get(name).map(|v| v.to_string()).ok_or_else(|| mismatch(f, format!("missing metric {name}")))
}

fn regime(kind: ExperimentKind, v: f64) -> String {
    let (zero, inf, col) = match kind {
        ExperimentKind::AsymptoticSpatial => ("spatial-zero", "spatial-inf", "sigma_s_inv2"),
        _ => ("temporal-zero", "temporal-inf", "sigma_t_inv2"),
    };
    if v <= SMALL_PRECISION {
        zero.into()
    } else if v >= LARGE_PRECISION {
        inf.into()
    } else {
        format!("{col}={v}")
    }
}

/// Writes `<figure>.csv` into `dir` and returns its path. Fig. 9 and 10 also
/// get `<figure>_theory.csv` with the closed-form bounds per regime.
pub fn emit_figure_data(table: &ResultTable, f: Figure, dir: &Path) -> Result<Vec<PathBuf>> {
    check(table, f)?;
    let ix = index(&table.rows);
    let mut main = csv::Writer::from_writer(Vec::new());
    let mut theory: Option<csv::Writer<Vec<u8>>> = None;
    let sv = |k: &Option<u64>| k.map(from_key).map(|v| v.to_string()).unwrap_or_default();
    match f {
        Figure::Fig3 => {
            main.write_record(["t", "k", "x", "y"])?;
            for ((_, _, t, k), m) in &ix {
                if let (Some(t), Some(k)) = (t, k) {
                    main.write_record([t.to_string(), k.to_string(), get(f, m, "x")?, get(f, m, "y")?])?;
                }
            }
        }
        Figure::Fig4 | Figure::Fig5 | Figure::Fig6 => {
            let (a, b) = f.parameters();
            main.write_record([a.unwrap().column(), b.unwrap().column(), "eoc_mean", "bcrb_mean"])?;
            // Series-major so each curve is contiguous.
            for ((series, sweep, t, _), m) in &ix {
                if t.is_none() {
                    main.write_record([sv(sweep), series.clone(), get(f, m, "eoc_mean")?, get(f, m, "bcrb_mean")?])?;
                }
            }
        }
        Figure::Fig7 | Figure::Fig8 => {
            let mut star = BTreeMap::new();
            for ((_, sweep, t, _), m) in &ix {
                if t.is_none() {
                    star.insert(*sweep, get(f, m, "theory_bcrb_star")?);
                }
            }
            if f == Figure::Fig8 {
                main.write_record(["t", "sigma_t_inv2", "bcrb_mean", "eoc_mean", "theory_bcrb_star"])?;
            } else {
                main.write_record(["t", "sigma_t_inv2", "condition_satisfied", "slack"])?;
            }
            for ((_, sweep, t, _), m) in &ix {
                let Some(t) = t else { continue };
                if f == Figure::Fig8 {
                    let s = star.get(sweep).cloned().unwrap_or_default();
                    main.write_record([t.to_string(), sv(sweep), get(f, m, "bcrb_mean")?, get(f, m, "eoc_mean")?, s])?;
                } else {
                    main.write_record([
                        t.to_string(),
                        sv(sweep),
                        get(f, m, "condition_satisfied")?,
                        get(f, m, "slack")?,
                    ])?;
                }
            }
        }
        Figure::Fig9 | Figure::Fig10 => {
            let kind = f.kind();
            main.write_record(["t", "regime", "bcrb_mean", "eoc_mean"])?;
            let mut th = csv::Writer::from_writer(Vec::new());
            th.write_record(["regime", "theory_bcrb", "limit_gap"])?;
            for ((_, sweep, t, _), m) in &ix {
                let label = regime(kind, sweep.map(from_key).unwrap_or(f64::NAN));
                match t {
                    Some(t) => main.write_record([
                        t.to_string(),
                        label,
                        get(f, m, "bcrb_mean")?,
                        get(f, m, "eoc_user_mean")?,
                    ])?,
                    None => th.write_record([label, get(f, m, "theory_bcrb")?, get(f, m, "limit_gap")?])?,
                }
            }
            theory = Some(th);
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let path = dir.join(format!("{}.csv", f.name()));
    let bytes = main.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    if let Some(th) = theory {
        let path = dir.join(format!("{}_theory.csv", f.name()));
        let bytes = th.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
