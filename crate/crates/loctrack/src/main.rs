use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use loctrack::figures::{self, Figure};
use loctrack::harness::{self, ExperimentSpec, ResultTable};
use loctrack::{io, Error};
use loctrack_core::scenario::{self, PriorModel, SamplerOptions, Trajectory};
use loctrack_core::{coupling, fim, recursive};

#[derive(Parser)]
#[command(name = "loctrack", version, about = "Bounds and coupling analysis for RIS-assisted tracking")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a Monte Carlo campaign and write results.csv and manifest.json.
    Run {
        spec: PathBuf,
        /// Overrides the experiment's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also emit these figure panels into the output directory.
        #[arg(long, value_enum)]
        figure: Vec<Figure>,
    },
    /// Check a scenario file; exits with 2 when it is invalid.
    Validate { scenario: PathBuf },
    /// Stationary point of the recursion for constant `{"M": .., "T": ..}`.
    Stationary {
        constants: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cut a figure panel out of a result table.
    Emit {
        table: PathBuf,
        #[arg(long, value_enum)]
        figure: Figure,
        /// Defaults to the table's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Single-run dump of every intermediate: trajectory, channel, bounds, EoC, EFIM, PTPM, recursion.
    Inspect {
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Keep users at their initial positions instead of sampling.
        #[arg(long)]
        initial: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::InvalidScenario(_)) | Some(Error::InvalidSpec(_)) => 2,
        Some(Error::Aborted { .. }) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(cmd: Cmd) -> anyhow::Result<u8> {
    match cmd {
        Cmd::Run { spec, out, figure } => run(&spec, out, &figure),
        Cmd::Validate { scenario } => {
            let c = io::read_scenario(&scenario)?;
            let report = scenario::validate(&c);
            if report.is_ok() {
                println!("ok");
                return Ok(0);
            }
            for v in &report.violations {
                println!("{v}");
            }
            Ok(2)
        }
        Cmd::Stationary { constants, out } => {
            let text = fs::read_to_string(&constants).with_context(|| constants.display().to_string())?;
            let input: io::StationaryInput = serde_json::from_str(&text)?;
            let (m, t) = input.matrices()?;
            let sp = recursive::stationary_point(&m, &t).map_err(Error::from)?;
            let json = serde_json::to_string_pretty(&io::StationaryJson::from(&sp))? + "\n";
            match out {
                Some(p) => fs::write(&p, json).with_context(|| p.display().to_string())?,
                None => print!("{json}"),
            }
            Ok(0)
        }
        Cmd::Emit { table, figure, out } => {
            let t = ResultTable::load(&table)?;
            let dir = out.unwrap_or_else(|| table.parent().unwrap_or(Path::new(".")).to_path_buf());
            for p in figures::emit_figure_data(&t, figure, &dir)? {
                println!("{}", p.display());
            }
            Ok(0)
        }
        Cmd::Inspect { scenario, seed, initial, out } => inspect(&scenario, seed, initial, &out),
    }
}

fn run(path: &Path, out: Option<PathBuf>, figs: &[Figure]) -> anyhow::Result<u8> {
    let (spec, base) = ExperimentSpec::load(path)?;
    let dir = out.unwrap_or_else(|| spec.output_dir.clone());
    let table = match harness::run_experiment(&spec, &base) {
        Ok(t) => t,
        Err(Error::Aborted { failed, total, manifest }) => {
            harness::write_manifest(&dir, &manifest)?;
            return Err(Error::Aborted { failed, total, manifest }.into());
        }
        Err(e) => return Err(e.into()),
    };
    table.save(&dir)?;
    if !table.manifest.failures.is_empty() {
        eprintln!("{} of {} runs failed, see manifest", table.manifest.failures.len(), table.manifest.runs_total);
    }
    for f in figs {
        for p in figures::emit_figure_data(&table, *f, &dir)? {
            println!("{}", p.display());
        }
    }
    println!("{}", dir.join(harness::TABLE_FILE).display());
    Ok(0)
}

fn create(dir: &Path, name: &str) -> anyhow::Result<fs::File> {
    let p = dir.join(name);
    fs::File::create(&p).with_context(|| p.display().to_string())
}

fn inspect(path: &Path, seed: u64, initial: bool, dir: &Path) -> anyhow::Result<u8> {
    let c = io::read_scenario(path)?;
    let report = scenario::validate(&c);
    if !report.is_ok() {
        return Err(Error::InvalidScenario(report.violations).into());
    }
    fs::create_dir_all(dir)?;
    let traj = if initial {
        Trajectory::stationary(&c)
    } else {
        scenario::sample_trajectory_with(&c, seed, &SamplerOptions::with_mcmc()).map_err(Error::from)?
    };
    io::write_trajectory(create(dir, "trajectory.csv")?, &traj)?;
    io::write_channel_gains(create(dir, "channel.csv")?, &c, &traj)?;

    let meas = fim::measurement_fim(&c, &traj).map_err(Error::from)?;
    let model = PriorModel::from_config(&c).map_err(Error::from)?;
    let prior = fim::prior_fim(&model, std::slice::from_ref(&traj)).map_err(Error::from)?;
    let efim = fim::assemble_efim(&meas, &prior).map_err(Error::from)?;
    io::write_block_matrix_csv(create(dir, "efim.csv")?, &efim)?;
    io::write_block_matrix_bin(create(dir, "efim.bin")?, &efim)?;
    io::write_bcrb(create(dir, "bcrb.csv")?, &fim::bcrb(&efim).map_err(Error::from)?)?;

    let split = coupling::split_d_a(&efim, &meas, &prior).map_err(Error::from)?;
    let ptpm = coupling::build_ptpm(&split).map_err(Error::from)?;
    io::write_ptpm(create(dir, "ptpm.csv")?, &ptpm)?;
    if ptpm.spectral_radius < 1.0 {
        let r = coupling::eoc_report(&efim, &split, &ptpm).map_err(Error::from)?;
        io::write_eoc(create(dir, "eoc.csv")?, &r)?;
    } else {
        eprintln!("spectral radius {} >= 1, eoc.csv skipped", ptpm.spectral_radius);
    }
    let states = recursive::run_recursion(&meas, &prior).map_err(Error::from)?;
    io::write_recursion(create(dir, "recursion.csv")?, &states)?;
    println!("{}", dir.display());
    Ok(0)
}
