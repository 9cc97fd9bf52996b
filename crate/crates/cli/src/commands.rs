//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use qsmooth::compare::convergence_table;
use qsmooth::model::{parse_spec, ExperimentSpec, SystemSpec};
use qsmooth::oracle::{oracle_report, DiscreteModel, DEFAULT_MAX_JOINT_DIM};
use qsmooth::smoother::{smooth_trajectory, Qnd};
use qsmooth::trajectory::{filter_trajectory, simulate_truth, trajectory_rng, TrajectoryRecord};
use rayon::prelude::*;

use crate::error::CliError;
use crate::output::{
    config_hash, read_record, tool_version, trajectory_csv, trajectory_file_name, write_atomic, write_json,
    RunManifest, MANIFEST_NAME,
};
use crate::{Cli, Command, Common, MAX_JOINT_DIM_ENV};

pub const ORACLE_REPORT_NAME: &str = "oracle_report.json";
pub const COMPARE_REPORT_NAME: &str = "compare.json";

/// Files written by a run, manifest last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSummary {
    pub outputs: Vec<PathBuf>,
}

struct Loaded {
    sys: SystemSpec,
    exp: ExperimentSpec,
    hash: String,
}

fn load(common: &Common) -> Result<Loaded, CliError> {
    let path = &common.config;
    let bytes =
        fs::read(path).map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
    let text =
        std::str::from_utf8(&bytes).map_err(|_| CliError::Validation(format!("{}: not UTF-8", path.display())))?;
    let (sys, mut exp) = parse_spec(text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    if let Some(seed) = common.seed {
        exp.seed = seed;
    }
    Ok(Loaded { sys, exp, hash: config_hash(&bytes) })
}

fn joint_dim_cap() -> Result<usize, CliError> {
    match std::env::var(MAX_JOINT_DIM_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&c| c > 0)
            .ok_or_else(|| CliError::Validation(format!("{MAX_JOINT_DIM_ENV}={v:?} is not a positive integer"))),
        Err(std::env::VarError::NotPresent) => Ok(DEFAULT_MAX_JOINT_DIM),
        Err(e) => Err(CliError::Validation(format!("{MAX_JOINT_DIM_ENV}: {e}"))),
    }
}

fn pool(threads: Option<u16>) -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n as usize);
    }
    builder.build().map_err(|e| CliError::Other(e.to_string()))
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn finish(dir: &Path, loaded: &Loaded, command: String, names: Vec<String>) -> Result<RunSummary, CliError> {
    let manifest = RunManifest {
        config_hash: loaded.hash.clone(),
        seed: loaded.exp.seed,
        command,
        outputs: names.clone(),
        tool_version: tool_version(),
    };
    let manifest_path = dir.join(MANIFEST_NAME);
    write_json(&manifest_path, &manifest)?;
    let mut outputs: Vec<PathBuf> = names.iter().map(|n| dir.join(n)).collect();
    outputs.push(manifest_path);
    Ok(RunSummary { outputs })
}

pub fn run(cli: &Cli) -> Result<RunSummary, CliError> {
    let common = cli.command.common();
    let loaded = load(common)?;
    match &cli.command {
        Command::Simulate { .. } => cmd_trajectories(common, &loaded, false, None),
        Command::Smooth { records, .. } => cmd_trajectories(common, &loaded, true, records.as_deref()),
        Command::Oracle { n_steps, .. } => cmd_oracle(common, &loaded, *n_steps),
        Command::Compare { dts, n_steps, .. } => cmd_compare(common, &loaded, dts, *n_steps),
    }
}

/// Record files named by `--records`: one CSV, or every `traj_*.csv` in a directory.
fn record_files(path: &Path) -> Result<Vec<(String, PathBuf)>, CliError> {
    let meta = fs::metadata(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let name_of = |p: &Path| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    if meta.is_file() {
        return Ok(vec![(name_of(path), path.to_path_buf())]);
    }
    let mut files: Vec<(String, PathBuf)> = fs::read_dir(path)
        .map_err(|e| CliError::io(path, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            let n = name_of(p);
            p.is_file() && n.starts_with("traj_") && n.ends_with(".csv")
        })
        .map(|p| (name_of(&p), p))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Validation(format!("{}: no traj_*.csv files", path.display())));
    }
    Ok(files)
}

fn cmd_trajectories(
    common: &Common,
    loaded: &Loaded,
    smooth: bool,
    records: Option<&Path>,
) -> Result<RunSummary, CliError> {
    let Loaded { sys, exp, .. } = loaded;
    let qnd = if smooth { Some(Qnd::check(sys)?) } else { None };
    let sources: Vec<(String, Option<PathBuf>)> = match records {
        Some(path) => record_files(path)?.into_iter().map(|(n, p)| (n, Some(p))).collect(),
        None => (0..exp.n_traj).map(|k| (trajectory_file_name(k), None)).collect(),
    };
    prepare_out(&common.out)?;
    let run_one = |k: usize, source: &Option<PathBuf>| -> Result<Vec<u8>, CliError> {
        let record: TrajectoryRecord = match source {
            Some(path) => read_record(path, exp, exp.seed)?,
            None => simulate_truth(sys, exp, &mut trajectory_rng(exp.seed, k as u64))?,
        };
        let filter = filter_trajectory(&record, sys, exp)?;
        let smoothed = match qnd {
            Some(_) => Some(smooth_trajectory(&record, &filter, sys, exp)?),
            None => None,
        };
        trajectory_csv(exp, &record, &filter, smoothed.as_ref())
    };
    let csvs: Vec<Vec<u8>> = pool(common.threads)?
        .install(|| sources.par_iter().enumerate().map(|(k, (_, src))| run_one(k, src)).collect::<Result<_, _>>())?;
    for ((name, _), bytes) in sources.iter().zip(&csvs) {
        write_atomic(&common.out.join(name), bytes)?;
    }
    let command = if smooth { "smooth" } else { "simulate" };
    finish(&common.out, loaded, command.to_string(), sources.into_iter().map(|(n, _)| n).collect())
}

fn cmd_oracle(common: &Common, loaded: &Loaded, n_steps: usize) -> Result<RunSummary, CliError> {
    let Loaded { sys, exp, .. } = loaded;
    if n_steps == 0 {
        return Err(CliError::Validation("--n-steps must be positive".into()));
    }
    let model = DiscreteModel::build_with_cap(sys, n_steps, exp.dt, joint_dim_cap()?)?;
    let m = exp.tau_step();
    if m > n_steps {
        return Err(CliError::Validation(format!("tau step {m} beyond --n-steps {n_steps}")));
    }
    let report = oracle_report(&model, &exp.observables, m)?;
    prepare_out(&common.out)?;
    write_json(&common.out.join(ORACLE_REPORT_NAME), &report)?;
    finish(&common.out, loaded, format!("oracle --n-steps {n_steps}"), vec![ORACLE_REPORT_NAME.into()])
}

fn cmd_compare(common: &Common, loaded: &Loaded, dts: &[f64], n_steps: usize) -> Result<RunSummary, CliError> {
    let Loaded { sys, exp, .. } = loaded;
    if let Some(bad) = dts.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
        return Err(CliError::Validation(format!("--dts entry {bad} must be positive")));
    }
    if n_steps == 0 {
        return Err(CliError::Validation("--n-steps must be positive".into()));
    }
    let table = convergence_table(sys, &exp.observables, n_steps, 0, dts, joint_dim_cap()?)?;
    prepare_out(&common.out)?;
    write_json(&common.out.join(COMPARE_REPORT_NAME), &table)?;
    let dts_arg = dts.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",");
    finish(
        &common.out,
        loaded,
        format!("compare --dts {dts_arg} --n-steps {n_steps}"),
        vec![COMPARE_REPORT_NAME.into()],
    )
}
