//! Command-line front end.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 integration
//! blow-up (partial output retained), 3 matching condition violated.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{ModelSource, RunConfig};
use crate::dynamics::{conserved_drift_halving, heun_path, rk4_integrate, ReducedState, System, Trajectory};
use crate::error::{Error, Result};
use crate::matching::{choose_s, matching_report, matching_residual, synthesize_controlled, DEFAULT_MATCHING_TOL};
use crate::model::SemidirectModel;
use crate::satellite::{linearize_middle_axis, stability_window, stabilization_demo_with, DemoOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_BLOW_UP: i32 = 2;
pub const EXIT_MATCHING: i32 = 3;

/// Environment variable overriding the configured seed.
pub const SEED_ENV: &str = "SYMACT_SEED";

#[derive(Debug, Parser)]
#[command(name = "symact", version, about = "Symmetry-actuating feedback on semidirect products")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file (stdout when absent and the config names none).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Matching tolerance.
    #[arg(long, global = true)]
    tolerance: Option<f64>,
    /// Worker threads for sweeps and ensembles.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate one trajectory and write it as CSV.
    Simulate,
    /// Check the matching condition and report the controlled data.
    Match,
    /// Middle-axis stability of the satellite over a set of gains.
    Stability,
    /// Simulate over a grid of gain parameters.
    Sweep,
    /// Stratonovich ensemble with conserved-drift statistics.
    Stochastic,
}

enum Outcome {
    Done,
    BlowUp(f64),
    MatchingFailed(f64),
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(Outcome::Done) => EXIT_OK,
        Ok(Outcome::BlowUp(t)) => {
            eprintln!("error: state blew up after t = {t}; partial output written");
            EXIT_BLOW_UP
        }
        Ok(Outcome::MatchingFailed(r)) => {
            eprintln!("matching condition violated: residual {r:.3e}");
            EXIT_MATCHING
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

fn seed_override() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::config(SEED_ENV, format!("expected a nonnegative integer, got {s:?}"))),
        Err(_) => Ok(None),
    }
}

fn execute(cli: &Cli) -> Result<Outcome> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::config("--threads", "must be at least 1"));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::config("--config", "a configuration file is required"))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
    let cfg = RunConfig::from_json_str(&text, seed_override()?)
        .map_err(|e| match e {
            Error::Config { path: p, message } => Error::config(format!("{}: {p}", path.display()), message),
            other => other,
        })?;
    if let Some(t) = cli.tolerance {
        if t.is_nan() || t < 0.0 {
            return Err(Error::config("--tolerance", format!("must be nonnegative, got {t}")));
        }
    }
    let out = cli.out.clone().or_else(|| cfg.out.as_ref().map(PathBuf::from));
    let sink = Sink(out);
    let tolerance = cli.tolerance.or(cfg.tolerance).unwrap_or(DEFAULT_MATCHING_TOL);
    match cli.command {
        Command::Simulate => simulate(&cfg, &sink, tolerance),
        Command::Match => match_cmd(&cfg, &sink, tolerance),
        Command::Stability => stability(&cfg, &sink),
        Command::Sweep => sweep(&cfg, &sink),
        Command::Stochastic => stochastic(&cfg, &sink),
    }
}

struct Sink(Option<PathBuf>);

impl Sink {
    fn write(&self, bytes: &[u8]) -> Result<()> {
        match &self.0 {
            Some(path) => write_atomic(path, bytes),
            None => {
                let mut stdout = std::io::stdout().lock();
                stdout.write_all(bytes)?;
                Ok(stdout.flush()?)
            }
        }
    }

    fn write_json(&self, value: &Value) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("json values serialize");
        text.push('\n');
        self.write(text.as_bytes())
    }
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::config(path.display().to_string(), "not a file path"))?;
    let mut tmp_name = OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })?;
    Ok(())
}

fn initial_state(cfg: &RunConfig, model: &SemidirectModel) -> Result<ReducedState> {
    let (nu0, qt0) = cfg.initial_momenta()?;
    let s = ReducedState::new(nu0, qt0);
    if cfg.track_group {
        s.with_identity_group(model.algebra())
    } else {
        Ok(s)
    }
}

fn csv_bytes(traj: &Trajectory) -> Vec<u8> {
    let mut buf = Vec::new();
    traj.write_csv(&mut buf).expect("writing to memory");
    buf
}

fn integrate(system: &System, state: ReducedState, dt: f64, t_end: f64) -> Result<(Trajectory, Option<f64>)> {
    match rk4_integrate(system, state, dt, t_end) {
        Ok(t) => Ok((t, None)),
        Err(Error::BlowUp { last_valid_time, partial }) => Ok((*partial, Some(last_valid_time))),
        Err(e) => Err(e),
    }
}

fn simulate(cfg: &RunConfig, sink: &Sink, tolerance: f64) -> Result<Outcome> {
    let model = cfg.model.build()?;
    let state = initial_state(cfg, &model)?;
    let (traj, blew_up) = if cfg.controlled {
        let residual = matching_residual(&model)?;
        if residual > tolerance {
            return Ok(Outcome::MatchingFailed(residual));
        }
        let cd = synthesize_controlled(&model, &choose_s(&model)?.s)?;
        let mapped = ReducedState {
            nu: &cd.phi_c * &state.nu,
            qt: &cd.s * &state.qt,
            group: state.group,
        };
        integrate(&System::Controlled(&model, &cd), mapped, cfg.dt, cfg.t_end)?
    } else {
        integrate(&System::Forced(&model), state, cfg.dt, cfg.t_end)?
    };
    sink.write(&csv_bytes(&traj))?;
    Ok(blew_up.map_or(Outcome::Done, Outcome::BlowUp))
}

fn match_cmd(cfg: &RunConfig, sink: &Sink, tolerance: f64) -> Result<Outcome> {
    let model = cfg.model.build()?;
    let report = matching_report(&model, tolerance)?;
    sink.write_json(&report.to_json())?;
    Ok(if report.satisfied {
        Outcome::Done
    } else {
        Outcome::MatchingFailed(report.residual)
    })
}

fn stability(cfg: &RunConfig, sink: &Sink) -> Result<Outcome> {
    let params = cfg
        .model
        .satellite_params()
        .ok_or_else(|| Error::config("$.model", "stability requires the satellite model"))?;
    let st = &cfg.stability;
    let opts = DemoOptions {
        dt: st.dt,
        omega_bar: st.omega_bar,
        seed: cfg.seed,
    };
    let samples = st
        .k_values
        .par_iter()
        .map(|&k| {
            let p = params.with_k(k);
            let lin = linearize_middle_axis(&p, st.omega_bar)?;
            let demo = stabilization_demo_with(&p, k, st.perturbation, st.t_end, &opts)?;
            Ok(json!({
                "k": k,
                "spectral_abscissa": lin.spectral_abscissa,
                "bounded": demo.bounded,
                "max_excursion": demo.max_excursion,
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    let (k_lo, k_hi) = stability_window(&params);
    sink.write_json(&json!({ "k_lo": k_lo, "k_hi": k_hi, "samples": samples }))?;
    Ok(Outcome::Done)
}

fn sweep_cell(cfg: &RunConfig, source: &ModelSource, index: usize, value: f64) -> Result<(Value, bool)> {
    let model = source.build()?;
    let state = initial_state(cfg, &model)?;
    let (traj, blew_up) = integrate(&System::Forced(&model), state, cfg.dt, cfg.t_end)?;
    if let Some(dir) = cfg.sweep.as_ref().and_then(|s| s.cell_dir.as_ref()) {
        write_atomic(&Path::new(dir).join(format!("cell_{index:04}.csv")), &csv_bytes(&traj))?;
    }
    let last = traj.last();
    let cell = json!({
        "index": index,
        source.parameter_name(): value,
        "matching_residual": matching_residual(&model)?,
        "max_conserved_drift": traj.max_conserved_drift(),
        "max_energy_drift": traj.max_energy_drift(),
        "final_time": traj.times.last(),
        "final_nu": last.nu.as_slice(),
        "final_qt": last.qt.as_slice(),
        "blew_up": blew_up.is_some(),
    });
    Ok((cell, blew_up.is_some()))
}

fn sweep(cfg: &RunConfig, sink: &Sink) -> Result<Outcome> {
    let sw = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::config("$.sweep", "sweep requires a \"sweep\" block"))?;
    if let Some(dir) = &sw.cell_dir {
        std::fs::create_dir_all(dir)?;
    }
    let cells = sw
        .values
        .par_iter()
        .enumerate()
        .map(|(i, &x)| sweep_cell(cfg, &cfg.model.with_parameter(x)?, i, x))
        .collect::<Result<Vec<_>>>()?;
    let any_blow_up = cells.iter().any(|c| c.1);
    let cells: Vec<Value> = cells.into_iter().map(|c| c.0).collect();
    sink.write_json(&json!({
        "parameter": cfg.model.parameter_name(),
        "dt": cfg.dt,
        "t_end": cfg.t_end,
        "cells": cells,
    }))?;
    Ok(if any_blow_up {
        Outcome::BlowUp(f64::NAN)
    } else {
        Outcome::Done
    })
}

fn stochastic(cfg: &RunConfig, sink: &Sink) -> Result<Outcome> {
    let st = cfg
        .stochastic
        .as_ref()
        .ok_or_else(|| Error::config("$.noise", "stochastic requires noise channels"))?;
    let model = cfg.model.build()?;
    let state = initial_state(cfg, &model)?;
    let steps = (st.t_end / st.dt).round() as usize;
    let zero = vec![vec![0.0; st.noise.channels().len()]; steps];
    let eps: Vec<f64> = st.noise.channels().iter().map(|c| c.epsilon).collect();
    let deterministic = heun_path(&System::Forced(&model), state.clone(), &eps, st.dt, &zero)?;
    let study = match conserved_drift_halving(&model, &state, &st.noise, st.dt, st.t_end, st.n_paths) {
        Ok(s) => s,
        Err(Error::BlowUp { last_valid_time, .. }) => return Ok(Outcome::BlowUp(last_valid_time)),
        Err(e) => return Err(e),
    };
    sink.write_json(&json!({
        "n_paths": st.n_paths,
        "t_end": st.t_end,
        "channels": st.noise.channels(),
        "dt": study.coarse_dt,
        "mean_drift": study.coarse_mean,
        "max_drift": study.coarse_max,
        "half_dt": study.fine_dt,
        "half_dt_mean_drift": study.fine_mean,
        "half_dt_max_drift": study.fine_max,
        "halving_ratio": study.ratio,
        "deterministic_drift": deterministic.conserved_drift().last(),
    }))?;
    Ok(Outcome::Done)
}
