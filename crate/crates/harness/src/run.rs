//! Running scenarios under one or several controllers and writing outputs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use aquactl::classical::Classical;
use aquactl::mpc::MpcController;
use aquactl::qlearning::{explore_probability, train, GrowthEnv, QPolicy, QTable, TraceEvent, Training};
use aquactl::rlmpc::RlMpc;
use aquactl::sim::{reference_trajectory, simulate, ConstantFeed, SimError};
use aquactl::{Controller, Reference, Trajectory};
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ControllerKind, Scenario};
use crate::csvio::{write_learning_curve, write_qtable, write_trajectory, CsvError};
use crate::report::{text_table, write_reports, MetricContext, RunReport};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{controller}: {source}")]
    Sim { controller: String, source: SimError },
    #[error(transparent)]
    Output(#[from] CsvError),
    #[error("cannot create output directory {path}: {source}")]
    OutDir { path: String, source: std::io::Error },
}

impl RunError {
    /// Time-step index of a simulation failure.
    pub fn step(&self) -> Option<usize> {
        match self {
            RunError::Sim { source, .. } => source.step(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub kind: ControllerKind,
    pub trajectory: Trajectory,
    pub report: RunReport,
    pub seconds: f64,
    /// Learned table (Q-learning and RL-MPC runs).
    pub table: Option<QTable>,
    pub training: Option<Training>,
}

fn sim_err(kind: ControllerKind) -> impl Fn(SimError) -> RunError {
    move |source| RunError::Sim {
        controller: kind.as_str().to_string(),
        source,
    }
}

pub fn metric_context(s: &Scenario) -> MetricContext {
    MetricContext {
        r_frac: s.model.params.r_frac,
        stocked_per_day: s.model.stocking.fish_per_day,
    }
}

/// The nominal trajectory at `run.f_ref` under optimal conditions.
pub fn reference(s: &Scenario) -> Result<Trajectory, RunError> {
    reference_trajectory(&s.simulation(), s.run.f_ref).map_err(|source| RunError::Sim {
        controller: "reference".into(),
        source,
    })
}

pub fn growth_env(s: &Scenario) -> GrowthEnv {
    let sim = s.simulation();
    GrowthEnv::new(
        s.controller.qlearning.mdp.clone(),
        sim.plant,
        sim.profile,
        sim.t0,
        Some(sim.initial),
    )
}

/// Trains the tabular agent against the scenario's growth model.
pub fn train_q(s: &Scenario) -> Training {
    let mut env = growth_env(s);
    train(&mut env, &s.controller.qlearning.learning, s.run.seed)
}

/// (episode, exploration probability, return) rows of a training run.
pub fn learning_curve(s: &Scenario, t: &Training) -> Vec<(usize, f64, f64)> {
    t.trace
        .iter()
        .filter_map(|e| match e {
            TraceEvent::Episode {
                index, episode_return, ..
            } => Some((
                *index,
                explore_probability(*index, &s.controller.qlearning.learning),
                *episode_return,
            )),
            _ => None,
        })
        .collect()
}

/// Runs one controller. A Q-learning run trains first unless `table` is
/// given.
pub fn run_controller(
    s: &Scenario,
    kind: ControllerKind,
    reference: &Reference,
    table: Option<QTable>,
) -> Result<RunOutput, RunError> {
    let sim = s.simulation();
    let c = &s.controller;
    let start = Instant::now();
    let mut training = None;
    let (trajectory, table) = match kind {
        ControllerKind::Qlearning => {
            let table = match table {
                Some(t) => t,
                None => {
                    let t = train_q(s);
                    let table = t.table.clone();
                    training = Some(t);
                    table
                }
            };
            let mut ctl = QPolicy::new(c.qlearning.mdp.clone(), table.clone());
            let traj = simulate(&sim, Some(reference), &mut ctl).map_err(sim_err(kind))?;
            (traj, Some(table))
        }
        ControllerKind::Rlmpc => {
            let mut ctl = match table {
                Some(t) => RlMpc::with_table(c.rlmpc.clone(), t),
                None => RlMpc::new(c.rlmpc.clone()),
            };
            let traj = simulate(&sim, Some(reference), &mut ctl).map_err(sim_err(kind))?;
            (traj, Some(ctl.table))
        }
        _ => {
            let mut ctl: Box<dyn Controller> = match kind {
                ControllerKind::Constant => Box::new(ConstantFeed { f: c.constant.f }),
                ControllerKind::Bangbang => Box::new(Classical::bang_bang(&c.bangbang)),
                ControllerKind::Pid => Box::new(Classical::pid(&c.pid)),
                _ => Box::new(MpcController::new(c.mpc.clone())),
            };
            (
                simulate(&sim, Some(reference), ctl.as_mut()).map_err(sim_err(kind))?,
                None,
            )
        }
    };
    let seconds = start.elapsed().as_secs_f64();
    let report = RunReport::compute(kind.as_str(), &trajectory, Some(reference), metric_context(s));
    Ok(RunOutput {
        kind,
        trajectory,
        report,
        seconds,
        table,
        training,
    })
}

/// Runs every controller on the same scenario (and so the same
/// environment realization), in parallel, returning results in input order.
pub fn compare(s: &Scenario, kinds: &[ControllerKind]) -> Result<(Trajectory, Vec<RunOutput>), RunError> {
    let reference_traj = reference(s)?;
    let r = Reference::from_trajectory(&reference_traj, s.run.dt);
    let runs = kinds
        .par_iter()
        .map(|&k| run_controller(s, k, &r, None))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((reference_traj, runs))
}

pub fn ensure_dir(dir: &Path) -> Result<(), RunError> {
    std::fs::create_dir_all(dir).map_err(|source| RunError::OutDir {
        path: dir.display().to_string(),
        source,
    })
}

pub fn trajectory_path(dir: &Path, name: &str, label: &str) -> PathBuf {
    dir.join(format!("{name}_{label}.csv"))
}

/// Writes the trajectory, report and any learned table of one run.
pub fn write_run(dir: &Path, s: &Scenario, run: &RunOutput) -> Result<Vec<PathBuf>, RunError> {
    let name = &s.run.name;
    let label = run.kind.as_str();
    let mut paths = vec![trajectory_path(dir, name, label)];
    write_trajectory(&run.trajectory, &paths[0])?;
    let report = dir.join(format!("{name}_{label}_report.csv"));
    write_reports(std::slice::from_ref(&run.report), &report)?;
    paths.push(report);
    if let Some(t) = &run.table {
        let p = dir.join(format!("{name}_{label}_qtable.csv"));
        write_qtable(t, &p)?;
        paths.push(p);
    }
    if let Some(t) = &run.training {
        let p = dir.join(format!("{name}_{label}_learning.csv"));
        write_learning_curve(&learning_curve(s, t), &p)?;
        paths.push(p);
    }
    Ok(paths)
}

/// Writes all trajectories plus `<name>_compare.csv` and `.txt`.
pub fn write_compare(
    dir: &Path,
    s: &Scenario,
    reference: &Trajectory,
    runs: &[RunOutput],
) -> Result<Vec<PathBuf>, RunError> {
    let name = &s.run.name;
    let mut paths = vec![trajectory_path(dir, name, "reference")];
    write_trajectory(reference, &paths[0])?;
    for run in runs {
        let p = trajectory_path(dir, name, run.kind.as_str());
        write_trajectory(&run.trajectory, &p)?;
        paths.push(p);
    }
    let reports: Vec<RunReport> = runs.iter().map(|r| r.report.clone()).collect();
    let csv_path = dir.join(format!("{name}_compare.csv"));
    write_reports(&reports, &csv_path)?;
    let txt_path = dir.join(format!("{name}_compare.txt"));
    std::fs::write(&txt_path, text_table(&reports, None)).map_err(CsvError::from)?;
    paths.push(csv_path);
    paths.push(txt_path);
    Ok(paths)
}
