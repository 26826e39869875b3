//! `aquactl`: run growth-control scenarios from the command line.
//!
//! Exit status 1 means the configuration was rejected (the message names
//! the key); 2 means a run failed (the message names the time step).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aquactl::Reference;
use aquactl_harness::config::{ConfigError, ControllerKind, Scenario};
use aquactl_harness::csvio::{read_qtable, write_learning_curve, write_qtable, write_trajectory};
use aquactl_harness::report::text_table;
use aquactl_harness::run::{self, RunError};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aquactl", version, about = "Fish-growth simulation and feeding control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file (TOML). Built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "AQUACTL_OUT")]
    out: Option<PathBuf>,
    /// Suppress the summary table.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario's controller and write its trajectory and report.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Run this controller instead of `controller.kind`.
        #[arg(long)]
        controller: Option<String>,
        /// Q-table CSV to use instead of training (qlearning, rlmpc).
        #[arg(long)]
        qtable: Option<PathBuf>,
    },
    /// Write the nominal reference trajectory.
    Reference {
        #[command(flatten)]
        common: Common,
    },
    /// Train the tabular Q-learning agent and write its table.
    TrainQ {
        #[command(flatten)]
        common: Common,
    },
    /// Run the receding-horizon controller.
    RunMpc {
        #[command(flatten)]
        common: Common,
    },
    /// Run the MPC-driven Q-learning hybrid.
    RunRlmpc {
        #[command(flatten)]
        common: Common,
        /// Starting Q-table CSV.
        #[arg(long)]
        qtable: Option<PathBuf>,
    },
    /// Run several controllers on one scenario and tabulate their metrics.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated controller names.
        #[arg(long, value_delimiter = ',', default_value = "constant,pid,mpc")]
        controller: Vec<String>,
    },
    /// Print (or write to PATH) the full default scenario.
    ExportDefaults { path: Option<PathBuf> },
}

enum Failure {
    Config(String),
    Run(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        Failure::Run(e.to_string())
    }
}

impl From<aquactl_harness::csvio::CsvError> for Failure {
    fn from(e: aquactl_harness::csvio::CsvError) -> Self {
        Failure::Run(e.to_string())
    }
}

fn load(common: &Common) -> Result<(Scenario, PathBuf), Failure> {
    let mut s = match &common.config {
        Some(path) => Scenario::load(path)?,
        None => Scenario::default(),
    };
    if let Some(seed) = common.seed {
        s = s.with_seed(seed);
    }
    let out = common
        .out
        .clone()
        .or_else(|| s.run.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    run::ensure_dir(&out)?;
    Ok((s, out))
}

fn parse_kind(name: &str) -> Result<ControllerKind, Failure> {
    ControllerKind::parse(name).ok_or_else(|| {
        let known: Vec<&str> = ControllerKind::ALL.iter().map(|k| k.as_str()).collect();
        Failure::Config(format!(
            "invalid `controller`: unknown controller {name:?} (known: {})",
            known.join(", ")
        ))
    })
}

fn announce(common: &Common, paths: &[PathBuf]) {
    if !common.quiet {
        for p in paths {
            println!("wrote {}", p.display());
        }
    }
}

fn single(common: &Common, kind: ControllerKind, qtable: Option<&Path>) -> Result<(), Failure> {
    let (s, out) = load(common)?;
    let reference = Reference::from_trajectory(&run::reference(&s)?, s.run.dt);
    let table = match qtable {
        Some(path) => {
            let (ns, na) = match kind {
                ControllerKind::Rlmpc => (s.controller.rlmpc.grid.bins, s.controller.rlmpc.feed_levels.len()),
                _ => {
                    let mdp = &s.controller.qlearning.mdp;
                    (mdp.n_states(), mdp.n_actions())
                }
            };
            Some(read_qtable(path, ns, na)?)
        }
        None => None,
    };
    let result = run::run_controller(&s, kind, &reference, table)?;
    let paths = run::write_run(&out, &s, &result)?;
    if !common.quiet {
        print!(
            "{}",
            text_table(std::slice::from_ref(&result.report), Some(&[result.seconds]))
        );
    }
    announce(common, &paths);
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate {
            common,
            controller,
            qtable,
        } => {
            let kind = match controller {
                Some(name) => parse_kind(&name)?,
                None => {
                    let (s, _) = load(&common)?;
                    s.controller.kind
                }
            };
            single(&common, kind, qtable.as_deref())
        }
        Command::RunMpc { common } => single(&common, ControllerKind::Mpc, None),
        Command::RunRlmpc { common, qtable } => single(&common, ControllerKind::Rlmpc, qtable.as_deref()),
        Command::Reference { common } => {
            let (s, out) = load(&common)?;
            let path = run::trajectory_path(&out, &s.run.name, "reference");
            write_trajectory(&run::reference(&s)?, &path)?;
            announce(&common, &[path]);
            Ok(())
        }
        Command::TrainQ { common } => {
            let (s, out) = load(&common)?;
            let t = run::train_q(&s);
            let q_path = out.join(format!("{}_qtable.csv", s.run.name));
            let curve_path = out.join(format!("{}_learning.csv", s.run.name));
            write_qtable(&t.table, &q_path)?;
            write_learning_curve(&run::learning_curve(&s, &t), &curve_path)?;
            if !common.quiet {
                println!(
                    "{} episodes, {}",
                    t.episodes,
                    if t.converged {
                        "greedy policy settled"
                    } else {
                        "stopped at max_episodes before the policy settled"
                    }
                );
            }
            announce(&common, &[q_path, curve_path]);
            Ok(())
        }
        Command::Compare { common, controller } => {
            let kinds = controller
                .iter()
                .map(|n| parse_kind(n))
                .collect::<Result<Vec<_>, _>>()?;
            let (s, out) = load(&common)?;
            let (reference, runs) = run::compare(&s, &kinds)?;
            let paths = run::write_compare(&out, &s, &reference, &runs)?;
            if !common.quiet {
                let reports: Vec<_> = runs.iter().map(|r| r.report.clone()).collect();
                let seconds: Vec<f64> = runs.iter().map(|r| r.seconds).collect();
                print!("{}", text_table(&reports, Some(&seconds)));
            }
            announce(&common, &paths);
            Ok(())
        }
        Command::ExportDefaults { path } => {
            let text = Scenario::default().to_toml();
            match path {
                Some(p) => std::fs::write(&p, text).map_err(|e| Failure::Run(format!("{}: {e}", p.display()))),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
