//! CSV persistence for trajectories and Q-tables.
//!
//! Numbers are written with 17 significant digits so a read-back is
//! bit-exact. Absent quantities are empty fields.

use std::io::{Read, Write};
use std::path::Path;

use aquactl::qlearning::QTable;
use aquactl::sim::{ChosenBy, Effects};
use aquactl::{ControlAction, Record, SimState, Trajectory};
use thiserror::Error;

pub const TRAJECTORY_HEADER: [&str; 15] = [
    "t_day",
    "w_kcal",
    "xi_kcal",
    "p_count",
    "f",
    "T_c",
    "DO_mgL",
    "UIA_mgL",
    "tau",
    "sigma",
    "v",
    "k1",
    "reward",
    "J_mpc",
    "chosen_by",
];

pub const QTABLE_HEADER: [&str; 4] = ["state_bin", "action_idx", "q_value", "visits"];

#[derive(Debug, Error)]
pub enum CsvError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("row {row}: {reason}")]
    Row { row: usize, reason: String },
    #[error("expected header {expected:?}")]
    Header { expected: Vec<&'static str> },
    #[error("nothing to write")]
    Empty,
}

pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

fn record_fields(r: &Record) -> [String; 15] {
    let (xi, p) = match r.state {
        SimState::Individual { .. } => (String::new(), String::new()),
        SimState::Population { xi, p } => (fmt_num(xi), p.to_string()),
    };
    let a = r.action;
    [
        fmt_num(r.t),
        opt(r.state.mean_weight()),
        xi,
        p,
        opt(a.map(|a| a.f)),
        opt(a.map(|a| a.temp_c)),
        opt(a.map(|a| a.do_mgl)),
        fmt_num(r.uia_mgl),
        opt(r.effects.tau),
        opt(r.effects.sigma),
        fmt_num(r.effects.v),
        fmt_num(r.effects.k1),
        opt(r.reward),
        opt(r.mpc_cost),
        r.chosen_by.map(|c| c.as_str().to_string()).unwrap_or_default(),
    ]
}

pub fn write_trajectory_to<W: Write>(traj: &Trajectory, out: W) -> Result<(), CsvError> {
    if traj.is_empty() {
        return Err(CsvError::Empty);
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_HEADER)?;
    for r in traj.records() {
        w.write_record(record_fields(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectory(traj: &Trajectory, path: &Path) -> Result<(), CsvError> {
    write_trajectory_to(traj, std::fs::File::create(path)?)
}

fn parse_opt(field: &str, row: usize, name: &str) -> Result<Option<f64>, CsvError> {
    if field.is_empty() {
        return Ok(None);
    }
    field.parse::<f64>().map(Some).map_err(|_| CsvError::Row {
        row,
        reason: format!("bad {name}: {field:?}"),
    })
}

fn parse_req(field: &str, row: usize, name: &str) -> Result<f64, CsvError> {
    parse_opt(field, row, name)?.ok_or_else(|| CsvError::Row {
        row,
        reason: format!("missing {name}"),
    })
}

pub fn read_trajectory_from<R: Read>(input: R) -> Result<Trajectory, CsvError> {
    let mut rd = csv::Reader::from_reader(input);
    if rd.headers()?.iter().ne(TRAJECTORY_HEADER) {
        return Err(CsvError::Header {
            expected: TRAJECTORY_HEADER.to_vec(),
        });
    }
    let mut traj = Trajectory::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let g = |c: usize| rec.get(c).unwrap_or("");
        let state = if g(2).is_empty() {
            SimState::Individual {
                w: parse_req(g(1), i, "w_kcal")?,
            }
        } else {
            SimState::Population {
                xi: parse_req(g(2), i, "xi_kcal")?,
                p: g(3).parse().map_err(|_| CsvError::Row {
                    row: i,
                    reason: format!("bad p_count: {:?}", g(3)),
                })?,
            }
        };
        let action = match (
            parse_opt(g(4), i, "f")?,
            parse_opt(g(5), i, "T_c")?,
            parse_opt(g(6), i, "DO_mgL")?,
        ) {
            (Some(f), Some(t), Some(d)) => Some(ControlAction::new(f, t, d)),
            (None, None, None) => None,
            _ => {
                return Err(CsvError::Row {
                    row: i,
                    reason: "partial action".into(),
                })
            }
        };
        let chosen_by = match g(14) {
            "" => None,
            s => Some(ChosenBy::parse(s).ok_or_else(|| CsvError::Row {
                row: i,
                reason: format!("bad chosen_by: {s:?}"),
            })?),
        };
        let record = Record {
            t: parse_req(g(0), i, "t_day")?,
            state,
            action,
            uia_mgl: parse_req(g(7), i, "UIA_mgL")?,
            effects: Effects {
                tau: parse_opt(g(8), i, "tau")?,
                sigma: parse_opt(g(9), i, "sigma")?,
                v: parse_req(g(10), i, "v")?,
                k1: parse_req(g(11), i, "k1")?,
            },
            reward: parse_opt(g(12), i, "reward")?,
            mpc_cost: parse_opt(g(13), i, "J_mpc")?,
            chosen_by,
        };
        if traj
            .last()
            .is_some_and(|last| last.t.partial_cmp(&record.t) != Some(std::cmp::Ordering::Less))
        {
            return Err(CsvError::Row {
                row: i,
                reason: "time must increase".into(),
            });
        }
        traj.push(record);
    }
    Ok(traj)
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, CsvError> {
    read_trajectory_from(std::fs::File::open(path)?)
}

pub fn write_qtable(table: &QTable, path: &Path) -> Result<(), CsvError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(QTABLE_HEADER)?;
    for s in 0..table.n_states() {
        for a in 0..table.n_actions() {
            w.write_record([
                s.to_string(),
                a.to_string(),
                fmt_num(table.get(s, a)),
                table.visits(s, a).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a table written by [`write_qtable`]; every (state, action) pair
/// of the given dimensions must appear exactly once.
pub fn read_qtable(path: &Path, n_states: usize, n_actions: usize) -> Result<QTable, CsvError> {
    let mut rd = csv::Reader::from_path(path)?;
    if rd.headers()?.iter().ne(QTABLE_HEADER) {
        return Err(CsvError::Header {
            expected: QTABLE_HEADER.to_vec(),
        });
    }
    let len = n_states * n_actions;
    let mut q = vec![f64::NAN; len];
    let mut visits = vec![0u64; len];
    let mut seen = vec![false; len];
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let bad = |reason: &str| CsvError::Row {
            row: i,
            reason: reason.into(),
        };
        let s: usize = rec.get(0).unwrap_or("").parse().map_err(|_| bad("bad state_bin"))?;
        let a: usize = rec.get(1).unwrap_or("").parse().map_err(|_| bad("bad action_idx"))?;
        if s >= n_states || a >= n_actions {
            return Err(bad("index out of range"));
        }
        let idx = s * n_actions + a;
        if std::mem::replace(&mut seen[idx], true) {
            return Err(bad("duplicate entry"));
        }
        q[idx] = parse_req(rec.get(2).unwrap_or(""), i, "q_value")?;
        visits[idx] = rec.get(3).unwrap_or("").parse().map_err(|_| bad("bad visits"))?;
    }
    QTable::from_parts(n_states, n_actions, q, visits).ok_or_else(|| CsvError::Row {
        row: 0,
        reason: "table incomplete or non-finite".into(),
    })
}

/// Episode index, exploration probability and return per training episode.
pub fn write_learning_curve(rows: &[(usize, f64, f64)], path: &Path) -> Result<(), CsvError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["episode", "explore", "return"])?;
    for &(i, eps, ret) in rows {
        w.write_record([i.to_string(), fmt_num(eps), fmt_num(ret)])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use aquactl::sim::{simulate, ConstantFeed};
    use aquactl::{Ambient, EnvProfile, GrowthParams, Plant, SimConfig};

    fn run(initial: SimState) -> Trajectory {
        let cfg = SimConfig {
            t0: 0.0,
            tf: 5.0,
            seed: 3,
            initial,
            profile: EnvProfile::constant(Ambient {
                temp_c: 30.1,
                do_mgl: 4.3,
                uia_mgl: 0.8,
                rho: 1.0,
            }),
            plant: Plant::new(GrowthParams::default(), 0.5),
        };
        simulate(&cfg, None, &mut ConstantFeed { f: 1.0 / 3.0 }).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        for initial in [
            SimState::Individual { w: 71.3 },
            SimState::Population { xi: 9000.0, p: 1234 },
        ] {
            let traj = run(initial);
            let mut buf = Vec::new();
            write_trajectory_to(&traj, &mut buf).unwrap();
            assert_eq!(read_trajectory_from(buf.as_slice()).unwrap(), traj);
        }
    }

    #[test]
    fn individual_rows_leave_population_columns_empty() {
        let mut buf = Vec::new();
        write_trajectory_to(&run(SimState::Individual { w: 10.0 }), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), TRAJECTORY_HEADER.join(","));
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!((first[2], first[3]), ("", ""));
        let last: Vec<&str> = text.lines().last().unwrap().split(',').collect();
        assert_eq!(&last[4..7], &["", "", ""]);
    }

    #[test]
    fn population_deaths_show_in_count_column() {
        let traj = run(SimState::Population { xi: 50_000.0, p: 1000 });
        let mut buf = Vec::new();
        write_trajectory_to(&traj, &mut buf).unwrap();
        let back = read_trajectory_from(buf.as_slice()).unwrap();
        let p: Vec<u64> = back.records().iter().map(|r| r.state.count().unwrap()).collect();
        let k1 = traj.records()[0].effects.k1;
        assert_eq!(p[1] - p[2], (1000.0 * k1).floor() as u64);
        assert_eq!(p[1] - p[2], 497);
    }

    #[test]
    fn rejects_wrong_header() {
        assert!(matches!(
            read_trajectory_from("a,b\n1,2\n".as_bytes()),
            Err(CsvError::Header { .. })
        ));
        let empty = Trajectory::new();
        assert!(matches!(write_trajectory_to(&empty, Vec::new()), Err(CsvError::Empty)));
    }

    #[test]
    fn qtable_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.csv");
        let mut t = QTable::zeros(3, 2);
        aquactl::qlearning::q_update(&mut t, 1, 1, 0.1, 2, false, 0.3, 0.9);
        t.set(2, 0, -1.0 / 3.0);
        write_qtable(&t, &path).unwrap();
        assert_eq!(read_qtable(&path, 3, 2).unwrap(), t);
        assert!(read_qtable(&path, 4, 2).is_err());
    }
}
