use std::path::Path;
use std::process::{Command, Output};

use aquactl::Reference;
use aquactl_harness::config::{ControllerKind, Scenario};
use aquactl_harness::csvio::read_trajectory;
use aquactl_harness::report::RunReport;
use aquactl_harness::run::{metric_context, reference, run_controller};
use sha2::{Digest, Sha256};

/// Trajectory CSV of `simulate` on the exported default scenario.
const GOLDEN_DEFAULT_MPC: &str = "0c1b81285172b593db863bcefc9f4e12ac41fef52b002b97bea72e0c72dd1b5a";

fn aquactl(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aquactl"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("AQUACTL_OUT")
        .output()
        .unwrap()
}

fn sha256(path: &Path) -> String {
    let bytes = std::fs::read(path).unwrap();
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn edit_defaults(dir: &Path, name: &str, edits: &[(&str, &str)]) -> String {
    let mut text = Scenario::default().to_toml();
    for (from, to) in edits {
        assert!(text.contains(from), "{from:?} not in exported defaults");
        text = text.replacen(from, to, 1);
    }
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn exported_defaults_reproduce_golden_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("defaults.toml");
    let status = Command::new(env!("CARGO_BIN_EXE_aquactl"))
        .arg("export-defaults")
        .arg(&cfg)
        .status()
        .unwrap();
    assert!(status.success());
    let o = aquactl(&["simulate", "--quiet", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let digest = sha256(&dir.path().join("default_mpc.csv"));
    assert_eq!(digest, GOLDEN_DEFAULT_MPC);
}

#[test]
fn horizon_violation_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = edit_defaults(dir.path(), "m.toml", &[("M = 3", "M = 12")]);
    let o = aquactl(&["simulate", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("controller.mpc.M"), "{}", stderr(&o));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = edit_defaults(dir.path(), "k.toml", &[("dt = 1.0", "dt = 1.0\nstep = 2")]);
    let o = aquactl(&["simulate", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("step"), "{}", stderr(&o));
}

#[test]
fn compare_is_deterministic_and_shares_the_environment() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let o = aquactl(
            &["compare", "--seed", "7", "--controller", "constant,pid,mpc"],
            dir.path(),
        );
        assert!(o.status.success(), "{}", stderr(&o));
        let stdout = String::from_utf8(o.stdout).unwrap();
        assert!(stdout.lines().next().unwrap().starts_with("controller"));
        dir
    };
    let (a, b) = (run(), run());
    let mut uia = Vec::new();
    for name in ["constant", "pid", "mpc"] {
        let file = format!("default_{name}.csv");
        assert_eq!(sha256(&a.path().join(&file)), sha256(&b.path().join(&file)));
        let t = read_trajectory(&a.path().join(&file)).unwrap();
        uia.push(t.records().iter().map(|r| r.uia_mgl).collect::<Vec<_>>());
    }
    assert!(uia.windows(2).all(|w| w[0] == w[1]));
    for file in ["default_compare.csv", "default_compare.txt", "default_reference.csv"] {
        assert_eq!(
            std::fs::read(a.path().join(file)).unwrap(),
            std::fs::read(b.path().join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("nested/out");
    let o = Command::new(env!("CARGO_BIN_EXE_aquactl"))
        .args(["reference", "--quiet"])
        .env("AQUACTL_OUT", &target)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(target.join("default_reference.csv").is_file());
}

#[test]
fn runtime_failure_names_the_step() {
    let dir = tempfile::tempdir().unwrap();
    // every fish dies on day one while biomass remains
    let cfg = edit_defaults(
        dir.path(),
        "die.toml",
        &[
            (
                "model = \"individual\"\nw = 50.0",
                "model = \"population\"\nxi = 50000.0\np = 1000",
            ),
            ("kind = \"logistic\"", "kind = \"fixed\"\nper_day = 1.0"),
            ("target_w = 150.0", "target_w = 200000.0"),
            ("initial_w = 50.0", "initial_w = 50000.0"),
        ],
    );
    let o = aquactl(&["simulate", "--controller", "constant", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("step 1"), "{}", stderr(&o));
}

#[test]
fn report_recomputes_from_persisted_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = aquactl(&["simulate", "--quiet", "--controller", "pid"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let s = Scenario::default();
    let r = Reference::from_trajectory(&reference(&s).unwrap(), s.run.dt);
    let in_memory = run_controller(&s, ControllerKind::Pid, &r, None).unwrap().report;
    let traj = read_trajectory(&dir.path().join("default_pid.csv")).unwrap();
    let from_disk = RunReport::compute("pid", &traj, Some(&r), metric_context(&s));
    assert_eq!(from_disk, in_memory);
    let report_csv = std::fs::read_to_string(dir.path().join("default_pid_report.csv")).unwrap();
    assert_eq!(report_csv.lines().count(), 2);
}

#[test]
fn qtable_round_trips_through_cli() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = edit_defaults(
        dir.path(),
        "q.toml",
        &[
            ("max_episodes = 600", "max_episodes = 40"),
            ("tf = 60.0", "tf = 20.0"),
            ("horizon_days = 60.0", "horizon_days = 20.0"),
        ],
    );
    let o = aquactl(&["train-q", "--quiet", "--config", &cfg], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let q = dir.path().join("default_qtable.csv");
    let o = aquactl(
        &[
            "simulate",
            "--quiet",
            "--controller",
            "qlearning",
            "--config",
            &cfg,
            "--qtable",
            q.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("default_qlearning.csv").is_file());
}
