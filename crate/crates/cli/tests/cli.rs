use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn critmet(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_critmet"))
        .args(args)
        .current_dir(dir)
        .env_remove("CRITMET_WORKERS")
        .output()
        .expect("spawn critmet")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn simulate_onoff_writes_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let out = critmet(
        &[
            "simulate",
            "--schedule",
            "onoff",
            "--n",
            "2",
            "--wT",
            "60",
            "--out",
            "traj.csv",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("traj.csv")).unwrap();
    assert!(csv.lines().count() > 10);
}

#[test]
fn quench_agrees_with_fock_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let out = critmet(
        &[
            "simulate",
            "--schedule",
            "quench",
            "--wT",
            "3",
            "--oracle-check",
            "--out",
            "q.csv",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn control_above_criticality_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = critmet(
        &[
            "simulate",
            "--schedule",
            "onoff",
            "--wT",
            "10",
            "--eps-on",
            "1.5",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("symmetric phase"));
    assert!(!dir.path().join("trajectory.csv").exists());
}

#[test]
fn fit_on_empty_window_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("d.csv"),
        "T,n,eps_max,qfi,envelope,r_final,winding\n10.0,0,1.0,5.0,6.0,1.0,0\n",
    )
    .unwrap();
    let out = critmet(
        &["fit", "--csv", "d.csv", "--window", "100", "200"],
        dir.path(),
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = critmet(
        &[
            "simulate",
            "--schedule",
            "quench",
            "--wT",
            "2",
            "--out",
            "missing/dir/t.csv",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 4);
}

#[test]
fn bounds_audit_reports_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = critmet(
        &["bounds", "--random", "5", "--seed", "3", "--wT", "6"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report.is_object());
}

#[test]
fn sweep_output_ignores_worker_env() {
    let dir = tempfile::tempdir().unwrap();
    let spec = r#"{"mode":"fixed_n","T":[20.0,40.0],"n":[0,1],"integrator":{"output_stride":0.0}}"#;
    fs::write(dir.path().join("spec.json"), spec).unwrap();
    let run = |name: &str, workers: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_critmet"))
            .args(["sweep", "--config", "spec.json", "--out", name])
            .current_dir(dir.path())
            .env("CRITMET_WORKERS", workers)
            .output()
            .unwrap();
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        fs::read(dir.path().join(name)).unwrap()
    };
    assert_eq!(run("a.csv", "1"), run("b.csv", "3"));
}

#[test]
fn protocol_prints_solution() {
    let dir = tempfile::tempdir().unwrap();
    let out = critmet(&["protocol", "--wT", "30"], dir.path());
    assert_eq!(code(&out), 0);
    let sol: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(sol.is_object());
    let out = critmet(&["protocol"], dir.path());
    assert_eq!(code(&out), 2);
}
