use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn chronorpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chronorpc"))
        .args(args)
        .output()
        .expect("spawn chronorpc")
}

fn write_scenario(dir: &Path, extra: &str) -> String {
    let path = dir.join("scenario.txt");
    fs::write(
        &path,
        format!("name=cli\nseed=5\nsamples=40\nperiod=1s\nservers=2\nbase=30ms\nsigma=3ms\n{extra}"),
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_writes_outputs_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), "");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = chronorpc(&["run", "--scenario", &sc, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let csv = fs::read(a.join("samples.csv")).unwrap();
    assert_eq!(csv, fs::read(b.join("samples.csv")).unwrap());
    assert!(csv.starts_with(b"sample_index,server_id,algorithm,t_s_ns,t_e_ns,ete_ns,prediction_ns,abs_error_ns\n"));
    assert!(a.join("summary.dat").exists());
}

#[test]
fn failed_expectation_gives_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), "expect.error_ratio=0.0001\n");
    let out = dir.path().join("o");
    let o = chronorpc(&["run", "--scenario", &sc, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn bad_scenario_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), "no_such_key=1\n");
    let o = chronorpc(&["run", "--scenario", &sc, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn replay_reads_run_output() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), "");
    let out = dir.path().join("o");
    assert!(chronorpc(&["run", "--scenario", &sc, "--out", out.to_str().unwrap()])
        .status
        .success());
    let samples = out.join("samples.csv");
    let o = chronorpc(&[
        "replay",
        "--csv",
        samples.to_str().unwrap(),
        "--algo",
        "kalman",
        "--window",
        "4",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("sequence,scheduled_time_ns,execution_time_ns,ete_ns,kalman_prediction_ns,kalman_abs_error_ns")
    );
    assert_eq!(lines.count(), 40);
}

#[test]
fn demos_pass() {
    for demo in ["coordinated", "snapshot", "commit", "commit-abort"] {
        let o = chronorpc(&["demo", demo, "--seed", "2"]);
        assert!(o.status.success(), "{demo}: {}", String::from_utf8_lossy(&o.stdout));
    }
    assert_eq!(chronorpc(&["demo", "nope"]).status.code(), Some(2));
}

#[test]
fn experiment_accepts_params() {
    let o = chronorpc(&["experiment", "I", "--param", "samples=30"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(
        chronorpc(&["experiment", "I", "--param", "bogus=1"]).status.code(),
        Some(2)
    );
}

#[test]
fn bundled_scenarios_pass() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let out = tempfile::tempdir().unwrap();
    let mut seen = 0;
    for entry in fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        let o = chronorpc(&[
            "run",
            "--scenario",
            path.to_str().unwrap(),
            "--out",
            out.path().to_str().unwrap(),
        ]);
        assert!(
            o.status.success(),
            "{}: {}",
            path.display(),
            String::from_utf8_lossy(&o.stdout)
        );
        seen += 1;
    }
    assert!(seen >= 5);
}
