use std::path::Path;
use std::process::{Command, Output};

fn magscan(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_magscan"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn workspace_json_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = magscan(&["workspace", "--json"], tmp.path());
    let b = magscan(&["workspace", "--json"], tmp.path());
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let v: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["experiment"], "workspace");
    assert_eq!(v["report"]["points"].as_array().unwrap().len(), 25);
}

#[test]
fn scripted_session_round_trips_through_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let run = magscan(&["teleop", "--scripted", "--shape", "T2", "--out", "sess"], tmp.path());
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    for f in [
        "meta.json",
        "commands.csv",
        "spots.csv",
        "trajectory.csv",
        "poses.csv",
        "report.json",
    ] {
        assert!(tmp.path().join("sess").join(f).is_file(), "{f}");
    }
    let eval = magscan(&["eval", "--session", "sess", "--rerun", "--json"], tmp.path());
    assert!(eval.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&eval)).unwrap();
    assert_eq!(v["matches"], true);

    // A tampered trajectory no longer reproduces the stored report.
    let traj = tmp.path().join("sess/trajectory.csv");
    let text = std::fs::read_to_string(&traj).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mid = lines.len() / 2;
    let mut cols: Vec<String> = lines[mid].split(',').map(String::from).collect();
    cols[1] = format!("{}", cols[1].parse::<f64>().unwrap() + 0.3);
    lines[mid] = cols.join(",");
    std::fs::write(&traj, lines.join("\n") + "\n").unwrap();
    let eval = magscan(&["eval", "--session", "sess"], tmp.path());
    assert_eq!(eval.status.code(), Some(3));
}

#[test]
fn errors_carry_category_and_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let o = magscan(&["repeat", "--shape", "T9"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error[config]"));
    let o = magscan(&["linearity", "--freqs", "5", "--line-mm", "9"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let o = magscan(&["eval", "--session", "missing"], tmp.path());
    assert!(!o.status.success());
}

#[test]
fn linearity_writes_report_files() {
    let tmp = tempfile::tempdir().unwrap();
    let o = magscan(&["linearity", "--freqs", "5,10", "--out", "lin", "--observe", "truth"], tmp.path());
    assert!(o.status.success());
    assert!(stdout(&o).contains("stable limit"));
    let csv = std::fs::read_to_string(tmp.path().join("lin/linearity.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(tmp.path().join("lin/linearity.json").is_file());
}

#[test]
fn calibrate_writes_a_ledger() {
    let tmp = tempfile::tempdir().unwrap();
    let o = magscan(&["calibrate", "--out", "plant.cfg"], tmp.path());
    assert!(o.status.success());
    let ledger = std::fs::read_to_string(tmp.path().join("plant.cfg")).unwrap();
    assert!(ledger.starts_with("# Calibration ledger"));
    assert!(ledger.contains("damping_ratio = 0.1792954811"));
    // The ledger is itself a plant configuration.
    let o = magscan(&["workspace", "--params", "plant.cfg"], tmp.path());
    assert!(o.status.success());
}
