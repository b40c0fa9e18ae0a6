use std::path::Path;
use std::process::{Command, Output};

fn persched(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_persched"))
        .args(args)
        .current_dir(cwd)
        .env("PERSCHED_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_scenario_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = persched(&["schedule", "--set", "nope"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown scenario"), "{}", stderr(&o));
}

#[test]
fn bad_flags_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = persched(&["schedule", "--set", "set1", "--epsilon", "2"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = persched(&["simulate", "--baseline", "--set", "set1", "--periods", "0"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = persched(&["schedule"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn schedule_set9_writes_five_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = persched(&["schedule", "--set", "set9", "--out", "run"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let run = dir.path().join("run");
    let scheds: Vec<_> = std::fs::read_dir(&run)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "sched"))
        .collect();
    assert_eq!(scheds.len(), 5);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    let dilation = report["dilation"].as_f64().unwrap();
    assert!((dilation - 1.0).abs() <= 0.005);
    // each AP file holds one line: start, end, per-processor rate b
    let text = std::fs::read_to_string(run.join("AP_1.sched")).unwrap();
    let fields: Vec<f64> = text.split_whitespace().map(|f| f.parse().unwrap()).collect();
    assert_eq!(fields.len(), 3);
    assert!((fields[1] - fields[0] - 330.78125).abs() < 1e-6);
    assert!((fields[2] - 0.01).abs() < 1e-12);
}

#[test]
fn schedule_then_simulate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let o = persched(&["schedule", "--set", "set3", "--out", "run"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/report.json")).unwrap()).unwrap();
    let syseff = report["syseff"].as_f64().unwrap();
    assert!((syseff / 0.480 - 1.0).abs() <= 0.05);

    let o = persched(&["simulate", "--schedule-dir", "run", "--periods", "100", "--out", "trace.csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let line = out.lines().find(|l| l.starts_with("syseff periodic")).unwrap();
    let values: Vec<f64> = line.split_whitespace().filter_map(|f| f.parse().ok()).collect();
    assert!((values[0] - syseff).abs() <= 1e-6);
    assert!((values[1] / values[0] - 1.0).abs() <= 0.02);

    let csv = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(csv.starts_with("app,instance,compute_start,io_start,io_end,bytes\n"));
}

#[test]
fn simulate_rejects_inconsistent_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = persched(&["schedule", "--set", "set9", "--out", "run"], dir.path());
    assert!(o.status.success());
    std::fs::write(dir.path().join("run/AP_2.sched"), "# truncated\n10 20 0.01\n").unwrap();
    let o = persched(&["simulate", "--schedule-dir", "run"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("AP_2.sched:2"), "{}", stderr(&o));
}

#[test]
fn sweep_lists_every_period() {
    let dir = tempfile::tempdir().unwrap();
    let o = persched(&["sweep", "--set", "set1"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("T,syseff,dilation"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|f| f.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 232);
    assert!(rows.iter().all(|r| r[2] >= 1.0));
    assert!(rows[0][1] > 0.0);

    let again = persched(&["sweep", "--set", "set1"], dir.path());
    assert_eq!(again.stdout, o.stdout);
}

#[test]
fn kprime_sweep_normalizes_by_the_largest() {
    let dir = tempfile::tempdir().unwrap();
    let o = persched(&["kprime-sweep", "--set", "set7", "--kprimes", "5"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[3].parse::<f64>().unwrap(), 1.0);
    assert_eq!(row[4].parse::<f64>().unwrap(), 1.0);
}

#[test]
fn baseline_set1_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let o = persched(&["simulate", "--baseline", "--set", "set1"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let line = out.lines().find(|l| l.starts_with("baseline syseff")).unwrap();
    let value: f64 = line.split_whitespace().last().unwrap().parse().unwrap();
    assert!((value - 0.0890).abs() <= 0.0005);
}

#[test]
fn scenario_file_input() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("duo.json");
    std::fs::write(
        &file,
        r#"{"platform": {"N": 200, "b": 0.01, "B": 3.0},
            "apps": [{"id": "a", "p": 100, "w": 50.0, "vol": 20.0},
                     {"id": "b", "p": 100, "w": 80.0, "vol": 40.0}]}"#,
    )
    .unwrap();
    let o = persched(&["schedule", "--scenario-file", "duo.json", "--objective", "dilation"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("schedule-duo/a.sched").exists());

    std::fs::write(&file, "{\"platform\": {\"N\": 200, \"b\": 0.01, \"B\": 3.0},\n\"apps\": [{\"id\": \"a\", \"p\": 100}]}").unwrap();
    let o = persched(&["schedule", "--scenario-file", "duo.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn scenarios_lists_the_catalog() {
    let dir = tempfile::tempdir().unwrap();
    let o = persched(&["scenarios"], dir.path());
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("set")).count(), 10);
}
