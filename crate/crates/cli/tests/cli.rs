use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rsnoma(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rsnoma"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn simulate_to(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["simulate", "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    rsnoma(&args)
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs.csv");
    let o = simulate_to(&out, &["--draws", "2", "--mode", "all", "--sweep", "rth:0:1.5:0.5", "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "seed,draw_index,mode,p_max_dbm,r_th,weight_scheme,status,iterations,weighted_sum_rate,sum_rate,proportional_fairness,beta,per_user_rates"
    );
    // 2 draws × 3 modes × 4 sweep points.
    assert_eq!(lines.count(), 24);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let args = ["--draws", "3", "--sweep", "pmax:25:35:5", "--weights", "exp_flip", "--seed", "11"];
    assert!(simulate_to(&a, &args).status.success());
    assert!(simulate_to(&b, &args).status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn summary_of_converged_runs_is_fully_feasible() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("runs.csv");
    assert!(simulate_to(&runs, &["--draws", "3", "--mode", "hybrid"]).status.success());
    let o = rsnoma(&["summarize", "--in", runs.to_str().unwrap()]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let mut rows = csv::Reader::from_reader(text.as_bytes());
    let header = rows.headers().unwrap().clone();
    let rate = header.iter().position(|h| h == "feasibility_rate").unwrap();
    let records: Vec<_> = rows.records().map(Result::unwrap).collect();
    assert_eq!(records.len(), 1);
    assert_eq!(&records[0][rate], "1.0");
}

#[test]
fn empty_csv_summarizes_to_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    let o = rsnoma(&["summarize", "--in", empty.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
}

#[test]
fn config_file_drives_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "[scenario]\nnum_users = 2\np_max_dbm = 30.0\n[algorithm]\nmode = \"hybrid\"\n").unwrap();
    let runs = dir.path().join("runs.csv");
    let o = simulate_to(&runs, &["--config", cfg.to_str().unwrap(), "--draws", "1", "--mode", "noma"]);
    assert!(o.status.success());
    let text = fs::read_to_string(&runs).unwrap();
    let row = text.lines().nth(1).unwrap();
    let fields: Vec<&str> = row.split(',').collect();
    assert_eq!(fields[2], "noma_only");
    assert_eq!(fields[3], "30.0");
    assert_eq!(fields[12].split(';').count(), 2);
}

#[test]
fn verify_passes_on_small_instances() {
    let o = rsnoma(&["verify", "--draws", "3", "--density", "20"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 1 + 3 * 3);
}

#[test]
fn verify_refuses_large_instances() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("big.toml");
    fs::write(&cfg, "[scenario]\nnum_users = 4\n").unwrap();
    let o = rsnoma(&["verify", "--config", cfg.to_str().unwrap(), "--draws", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("at most 3 users"));
}

#[test]
fn bad_arguments_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    assert!(!simulate_to(&out, &["--sweep", "rth:2:1:0.5"]).status.success());
    assert!(!simulate_to(&out, &["--weights", "triangular"]).status.success());
    assert!(!rsnoma(&["summarize", "--in", "/nonexistent/file.csv"]).status.success());
}
