//! End-to-end tests of the command-line interface: file formats, exit
//! codes and cross-command consistency.

use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nonholorec"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).expect("output file exists")
}

#[test]
fn simulate_writes_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("traj.csv");
    let status = run(&[
        "simulate",
        "--example",
        "particle2d",
        "--m",
        "1",
        "--q0",
        "0,0",
        "--q1",
        "0.1,0.005",
        "--steps",
        "100",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(status.status.success());
    let text = read(&out);
    assert_eq!(text.lines().count(), 101);
    // Interior rows carry k, two coordinates and one multiplier.
    let fields: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(fields.len(), 4);
    assert_eq!(fields[0], "1");
}

#[test]
fn simulate_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        let status = run(&[
            "simulate",
            "--example",
            "disk",
            "--steps",
            "50",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(status.status.success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn invalid_initial_pair_exits_two_citing_the_residual() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("traj.csv");
    let output = run(&[
        "simulate",
        "--example",
        "particle2d",
        "--q0",
        "0,0",
        "--q1",
        "0.1,0.05",
        "--steps",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("constraint"), "stderr: {stderr}");
    assert!(stderr.contains("4.5e-2"), "stderr cites the residual: {stderr}");
}

#[test]
fn unknown_example_exits_two() {
    let output = run(&["simulate", "--example", "pendulum", "--out", "/dev/null"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn reduce_then_reconstruct_matches_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let red = dir.path().join("red.csv");
    let rec = dir.path().join("rec.csv");
    let sim = dir.path().join("sim.csv");
    for args in [
        vec![
            "reduce",
            "--example",
            "particle2d",
            "--b",
            "0.5",
            "--steps",
            "40",
            "--out",
            red.to_str().unwrap(),
        ],
        vec![
            "reconstruct",
            "--example",
            "particle2d",
            "--b",
            "0.5",
            "--q0",
            "0,0",
            "--q1",
            "0.1,0.005",
            "--reduced",
            red.to_str().unwrap(),
            "--out",
            rec.to_str().unwrap(),
        ],
        vec![
            "simulate",
            "--example",
            "particle2d",
            "--b",
            "0.5",
            "--steps",
            "40",
            "--out",
            sim.to_str().unwrap(),
        ],
    ] {
        let output = run(&args);
        assert!(
            output.status.success(),
            "{:?}: {}",
            args,
            String::from_utf8_lossy(&output.stderr)
        );
    }
    let parse = |text: &str| -> Vec<Vec<f64>> {
        text.lines()
            .map(|l| {
                l.split(',')
                    .skip(1)
                    .take(2)
                    .map(|t| t.parse::<f64>().unwrap())
                    .collect()
            })
            .collect()
    };
    let lifted = parse(&read(&rec));
    let solved = parse(&read(&sim));
    assert_eq!(lifted.len(), solved.len());
    for (a, b) in lifted.iter().zip(&solved) {
        assert!((a[0] - b[0]).abs() < 1e-8);
        assert!((a[1] - b[1]).abs() < 1e-8);
    }
}

#[test]
fn chaplygin_mode_roundtrip_matches_simulate() {
    // The default slope b = 1 selects the Chaplygin pipeline: the reduced
    // file carries identity fiber steps and reconstruction is a pure
    // horizontal lift.
    let dir = tempfile::tempdir().unwrap();
    let red = dir.path().join("red.csv");
    let rec = dir.path().join("rec.csv");
    let sim = dir.path().join("sim.csv");
    assert!(run(&[
        "reduce",
        "--example",
        "particle2d",
        "--steps",
        "30",
        "--out",
        red.to_str().unwrap(),
    ])
    .status
    .success());
    let text = read(&red);
    let theta: f64 = text.lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap();
    assert_eq!(theta, 0.0);
    assert!(run(&[
        "reconstruct",
        "--example",
        "particle2d",
        "--q0",
        "0,0",
        "--q1",
        "0.1,0.005",
        "--reduced",
        red.to_str().unwrap(),
        "--out",
        rec.to_str().unwrap(),
    ])
    .status
    .success());
    assert!(run(&[
        "simulate",
        "--example",
        "particle2d",
        "--steps",
        "30",
        "--out",
        sim.to_str().unwrap(),
    ])
    .status
    .success());
    for (a, b) in read(&rec).lines().zip(read(&sim).lines()) {
        let pa: Vec<f64> = a.split(',').skip(1).take(2).map(|t| t.parse().unwrap()).collect();
        let pb: Vec<f64> = b.split(',').skip(1).take(2).map(|t| t.parse().unwrap()).collect();
        assert!((pa[0] - pb[0]).abs() < 1e-8);
        assert!((pa[1] - pb[1]).abs() < 1e-8);
    }
}

#[test]
fn simulate_json_has_the_documented_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("disk.json");
    let status = run(&[
        "simulate",
        "--example",
        "disk",
        "--steps",
        "20",
        "--format",
        "json",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(status.status.success());
    let doc: serde_json::Value = serde_json::from_str(&read(&out)).unwrap();
    for key in ["example", "params", "trajectory", "multipliers", "residuals"] {
        assert!(doc.get(key).is_some(), "missing key {key}");
    }
    assert_eq!(doc["trajectory"].as_array().unwrap().len(), 21);
    assert_eq!(doc["multipliers"].as_array().unwrap().len(), 19);
    assert!(doc["residuals"]["dla"].as_f64().unwrap() < 1e-9);
    assert!(doc["residuals"]["constraint"].as_f64().unwrap() < 1e-9);
}

#[test]
fn verify_passes_and_perturbation_flips_the_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let ok = run(&[
        "verify",
        "--example",
        "particle2d",
        "--samples",
        "25",
        "--steps",
        "30",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let doc: serde_json::Value = serde_json::from_str(&read(&out)).unwrap();
    assert_eq!(doc["passed"], serde_json::Value::Bool(true));

    let bad = run(&[
        "verify",
        "--example",
        "particle2d",
        "--samples",
        "25",
        "--steps",
        "30",
        "--perturb",
        "1e-3",
    ]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn horizontal_reduce_and_reconstruct_recover_the_z_drift() {
    let dir = tempfile::tempdir().unwrap();
    let red = dir.path().join("red.csv");
    let rec = dir.path().join("rec.csv");
    let reduce = run(&[
        "reduce",
        "--example",
        "particle3d",
        "--q0",
        "0,0,0",
        "--q1",
        "0.1,0.005,0.02",
        "--steps",
        "25",
        "--out",
        red.to_str().unwrap(),
    ]);
    assert!(reduce.status.success());
    let reconstruct = run(&[
        "reconstruct",
        "--example",
        "particle3d",
        "--q0",
        "0,0,0",
        "--q1",
        "0.1,0.005,0.02",
        "--reduced",
        red.to_str().unwrap(),
        "--out",
        rec.to_str().unwrap(),
    ]);
    assert!(
        reconstruct.status.success(),
        "{}",
        String::from_utf8_lossy(&reconstruct.stderr)
    );
    let last = read(&rec);
    let fields: Vec<f64> = last
        .lines()
        .last()
        .unwrap()
        .split(',')
        .skip(1)
        .map(|t| t.parse().unwrap())
        .collect();
    // z_25 = 25 * 0.02.
    assert!((fields[2] - 0.5).abs() < 1e-10);
}

#[test]
fn tolerance_env_var_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.csv");
    // An absurdly tight tolerance must fail the solve (exit 1).
    let output = Command::new(env!("CARGO_BIN_EXE_nonholorec"))
        .env("NONHOLOREC_TOL", "1e-30")
        .args([
            "simulate",
            "--example",
            "particle2d",
            "--steps",
            "10",
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("solver failure"), "stderr: {stderr}");
}
