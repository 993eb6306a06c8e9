use std::path::Path;
use std::process::{Command, Output};

fn sutse(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sutse"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout {}\nstderr {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn simulate_fit_forecast_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&sutse(d, &["--seed", "4", "simulate", "--dim", "3", "--n", "300", "--out", "y.csv", "--spec-out", "truth.toml"]));
    let first = std::fs::read(d.join("y.csv")).unwrap();
    ok(&sutse(d, &["--seed", "4", "simulate", "--dim", "3", "--n", "300", "--out", "y2.csv"]));
    assert_eq!(first, std::fs::read(d.join("y2.csv")).unwrap());

    let spec = d.join("truth.toml");
    let data = d.join("y.csv");
    let (spec, data) = (spec.to_str().unwrap(), data.to_str().unwrap());
    ok(&sutse(d, &["fit", "--spec", spec, "--data", data, "--mode", "perdim", "--steady-state-tol", "1e-13", "--out", "fit.toml"]));
    let fitted = std::fs::read_to_string(d.join("fit.toml")).unwrap();
    assert!(fitted.contains("mode = \"perdim\""), "{fitted}");

    ok(&sutse(d, &["forecast", "--spec", spec, "--data", data, "--observed", "0=0.5,1=-0.25", "--out", "f.csv"]));
    let text = std::fs::read_to_string(d.join("f.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "component,name,one_step,same_step");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].ends_with(','), "observed component has no same-step forecast");
    let last: Vec<&str> = lines[3].split(',').collect();
    assert!(last[3].parse::<f64>().unwrap().is_finite());

    ok(&sutse(d, &["fast-forecast", "--spec", spec, "--data", data, "--observed", "0=0.5", "--cov", "glasso", "--out", "ff.csv"]));
    assert_eq!(std::fs::read_to_string(d.join("ff.csv")).unwrap().lines().count(), 4);
}

#[test]
fn verify_and_small_bench_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&sutse(d, &["verify", "--dim", "3", "--tmax", "100", "--envelope-n", "100", "--report", "v.csv"]));
    let v = std::fs::read_to_string(d.join("v.csv")).unwrap();
    assert!(v.starts_with("section,name,index,value"));
    assert!(v.contains("spectral_radius_tl_prime"));

    ok(&sutse(d, &["bench", "--dims", "2,3", "--reps", "2", "--n-train", "150", "--n-test", "50"]));
    let rows = std::fs::read_to_string(d.join("bench_rows.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 2 * 2 * 2);
    assert_eq!(std::fs::read_to_string(d.join("bench_aggregates.csv")).unwrap().lines().count(), 1 + 4);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(sutse(d, &["--help"]).status.code(), Some(0));
    assert_eq!(sutse(d, &["no-such-command"]).status.code(), Some(1));
    // Missing file: input error.
    let out = sutse(d, &["forecast", "--spec", "nope.toml", "--data", "nope.csv"]);
    assert_eq!(out.status.code(), Some(1));

    // Malformed CSV row: input error naming the line.
    std::fs::write(d.join("bad.csv"), "a,b\n1,2\n3,x\n").unwrap();
    ok(&sutse(d, &["simulate", "--dim", "2", "--n", "10", "--spec-out", "m.toml"]));
    let out = sutse(
        d,
        &[
            "forecast",
            "--spec",
            d.join("m.toml").to_str().unwrap(),
            "--data",
            d.join("bad.csv").to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    // Non-PD covariance for the sample method: numerical failure.
    std::fs::write(d.join("short.csv"), "a,b\n1,2\n").unwrap();
    let out = sutse(
        d,
        &[
            "fast-forecast",
            "--spec",
            d.join("m.toml").to_str().unwrap(),
            "--data",
            d.join("short.csv").to_str().unwrap(),
            "--n0",
            "5",
        ],
    );
    assert_ne!(out.status.code(), Some(0));
}
