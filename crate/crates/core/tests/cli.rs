use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_moller-bte"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn verify_geometry_passes() {
    let o = run(&["verify", "--suite", "geometry"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).lines().filter(|l| l.starts_with("PASS")).count() >= 5);
}

#[test]
fn zero_tolerance_fails_inexact_checks() {
    let o = run(&["verify", "--suite", "finite-part", "--tol", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["verify", "--suite", "nope"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["verify", "--tol", "-1"]).status.code(), Some(2));
    assert_eq!(run(&["--config", "/nonexistent/cfg.json", "verify"]).status.code(), Some(2));
    assert_eq!(run(&["converge", "--kappa-list", "1.5"]).status.code(), Some(2));
    assert_eq!(run(&["bilinear", "--form", "B0", "--field", "q*Y00*cm1", "--test-field", "ab*Y10*c02"]).status.code(), Some(2));
}

#[test]
fn bad_config_is_rejected() {
    let dir = scratch("badcfg");
    let cfg = dir.join("cfg.json");
    std::fs::write(&cfg, r#"{"phase_space": {"radius": -1}}"#).unwrap();
    let o = run(&["--config", cfg.to_str().unwrap(), "verify", "--suite", "geometry"]);
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(&cfg, r#"{"points": 3, "typo": true}"#).unwrap();
    let o = run(&["--config", cfg.to_str().unwrap(), "verify", "--suite", "geometry"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn converge_writes_six_rows() {
    let dir = scratch("converge");
    let out = dir.join("c.csv");
    let o = run(&["converge", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "kappa,sup_error,l2_error");
    assert_eq!(lines.len(), 8);
    let slope: f64 = lines[7].strip_prefix("# slope=").unwrap().parse().unwrap();
    assert!(slope >= 0.45);
}

#[test]
fn converge_without_singular_parts_reports_nan() {
    let dir = scratch("zero");
    let cfg = dir.join("cfg.json");
    std::fs::write(&cfg, r#"{"cross_sections": {"c1": 0.0, "c2": 0.0}}"#).unwrap();
    let out = dir.join("z.csv");
    let o = run(&["--config", cfg.to_str().unwrap(), "converge", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.ends_with("# slope=nan\n"));
    for row in text.lines().skip(1).take(6) {
        assert!(row.ends_with(",0,0"), "{row}");
    }
}

#[test]
fn apply_strong_and_refined_agree() {
    let dir = scratch("apply");
    let pts = dir.join("p.txt");
    std::fs::write(&pts, "# x w E\n0.1 0.2 -0.3  0 0 1  1.5\n0.5,0,0, 0.6,0.8,0, 2.2\n\n-0.2 0.1 0.4 0 1 0 2.9\n").unwrap();
    let value = |form: &str| -> Vec<f64> {
        let o = run(&["apply", "--form", form, "--field", "ab*Y22*cm2", "--points", pts.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        v.as_array().unwrap().iter().map(|p| p["value"].as_f64().unwrap()).collect()
    };
    let s = value("strong");
    let r = value("refined");
    assert_eq!(s.len(), 3);
    for (a, b) in s.iter().zip(&r) {
        assert!((a - b).abs() <= 1e-5 * (1.0 + a.abs()), "{a} vs {b}");
    }
    assert_eq!(value("csda").len(), 3);
}

#[test]
fn apply_input_errors() {
    let dir = scratch("apply-err");
    let empty = dir.join("empty.txt");
    std::fs::write(&empty, "").unwrap();
    let o = run(&["apply", "--form", "strong", "--field", "a1*Y00*cm1", "--points", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "[]");

    let bad = dir.join("bad.txt");
    std::fs::write(&bad, "0 0 0 0 0 1 1.5\n0 0 0 0 0 1 1.5\n0 0 1.5 0 0 1 1.5\n").unwrap();
    let o = run(&["apply", "--form", "strong", "--field", "a1*Y00*cm1", "--points", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains(":3:"));

    std::fs::write(&bad, "0 0 0 0 0 1\n").unwrap();
    let o = run(&["apply", "--form", "strong", "--field", "a1*Y00*cm1", "--points", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bilinear_forms() {
    let get = |form: &str, psi: &str| -> f64 {
        let o = run(&["bilinear", "--form", form, "--field", psi, "--test-field", "ab*Y10*c02"]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(v["form"], form);
        v["value"].as_f64().unwrap()
    };
    let b2 = get("B2", "a1*Y10*cm2");
    let low = get("B2low", "a1*Y10*cm2");
    assert!((b2 - low).abs() < 1e-4 * (1.0 + b2.abs()));
    assert_eq!(get("B", "zero"), 0.0);
}

#[test]
fn output_is_deterministic() {
    let dir = scratch("determinism");
    let a = dir.join("a.csv");
    let b = dir.join("b.csv");
    for p in [&a, &b] {
        assert_eq!(run(&["converge", "--out", p.to_str().unwrap()]).status.code(), Some(0));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let args = ["bilinear", "--form", "B1", "--field", "ax1*Y22*cm1", "--test-field", "a1*Y00*c01"];
    assert_eq!(run(&args).stdout, run(&args).stdout);
}
