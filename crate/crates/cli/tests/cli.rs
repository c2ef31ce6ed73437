use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use interfx::sim::{generate_dgp, DgpConfig, Design};
use interfx::{fit_mle, EmConfig};

fn interfx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_interfx"))
        .args(args)
        .env_remove("INTERFX_THREADS")
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Value of `key=` in a report header.
fn header(report: &str, key: &str) -> String {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in report"))
        .to_string()
}

fn betas(report: &str) -> Vec<f64> {
    report
        .lines()
        .skip_while(|l| *l != "[beta]")
        .skip(2)
        .take_while(|l| !l.is_empty())
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect()
}

fn generate(dir: &Path, design: &str, n: &str, t: &str) -> PathBuf {
    let out = dir.join(format!("dgp{design}.csv"));
    let phi = dir.join(format!("phi{design}.csv"));
    let common = dir.join(format!("d{design}.csv"));
    let mut args = vec!["generate", "--design", design, "--n", n, "--t", t, "--seed", "7", "--out", path_str(&out)];
    if design == "3" || design == "4" {
        args.extend(["--phi-out", path_str(&phi)]);
    }
    if design == "4" {
        args.extend(["--common-out", path_str(&common)]);
    }
    let o = interfx(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn auto_factor_number_on_exported_panel() {
    let dir = tempfile::tempdir().unwrap();
    let panel = generate(dir.path(), "1", "50", "75");
    let report = dir.path().join("fit.txt");
    let o = interfx(&["estimate", "--panel", path_str(&panel), "--r", "auto", "--out", path_str(&report)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(&report).unwrap();
    assert_eq!(header(&text, "r"), "1");
    assert_eq!(header(&text, "r_selection"), "auto");
    assert!(text.contains("\n[ic]\nm,value\n0,"));
    let b = betas(&text);
    assert!((b[0] - 1.0).abs() < 0.01 && (b[1] - 2.0).abs() < 0.01, "{b:?}");
}

#[test]
fn exported_panel_round_trips_to_the_same_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let panel = generate(dir.path(), "2", "30", "40");
    let o = interfx(&["estimate", "--panel", path_str(&panel), "--r", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let from_cli = betas(&String::from_utf8(o.stdout).unwrap());
    let (data, _) = generate_dgp(&DgpConfig::new(Design::Dgp2, 30, 40, 7)).unwrap();
    let direct = fit_mle(&data, 2, &EmConfig::default()).unwrap();
    for j in 0..2 {
        assert!((from_cli[j] - direct.beta_hat()[j]).abs() <= 1e-12);
    }
}

#[test]
fn restricted_models_run_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let panel = generate(dir.path(), "4", "40", "60");
    let (phi, d) = (dir.path().join("phi4.csv"), dir.path().join("d4.csv"));
    let o = interfx(&[
        "estimate", "--panel", path_str(&panel), "--model", "phi-common", "--phi", path_str(&phi),
        "--common", path_str(&d), "--r1", "1",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(header(&text, "model"), "phi-common");
    assert_eq!(header(&text, "r3"), "2");

    let panel = generate(dir.path(), "2", "40", "60");
    let o = interfx(&["estimate", "--panel", path_str(&panel), "--model", "zero", "--r1", "1", "--r2", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn malformed_csv_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "unit,time,y,x1\n1,1,0.5,1\n1,2,oops,2\n2,1,1,1\n2,2,1,1\n").unwrap();
    let o = interfx(&["estimate", "--panel", path_str(&bad), "--r", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn missing_inputs_are_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let panel = generate(dir.path(), "1", "20", "30");
    let o = interfx(&["estimate", "--panel", path_str(&panel), "--model", "phi"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--phi"), "{}", stderr(&o));

    let o = interfx(&["estimate", "--panel", path_str(&panel), "--model", "phi-common"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--common"));

    let o = interfx(&["estimate", "--panel", path_str(&dir.path().join("absent.csv"))]);
    assert_eq!(o.status.code(), Some(1));

    let o = interfx(&["estimate", "--panel", path_str(&panel), "--model", "zero", "--r1", "1", "--r2", "1", "--se", "moment"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn non_convergence_still_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let panel = generate(dir.path(), "1", "30", "40");
    let report = dir.path().join("fit.txt");
    let o = interfx(&["estimate", "--panel", path_str(&panel), "--r", "1", "--max-iters", "1", "--out", path_str(&report)]);
    assert_eq!(o.status.code(), Some(2));
    let text = std::fs::read_to_string(&report).unwrap();
    assert_eq!(header(&text, "converged"), "false");
    assert_eq!(header(&text, "iterations"), "1");
}

#[test]
fn moment_standard_errors_for_basic_model() {
    let dir = tempfile::tempdir().unwrap();
    let panel = generate(dir.path(), "1", "30", "40");
    let o = interfx(&["estimate", "--panel", path_str(&panel), "--r", "1", "--se", "moment"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(header(&String::from_utf8(o.stdout).unwrap(), "se_method"), "moment");
}

#[test]
fn invalid_design_is_rejected() {
    for design in ["0", "5", "x"] {
        let o = interfx(&["simulate", "--design", design, "--n", "10", "--t", "10"]);
        assert_eq!(o.status.code(), Some(1));
    }
    let o = interfx(&["simulate", "--design", "1", "--n", "10", "--t", "10", "--dist", "cauchy"]);
    assert_eq!(o.status.code(), Some(1));
    let o = interfx(&["simulate", "--design", "1", "--n", "10", "--t", "10", "--estimators", "ols"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn simulation_report_is_stable_and_thread_independent() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &Path| {
        vec![
            "simulate".to_string(), "--design".into(), "2".into(), "--n".into(), "20".into(), "--t".into(),
            "30".into(), "--reps".into(), "4".into(), "--seed".into(), "3".into(), "--select-r".into(),
            "on".into(), "--out".into(), path_str(out).to_string(),
        ]
    };
    let (a, b) = (dir.path().join("a.txt"), dir.path().join("b.txt"));
    let o = interfx(&args(&a).iter().map(String::as_str).collect::<Vec<_>>());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = Command::new(env!("CARGO_BIN_EXE_interfx"))
        .args(args(&b))
        .env("INTERFX_THREADS", "3")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let (ta, tb) = (std::fs::read_to_string(&a).unwrap(), std::fs::read_to_string(&b).unwrap());
    assert_eq!(ta, tb);
    assert!(ta.starts_with("# interfx simulate\ndesign=2\n"));
    assert!(ta.contains("[table]\nn,t,pct_r_correct,wg_beta1_bias"));
}

#[test]
fn single_replication_gives_one_row() {
    let o = interfx(&["simulate", "--design", "1", "--n", "15", "--t", "20", "--reps", "1", "--threads", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = text
        .split("[table]\n")
        .nth(1)
        .unwrap()
        .lines()
        .take_while(|l| !l.is_empty())
        .collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[1].starts_with("15,20,NA,"));
}

#[test]
fn select_prints_both_criteria() {
    let dir = tempfile::tempdir().unwrap();
    let panel = generate(dir.path(), "2", "50", "75");
    let o = interfx(&["select", "--panel", path_str(&panel)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!((header(&text, "r1"), header(&text, "r2")), ("1".into(), "1".into()));
    assert!(text.contains("[step2_ic]"));
}
