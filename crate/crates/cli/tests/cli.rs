use std::process::Command;

use strata_rd::tables::{calgb, write_aggregated_csv, write_subjects_csv};
use strata_rd::{expand_records, round_half_even, VarianceMethod};
use strata_rd_cli::report::{analyze, x100, AnalysisReport, BootstrapSettings};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_strata-rd"))
}

fn run(args: &[&str]) -> (Option<i32>, String, String) {
    let out = bin().args(args).output().unwrap();
    (
        out.status.code(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn calgb_subjects_file(dir: &tempfile::TempDir) -> String {
    let path = dir.path().join("calgb.csv");
    let f = std::fs::File::create(&path).unwrap();
    write_subjects_csv(&calgb::records(), f).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn analyze_calgb_table() {
    let (code, out, _) = run(&["analyze", "calgb"]);
    assert_eq!(code, Some(0));
    for needle in ["5.72", "6.32", "7.99", "7.30", "7.74", "5.69", "7.66", "1.79", "8.06"] {
        assert!(out.contains(needle), "missing {needle} in\n{out}");
    }
    assert!(!out.contains("Newc") && !out.contains("Klin") && !out.contains("Gcomp"));
}

#[test]
fn json_report_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let file = calgb_subjects_file(&dir);
    let (code, out, _) = run(&["analyze", &file, "--out", "json", "--bootstrap", "50", "--seed", "3"]);
    assert_eq!(code, Some(0));
    let report = AnalysisReport::from_json(&out).unwrap();
    assert_eq!(AnalysisReport::from_json(&report.to_json()).unwrap(), report);

    let d = calgb::dataset();
    let direct = analyze(
        &d,
        &expand_records(&d),
        0.95,
        Some(BootstrapSettings {
            replicates: 50,
            seed: 3,
        }),
    )
    .unwrap();
    assert_eq!(report.estimates, direct.estimates);
    assert_eq!(report.tests, direct.tests);
}

#[test]
fn bootstrap_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let file = calgb_subjects_file(&dir);
    let boot_se = |seed: &str| {
        let (_, out, _) = run(&["analyze", &file, "--out", "json", "--bootstrap", "200", "--seed", seed]);
        let r = AnalysisReport::from_json(&out).unwrap();
        r.estimates
            .iter()
            .flat_map(|e| &e.methods)
            .find(|m| m.method == VarianceMethod::Bootstrap)
            .and_then(|m| m.se)
            .unwrap()
    };
    assert_eq!(boot_se("7"), boot_se("7"));
    assert_ne!(boot_se("7"), boot_se("8"));
}

#[test]
fn aggregated_input_matches_subject_input() {
    let dir = tempfile::tempdir().unwrap();
    let subjects = calgb_subjects_file(&dir);
    let agg = dir.path().join("agg.csv");
    write_aggregated_csv(&calgb::dataset(), std::fs::File::create(&agg).unwrap()).unwrap();
    let (_, a, _) = run(&["analyze", &subjects, "--out", "json"]);
    let (_, b, _) = run(&[
        "analyze",
        agg.to_str().unwrap(),
        "--format",
        "aggregated",
        "--out",
        "json",
    ]);
    assert_eq!(a, b);
}

#[test]
fn table_values_are_rounded_json_values() {
    let d = calgb::dataset();
    let r = analyze(&d, &expand_records(&d), 0.95, None).unwrap();
    let table = r.to_table();
    for e in &r.estimates {
        for m in &e.methods {
            let se = m.se.unwrap();
            let shown = format!("{:.2}", round_half_even(100.0 * se, 2));
            assert_eq!(x100(se), shown);
            assert!(table.contains(&shown));
        }
    }
}

#[test]
fn warnings_set_exit_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.csv");
    std::fs::write(&path, "stratum,n11,n10,n01,n00\na,3,1,2,4\nb,2,0,1,0\n").unwrap();
    let (code, out, _) = run(&["analyze", path.to_str().unwrap(), "--format", "aggregated"]);
    assert_eq!(code, Some(2));
    assert!(out.contains("warning:"));
}

#[test]
fn bad_input_exits_one_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "stratum,arm,outcome\na,1,1\na,0,yes\n").unwrap();
    let (code, _, err) = run(&["analyze", path.to_str().unwrap()]);
    assert_eq!(code, Some(1));
    assert!(err.contains("line 3"), "{err}");

    let (code, _, _) = run(&["analyze", "/no/such/file.csv"]);
    assert_eq!(code, Some(1));
    let (code, _, err) = run(&["simulate", "--factors", "1a,9q"]);
    assert_eq!(code, Some(1));
    assert!(err.contains("9q"));
    let (code, _, _) = run(&["analyze"]);
    assert_ne!(code, Some(0));
}

#[test]
fn simulate_writes_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, _) = run(&[
        "simulate",
        "--factors",
        "1c,2b,3a,4a",
        "--runs",
        "20",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, Some(0));
    let json = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 1);
    let csv = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert!(csv.starts_with("scenario,estimand,estimator,variance"));
    assert_eq!(csv.lines().count(), 1 + 8);
}

#[test]
fn single_run_marks_sd_unavailable() {
    let (code, out, _) = run(&["simulate", "--factors", "1c,2b,3a,4b", "--runs", "1"]);
    assert_eq!(code, Some(0));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    for cell in v[0]["cells"].as_array().unwrap() {
        assert!(cell["sd"].is_null());
    }
}

#[test]
fn thread_count_comes_from_the_environment() {
    let args = ["simulate", "--factors", "1c,2a,3b,4c", "--runs", "30"];
    let a = bin().args(args).env("STRATA_RD_THREADS", "1").output().unwrap();
    let b = bin().args(args).env("STRATA_RD_THREADS", "3").output().unwrap();
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn help_mentions_missing_columns() {
    let (_, out, _) = run(&["--help"]);
    assert!(out.contains("Klingenberg") && out.contains("G-computation"));
}
