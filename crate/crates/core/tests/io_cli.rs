use std::path::Path;
use std::process::{Command, Output};

use proptest::prelude::*;
use serde_json::Value;

use mppc_nrf::io::{self, AggregatedRecord, CountsFile, CurveRow, PulseRecord};
use mppc_nrf::{Error, StateKind};

fn cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mppc-nrf"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pulse_files_round_trip(pulses in proptest::collection::vec((0usize..50, 0usize..50), 1..200)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        io::emit_pulses_csv(&pulses, &path).unwrap();
        let back = io::ingest_pulses_csv(&path).unwrap();
        let expected: Vec<PulseRecord> = pulses
            .iter()
            .enumerate()
            .map(|(i, &(s, r))| PulseRecord { pulse: i as u64, n_s: s as u64, n_i: r as u64 })
            .collect();
        prop_assert_eq!(back, expected);
    }

    #[test]
    fn curve_files_round_trip(
        rows in proptest::collection::vec((1e-6..1e3f64, 0.0..5.0f64, proptest::option::of(1e-9..1.0f64)), 1..40),
    ) {
        let rows: Vec<CurveRow> = rows
            .into_iter()
            .map(|(m, n, e)| CurveRow {
                mean_photons: io::round_sig12(m),
                nrf: io::round_sig12(n),
                nrf_err: e.map(io::round_sig12),
            })
            .collect();
        let with_err = rows.iter().any(|r| r.nrf_err.is_some());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        io::emit_curve_csv(&rows, &path).unwrap();
        let CountsFile::Aggregated(back) = io::ingest_counts_csv(&path).unwrap() else {
            panic!("expected aggregated layout");
        };
        let expected: Vec<AggregatedRecord> = rows
            .iter()
            .map(|r| AggregatedRecord {
                mean_n: r.mean_photons,
                nrf: r.nrf,
                nrf_err: if with_err { r.nrf_err } else { None },
            })
            .collect();
        prop_assert_eq!(back, expected);
    }
}

#[test]
fn aggregated_file_becomes_a_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("agg.csv");
    let mut text = String::from("# measured\nmean_n,nrf,nrf_err\n");
    for i in 1..=20 {
        text.push_str(&format!("{},{},0.01\n", 0.25 * i as f64, 1.4 - 0.01 * i as f64));
    }
    std::fs::write(&path, text).unwrap();
    let data = io::ingest_dataset_csv(&path, StateKind::TwoModeSv, 5.0).unwrap();
    assert_eq!(data.points.len(), 20);
    assert_eq!(data.state_kind, StateKind::TwoModeSv);
    assert_eq!(data.points[3].nrf_error, Some(0.01));
}

#[test]
fn negative_count_names_the_row() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "pulse,n_s,n_i\n0,1,1\n1,-2,0\n").unwrap();
    match io::ingest_counts_csv(&path) {
        Err(Error::Parse { line, column, .. }) => {
            assert_eq!(line, 3);
            assert_eq!(column, 2);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn empty_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.csv");
    std::fs::write(&path, "").unwrap();
    assert!(matches!(io::ingest_counts_csv(&path), Err(Error::EmptyInput(_))));
}

#[test]
fn identical_configs_give_identical_bytes() {
    let root = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for tag in ["first", "second"] {
        let dir = root.path().join(tag);
        std::fs::create_dir(&dir).unwrap();
        let run = |args: &[&str]| assert!(cli(&dir, args).status.success(), "{args:?}");
        run(&["curve", "--state", "sv", "--eta", "0.145", "--p-ct", "0.3", "--points", "25", "--output", "curve.csv", "--summary", "curve.json"]);
        run(&["simulate", "--state", "coherent", "--mean", "0.8", "--pulses", "70000", "--seed", "12", "--output", "sim.csv", "--summary", "sim.json"]);
        run(&["fit", "--input", "curve.csv", "--state", "sv", "--nmax-candidates", "2,3,4", "--output", "fit.json"]);
        let files: Vec<Vec<u8>> = ["curve.csv", "curve.json", "sim.csv", "sim.json", "fit.json"]
            .iter()
            .map(|f| std::fs::read(dir.join(f)).unwrap())
            .collect();
        outputs.push(files);
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn fit_summary_has_the_expected_keys() {
    let dir = tempfile::tempdir().unwrap();
    assert!(cli(dir.path(), &["curve", "--points", "20", "--output", "c.csv"]).status.success());
    let out = cli(dir.path(), &["fit", "--input", "c.csv", "--nmax-candidates", "3,4"]);
    assert!(out.status.success());
    let json: Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["eta_hat", "p_hat", "n_max_hat", "r_squared"] {
        assert!(json["fit"].get(key).is_some(), "missing {key}");
    }
    assert_eq!(json["fit"]["n_max_hat"], 3);
    assert!(json["version"].is_string());
}

#[test]
fn limits_command_reports_closed_forms() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(dir.path(), &["limits", "--eta", "0.163", "--p-ct", "0.28"]);
    assert!(out.status.success());
    let json: Value = serde_json::from_slice(&out.stdout).unwrap();
    let text = json.to_string();
    assert!(text.contains("1.4375"), "{text}");
}

#[test]
fn convert_divides_by_the_effective_efficiency() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(dir.path(), &["convert", "--mean-counts", "0.34", "--eta-e", "0.17"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.trim(), "2");
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cli(dir.path(), &["limits"]).status.code(), Some(0));
    assert_eq!(cli(dir.path(), &["curve", "--eta", "1.5"]).status.code(), Some(2));
    assert_eq!(cli(dir.path(), &["curve", "--state", "laser"]).status.code(), Some(2));
    std::fs::write(dir.path().join("bad.csv"), "pulse,n_s,n_i\n0,x,1\n").unwrap();
    assert_eq!(cli(dir.path(), &["convert", "--input", "bad.csv"]).status.code(), Some(2));
    assert_eq!(
        cli(dir.path(), &["curve", "--mean-min", "1e7", "--mean-max", "1e8", "--points", "2"]).status.code(),
        Some(3)
    );
    assert_eq!(cli(dir.path(), &["fit", "--input", "missing.csv"]).status.code(), Some(1));
}
