use std::path::{Path, PathBuf};
use std::process::Command;

use gravlab::experiments::{run, Mode, ResultRecord, ScenarioConfig};

fn config(atoms: &[usize], modes: &[usize], channels: &[usize]) -> ScenarioConfig {
    ScenarioConfig {
        atoms: atoms.to_vec(),
        modes: modes.to_vec(),
        channels: channels.to_vec(),
        ..ScenarioConfig::default()
    }
}

fn rows_where<'a>(record: &'a ResultRecord, column: &str, value: f64) -> Vec<&'a Vec<gravlab::experiments::Cell>> {
    let k = record.column(column).unwrap();
    record.rows.iter().filter(|r| r[k].as_f64() == Some(value)).collect()
}

fn value(record: &ResultRecord, row: &[gravlab::experiments::Cell], column: &str) -> f64 {
    row[record.column(column).unwrap()].as_f64().unwrap()
}

fn scratch_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("gravlab-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, json).unwrap();
    path
}

fn gravlab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_gravlab")).args(args).output().unwrap()
}

#[test]
fn scaling_scan_without_errors_adds_prior_and_qfi() {
    let mut c = config(&[10, 100, 1000], &[2], &[0]);
    c.trials = 3;
    let record = run(Mode::ScalingScan, &c).unwrap();
    for row in &record.rows {
        let n = value(&record, row, "atoms");
        // Centered tilt (-1/2, 1/2) against c (I - J/2) with c = N(N+2)/6.
        let expected = 1e4 + n * (n + 2.0) / 12.0;
        let got = value(&record, row, "f_eff_median");
        assert!((got / expected - 1.0).abs() < 1e-10, "N={n}: {got} vs {expected}");
        assert_eq!(value(&record, row, "f_eff_min"), value(&record, row, "f_eff_max"));
    }
}

#[test]
fn scaling_scan_saturates_below_threshold_and_grows_above() {
    let mut c = config(&[1000, 2000, 5000, 10_000], &[4, 6], &[4]);
    c.trials = 10;
    let record = run(Mode::ScalingScan, &c).unwrap();
    for row in rows_where(&record, "modes", 4.0) {
        let f = value(&record, row, "f_eff_median");
        assert!(f <= 5e4 * 5.0, "F_eff {f}");
        assert!(f <= value(&record, row, "ceiling_median") * (1.0 + 1e-9));
    }
    let below = record.checks.iter().find(|c| c.name == "slope L=4 l=4").unwrap();
    let above = record.checks.iter().find(|c| c.name == "slope L=6 l=4").unwrap();
    assert!(below.value < above.value);
    for row in rows_where(&record, "modes", 6.0) {
        assert_eq!(value(&record, row, "qfi_rank"), 5.0);
        assert_eq!(value(&record, row, "rank_predicted"), 5.0);
    }
}

#[test]
fn mode_scan_finds_knee_two_sites_above_channel_count() {
    let c = config(&[10_000], &[2, 3, 4, 5], &[0, 2]);
    let record = run(Mode::ModeScan, &c).unwrap();
    let knee = record.checks.iter().find(|c| c.name == "knee N=10000 l=2 L=4").unwrap();
    assert!(knee.passed, "ratio {}", knee.value);
    let curve = |channels: f64| -> Vec<f64> {
        rows_where(&record, "channels", channels)
            .into_iter()
            .map(|r| value(&record, r, "f_eff_median"))
            .collect()
    };
    let errorless = curve(0.0);
    assert!(errorless.windows(2).all(|w| w[1] / w[0] < 10.0), "{errorless:?}");
    for channels in [0.0, 2.0] {
        let v = curve(channels);
        assert!(v.windows(2).all(|w| w[1] >= w[0]), "l={channels}: {v:?}");
    }
}

#[test]
fn pulse_fmin_single_atom_and_quadratic_growth() {
    let mut c = config(&[1], &[2, 3, 4], &[0]);
    c.trials = 5;
    let record = run(Mode::PulseFmin, &c).unwrap();
    for row in &record.rows {
        assert!(value(&record, row, "f_min_min") >= -1e-12);
    }

    let mut c = config(&[10, 20], &[3], &[0]);
    let record = run(Mode::PulseFmin, &c).unwrap();
    let f = record.column_values("f_min_median").unwrap();
    let ratio = f[1] / f[0];
    assert!((3.0..=5.5).contains(&ratio), "ratio {ratio}");
    let check = record.checks.iter().find(|c| c.name == "f_min N=20 L=3").unwrap();
    assert!(check.passed, "{}", check.value);

    c.atoms = vec![200];
    c.modes = vec![4];
    let record = run(Mode::PulseFmin, &c).unwrap();
    assert!(record.rows.is_empty());
    assert!(record.notices.iter().any(|n| n.contains("skipped N=200 L=4")));
}

#[test]
fn echo_infer_without_errors_reaches_predicted_variance() {
    let mut c = config(&[10], &[3], &[0]);
    c.sigma_err = 0.0;
    c.sigma_phi = 0.02;
    let record = run(Mode::EchoInfer, &c).unwrap();
    assert_eq!(record.rows.len(), 20);
    let check = record.checks.iter().find(|c| c.name == "final variance l=0 L=3").unwrap();
    assert!((0.5..=2.0).contains(&check.value), "{}", check.value);
    assert!(record.passed());
}

#[test]
fn echo_infer_without_phase_time_always_returns_to_start() {
    let mut c = config(&[4], &[3], &[1]);
    c.tau = 0.0;
    c.phi_true = Some(0.0);
    c.trials = 3;
    c.datapoints = 15;
    let record = run(Mode::EchoInfer, &c).unwrap();
    let traces = &record.attachments[0];
    let col = |name: &str| traces.columns.iter().position(|c| c == name).unwrap();
    let outcome = col("outcome_index");
    let seen: Vec<f64> = traces.rows.iter().filter_map(|r| r[outcome].as_f64()).collect();
    assert_eq!(seen.len(), 3 * 15);
    assert!(seen.iter().all(|&o| o == 0.0));
}

#[test]
fn haar_validate_small_system_and_sum_rule() {
    let mut c = config(&[1, 6], &[2, 3], &[0]);
    c.samples = 5000;
    let record = run(Mode::HaarValidate, &c).unwrap();
    let row = record
        .rows
        .iter()
        .find(|r| value(&record, r, "atoms") == 1.0 && value(&record, r, "modes") == 2.0)
        .unwrap();
    assert!((value(&record, row, "predicted_diag_cov") - 1.0 / 6.0).abs() < 1e-12);
    assert!((value(&record, row, "predicted_cross_cov") + 1.0 / 6.0).abs() < 1e-12);
    for row in &record.rows {
        assert!(value(&record, row, "sum_rule").abs() < 1e-9);
    }
    assert!(record.passed());
}

#[test]
fn config_parsing() {
    let c = ScenarioConfig::from_json(r#"{"N": [5], "L": [3], "ell": [1], "sigma_phi": 0.02}"#).unwrap();
    assert_eq!((c.atoms[0], c.modes[0], c.channels[0]), (5, 3, 1));
    assert_eq!(c.sigma_phi, 0.02);
    assert_eq!(c.trials, 20);
    assert!(ScenarioConfig::from_json(r#"{"atoms": [5], "colour": 1}"#).is_err());
    assert!(run(Mode::ScalingScan, &config(&[], &[3], &[0])).is_err());
    assert!(run(Mode::ScalingScan, &config(&[5], &[1], &[0])).is_err());
    let mut wrong = config(&[5], &[3], &[0]);
    wrong.mode = Some(Mode::ModeScan);
    assert!(run(Mode::ScalingScan, &wrong).is_err());
}

#[test]
fn cli_writes_csv_sidecar_and_attachments() {
    let dir = scratch_dir("outputs");
    let cfg = write_config(
        &dir,
        "scenario.json",
        r#"{"atoms": [3], "modes": [3], "channels": [1], "trials": 2, "datapoints": 5, "sigma_err": 0.02, "sigma_phi": 0.02}"#,
    );
    let out = dir.join("echo.csv");
    let status = gravlab(&["echo-infer", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "9"]);
    assert!(
        matches!(status.status.code(), Some(0) | Some(2)),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("# gravlab"));
    assert!(csv.contains("# seed=9"));
    let sidecar = ResultRecord::from_json(&std::fs::read_to_string(dir.join("echo.json")).unwrap()).unwrap();
    assert_eq!(sidecar.seed, 9);
    assert_eq!(sidecar.config.datapoints, 5);
    assert_eq!(sidecar.rows.len(), 2);
    let traces = std::fs::read_to_string(dir.join("echo.traces.csv")).unwrap();
    assert_eq!(traces.lines().count(), 1 + 2 * 6);
    assert!(dir.join("echo.van-trees.csv").exists());
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn cli_exit_codes() {
    let dir = scratch_dir("codes");
    let good = write_config(&dir, "good.json", r#"{"atoms": [1, 2], "modes": [2], "samples": 500}"#);
    let res = gravlab(&["haar-validate", "--config", good.to_str().unwrap(), "--threads", "1"]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(String::from_utf8_lossy(&res.stdout).contains("mean_diag_cov"));
    assert!(String::from_utf8_lossy(&res.stderr).contains("PASS haar means N=1 L=2"));

    // Short preparation leaves the state far from typical: the F_min check fails.
    let short = write_config(&dir, "short.json", r#"{"atoms": [10], "modes": [3], "total_time": 0.5, "trials": 3}"#);
    let res = gravlab(&["pulse-fmin", "--config", short.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("FAIL f_min"));

    let unknown = write_config(&dir, "unknown.json", r#"{"atoms": [10], "bogus": true}"#);
    let res = gravlab(&["pulse-fmin", "--config", unknown.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));

    let res = gravlab(&["pulse-fmin", "--config", dir.join("missing.json").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));

    let mismatch = write_config(&dir, "mismatch.json", r#"{"mode": "mode-scan", "atoms": [10], "modes": [3]}"#);
    let res = gravlab(&["pulse-fmin", "--config", mismatch.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn same_seed_gives_identical_records() {
    let dir = scratch_dir("determinism");
    let cfg = write_config(
        &dir,
        "scan.json",
        r#"{"atoms": [2, 4], "modes": [3], "channels": [1], "trials": 4, "datapoints": 10}"#,
    );
    let run_once = |threads: &str, name: &str| {
        let out = dir.join(name);
        let res = gravlab(&[
            "echo-infer",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--threads",
            threads,
        ]);
        assert!(matches!(res.status.code(), Some(0) | Some(2)));
        let mut sidecar = ResultRecord::from_json(&std::fs::read_to_string(out.with_extension("json")).unwrap()).unwrap();
        sidecar.elapsed_seconds = 0.0;
        sidecar.config.output = None;
        (
            std::fs::read(&out).unwrap(),
            std::fs::read(out.with_extension("traces.csv")).unwrap(),
            sidecar,
        )
    };
    let a = run_once("1", "a.csv");
    let b = run_once("3", "b.csv");
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
    std::fs::remove_dir_all(dir).ok();
}
