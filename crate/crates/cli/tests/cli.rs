use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dlcz(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dlcz"))
        .args(args)
        .env_remove("DLCZ_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn with_config(dir: &Path, toml: &str) -> String {
    let path = dir.join("config.toml");
    std::fs::write(&path, toml).unwrap();
    path.to_str().unwrap().to_string()
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("valid json")
}

/// Data rows of a CSV document, comment lines and header dropped.
fn csv_rows(out: &Output) -> (Vec<String>, Vec<Vec<String>>) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

#[test]
fn chsh_default_reaches_tsirelson() {
    let v = json(&dlcz(&["chsh"]));
    assert_eq!(v["schema_version"], 1);
    assert!((v["chsh"].as_f64().unwrap() - 2.0 * 2f64.sqrt()).abs() < 1e-8);
    assert_eq!(v["settings"].as_array().unwrap().len(), 4);
    assert_eq!(v["E_matrix"].as_array().unwrap().len(), 2);
}

#[test]
fn rates_json_has_rate_fields() {
    let v = json(&dlcz(&["rates"]));
    for key in ["kappa_prime", "gamma_prime", "snr", "squeeze", "excitation_prob"] {
        assert!(v[key].is_number(), "{key} missing");
    }
    assert!((v["snr"].as_f64().unwrap() - 40.0).abs() < 1e-9);
}

#[test]
fn rates_csv_is_one_row_with_header() {
    let out = dlcz(&["rates", "--format", "csv"]);
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    assert!(text.starts_with("# schema_version=1\n"));
    let (header, rows) = csv_rows(&out);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].len(), header.len());
    assert_eq!(header[0], "kappa_prime");
}

#[test]
fn zero_detuning_is_a_config_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_config(dir.path(), "[ensemble]\ndetuning = 0.0\n");
    let out = dlcz(&["-c", &cfg, "rates"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ensemble.detuning"));
}

#[test]
fn unknown_key_rejected_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_config(dir.path(), "[repeater]\nswap_eficiency = 0.5\n");
    let out = dlcz(&["-c", &cfg, "chain"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("repeater.swap_eficiency"), "{err}");
}

#[test]
fn malformed_toml_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_config(dir.path(), "[repeater\n");
    assert_eq!(dlcz(&["-c", &cfg, "chain"]).status.code(), Some(2));
    assert_eq!(dlcz(&["-c", "/nonexistent/dlcz.toml", "chain"]).status.code(), Some(2));
}

#[test]
fn dynamics_time_series() {
    let (header, rows) = csv_rows(&dlcz(&["dynamics"]));
    assert_eq!(header, ["t", "pop_collective", "pop_noise_mode", "ratio"]);
    assert!(rows.len() >= 100);
    let t0: f64 = rows[0][0].parse().unwrap();
    let t_end: f64 = rows.last().unwrap()[0].parse().unwrap();
    assert!((t0 / t_end - 0.01).abs() < 1e-6);

    let v = json(&dlcz(&["dynamics", "--format", "json"]));
    let ratio = v["growth_ratio"].as_f64().unwrap();
    let expected = v["expected_ratio"].as_f64().unwrap();
    assert!((ratio / expected - 1.0).abs() < 0.05, "{ratio} vs {expected}");
}

#[test]
fn dynamics_without_spontaneous_emission_leaves_noise_modes_empty() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_config(dir.path(), "[ensemble]\nspont_rate = 0.0\n");
    let (header, rows) = csv_rows(&dlcz(&["-c", &cfg, "dynamics"]));
    let noise = column(&header, "pop_noise_mode");
    for row in &rows {
        assert!(row[noise].parse::<f64>().unwrap().abs() < 1e-12);
    }
}

#[test]
fn chain_columns_and_first_level() {
    let (header, rows) = csv_rows(&dlcz(&["chain"]));
    assert_eq!(header, ["i", "L_i", "c_i", "p_i", "dF_i", "T_i"]);
    assert_eq!(rows.len(), 4);
    // no connection at level 0
    assert_eq!(rows[0][3], "");
    let p1: f64 = rows[1][3].parse().unwrap();
    assert!(p1 > 0.0 && p1 < 1.0);
}

#[test]
fn scaling_reports_direct_baseline() {
    let (header, rows) = csv_rows(&dlcz(&["scaling"]));
    assert_eq!(
        header,
        ["L_over_Latt", "L0_over_Latt", "n", "ratio_compositional", "ratio_closed_form", "ratio_direct"]
    );
    let direct = column(&header, "ratio_direct");
    for row in &rows {
        let v: f64 = row[direct].parse().unwrap();
        assert!((v / 2.688e43 - 1.0).abs() < 1e-3, "{v}");
    }
}

#[test]
fn power_law_optimum_at_m() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_config(dir.path(), "[optimize]\nobjective = \"power_law\"\nm = 2.0\n");
    let v = json(&dlcz(&["-c", &cfg, "optimize"]));
    assert_eq!(v["L0_star"].as_f64().unwrap(), 2.0);
    assert!(v["n_star"].is_null());
}

#[test]
fn compositional_optimum_scans_levels() {
    let v = json(&dlcz(&["optimize"]));
    let n = v["n_star"].as_u64().unwrap();
    assert!((3..=5).contains(&n));
    assert!(!v["scan"].as_array().unwrap().is_empty());
}

#[test]
fn infeasible_distance_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_config(dir.path(), "[scaling]\ndistances = [5000.0]\nmax_levels = 1\n");
    assert_eq!(dlcz(&["-c", &cfg, "scaling"]).status.code(), Some(4));
}

#[test]
fn oversized_truncation_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_config(dir.path(), "[dynamics]\ncutoff = 40\nnoise_modes = 8\n");
    assert_eq!(dlcz(&["-c", &cfg, "dynamics"]).status.code(), Some(3));
}

#[test]
fn teleport_is_faithful() {
    let v = json(&dlcz(&["teleport"]));
    assert!((v["output_fidelity"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert!((v["success_prob"].as_f64().unwrap() - 0.25).abs() < 1e-9);
    assert_eq!(v["patterns"].as_array().unwrap().len(), 4);
}

#[test]
fn ekert_reports_key_and_seed() {
    let v = json(&dlcz(&["ekert", "--seed", "7"]));
    assert_eq!(v["seed"], 7);
    assert_eq!(v["qber"].as_f64().unwrap(), 0.0);
    assert!(v["key_length"].as_u64().unwrap() > 0);
}

#[test]
fn montecarlo_schema() {
    let v = json(&dlcz(&["montecarlo", "--seed", "3"]));
    for key in ["params_echo", "n_trials", "seed", "mean_s", "stddev_s", "ci95_s", "analytic_Tn_s", "ratio"] {
        assert!(!v[key].is_null(), "{key} missing");
    }
    assert_eq!(v["seed"], 3);
    assert_eq!(v["params_echo"]["trials"]["seed"], 3);
    assert!(v["ratio"].as_f64().unwrap() >= 1.0);
}

#[test]
fn montecarlo_independent_of_thread_count() {
    let one = dlcz(&["montecarlo", "--threads", "1"]);
    let eight = dlcz(&["montecarlo", "--threads", "8"]);
    assert!(one.status.success());
    assert_eq!(one.stdout, eight.stdout);
}

#[test]
fn output_dir_override_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let run = || {
        let out = Command::new(env!("CARGO_BIN_EXE_dlcz"))
            .args(["montecarlo", "--trials-out", "trials.csv"])
            .env("DLCZ_OUTPUT_DIR", dir.path())
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(out.stdout.is_empty());
        (
            std::fs::read(dir.path().join("montecarlo.json")).unwrap(),
            std::fs::read(dir.path().join("trials.csv")).unwrap(),
        )
    };
    let first = run();
    let second = run();
    assert_eq!(first, second);
    let trials = String::from_utf8(first.1).unwrap();
    assert_eq!(trials.lines().filter(|l| !l.starts_with('#')).count(), 10_001);
}

#[test]
fn sweep_prepends_key_column() {
    let (header, rows) = csv_rows(&dlcz(&["chain", "--sweep", "repeater.levels=1:3:3"]));
    assert_eq!(header[0], "repeater.levels");
    // levels 0..=n for each swept n
    assert_eq!(rows.len(), 2 + 3 + 4);

    let v = json(&dlcz(&["chsh", "--sweep", "applications.c_n=0:2:3"]));
    let points = v["points"].as_array().unwrap();
    assert_eq!(points.len(), 3);
    for p in points {
        assert!((p["chsh"].as_f64().unwrap() - 2.0 * 2f64.sqrt()).abs() < 1e-8);
    }
}

#[test]
fn bad_sweep_rejected() {
    assert_eq!(dlcz(&["chain", "--sweep", "repeater.levels=1:3"]).status.code(), Some(2));
    assert_eq!(dlcz(&["chain", "--sweep", "repeater.nope=1:3:2"]).status.code(), Some(2));
    assert_eq!(dlcz(&["chain", "--sweep", "repeater.levels=0.5:1:2"]).status.code(), Some(2));
}

#[test]
fn precision_flag_controls_digits() {
    let v = json(&dlcz(&["chsh", "--precision", "3"]));
    assert_eq!(v["chsh"].as_f64().unwrap(), 2.83);
    assert_eq!(dlcz(&["chsh", "--precision", "0"]).status.code(), Some(2));
}

#[test]
fn defaults_parse_back() {
    let out = dlcz(&["defaults"]);
    assert!(out.status.success());
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_config(dir.path(), &String::from_utf8(out.stdout).unwrap());
    assert_eq!(dlcz(&["-c", &cfg, "chain"]).stdout, dlcz(&["chain"]).stdout);
}
