use std::path::PathBuf;
use std::process::{Command, Output};

use dqe_core::circuits::parse_qasm;
use dqe_core::config::ExperimentConfig;

fn dqe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dqe"))
        .args(args)
        .env_remove("DQE_DENSE_LIMIT")
        .output()
        .expect("spawn dqe")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("dqe-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn header_value<'a>(text: &'a str, key: &str) -> &'a str {
    let prefix = format!("# {key} ");
    text.lines()
        .find_map(|l| l.strip_prefix(prefix.as_str()))
        .unwrap_or_else(|| panic!("no {key} header"))
}

const ENSEMBLE: &[&str] = &[
    "ensemble",
    "--heisenberg",
    "2",
    "--agsp",
    "linear",
    "--eps",
    "0.5",
    "--trajectories",
    "50",
    "--seed",
    "11",
];

#[test]
fn ensemble_csv_is_reproducible_across_threads() {
    let a = dqe(&[&["--threads", "1"], ENSEMBLE].concat());
    let b = dqe(&[&["--threads", "2"], ENSEMBLE].concat());
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    assert_eq!(header_value(&text, "dqe"), dqe_core::VERSION);
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(
        rows[0],
        "trajectory_id,stop_step,stopped_run_length,final_energy,final_overlap,truncated"
    );
    assert_eq!(rows.len(), 51);
}

#[test]
fn header_hash_matches_embedded_config_and_ignores_output_path() {
    let path = scratch("ens.csv");
    let out = dqe(&[ENSEMBLE, &["-o", path.to_str().unwrap()]].concat());
    assert!(out.status.success());
    assert!(!stdout(&out).is_empty());
    let file = std::fs::read_to_string(&path).unwrap();
    let cfg = ExperimentConfig::from_json_str(header_value(&file, "config")).unwrap();
    assert_eq!(header_value(&file, "config_hash"), cfg.hash());

    let plain = stdout(&dqe(ENSEMBLE));
    assert_eq!(header_value(&plain, "config_hash"), cfg.hash());
}

#[test]
fn flags_override_config_file_fields() {
    let path = scratch("cfg.json");
    std::fs::write(
        &path,
        r#"{"system": {"builder": "heisenberg", "n": 2}, "agsp": "linear", "eps": 0.4, "seed": 5, "trajectories": 4}"#,
    )
    .unwrap();
    let out = dqe(&["ensemble", "--config", path.to_str().unwrap(), "--seed", "6"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let cfg = ExperimentConfig::from_json_str(header_value(&text, "config")).unwrap();
    assert_eq!(cfg.seed, 6);
    assert_eq!(cfg.eps, Some(0.4));
    assert_eq!(cfg.trajectories, 4);
}

#[test]
fn spectrum_reports_ground_data() {
    let out = dqe(&["spectrum", "--heisenberg", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.lines().any(|l| l.split_whitespace().collect::<Vec<_>>() == ["lambda0", "-3"]));
    assert!(text.lines().any(|l| l.split_whitespace().collect::<Vec<_>>() == ["N", "1"]));
}

#[test]
fn exit_codes_follow_error_classes() {
    let bad_cfg = scratch("bad.json");
    std::fs::write(&bad_cfg, r#"{"system": {"builder": "heisenberg", "n": 2}, "sed": 1}"#).unwrap();
    let out = dqe(&["spectrum", "--config", bad_cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`sed`"));

    assert_eq!(dqe(&["spectrum", "--heisenberg", "2", "--bogus"]).status.code(), Some(2));
    assert_eq!(dqe(&["--threads", "0", "spectrum", "--heisenberg", "2"]).status.code(), Some(2));
    assert_eq!(dqe(&["spectrum", "--heisenberg", "20"]).status.code(), Some(3));
    // ‖K‖ = 1 for the linear AGSP, so its fixed point is not unique
    let fp = dqe(&["fixed-point", "--heisenberg", "2", "--agsp", "linear"]);
    assert_eq!(fp.status.code(), Some(4));
}

#[test]
fn dense_limit_is_read_from_the_environment() {
    let out = Command::new(env!("CARGO_BIN_EXE_dqe"))
        .args(["spectrum", "--heisenberg", "3"])
        .env("DQE_DENSE_LIMIT", "2")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("limit"));
}

#[test]
fn circuit_export_parses_back() {
    let out = dqe(&["circuit", "--heisenberg", "3", "--eps", "0.2", "--term-index", "1"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.starts_with("//"));
    let (nq, prims) = parse_qasm(&text).unwrap();
    assert_eq!(nq, 4);
    assert!(!prims.is_empty());

    let full = dqe(&["circuit", "--heisenberg", "3", "--eps", "0.2", "--full-sweep"]);
    assert!(full.status.success());
    assert!(stdout(&full).len() > text.len());
    assert_eq!(dqe(&["circuit", "--heisenberg", "3"]).status.code(), Some(2));
}

#[test]
fn analytics_csv_has_exact_columns() {
    let out = dqe(&[
        "analytics",
        "--heisenberg",
        "3",
        "--agsp",
        "linear",
        "--eps",
        "0.5",
        "--stopping",
        "run-of-zeros:3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let mut rows = text.lines().filter(|l| !l.starts_with('#'));
    assert_eq!(
        rows.next().unwrap(),
        "system,agsp,resampler,n,exact_overlap,exact_tau,overlap_lower_bound,tau_upper_bound"
    );
    for row in rows {
        let cols: Vec<&str> = row.split(',').collect();
        let ov: f64 = cols[4].parse().unwrap();
        let lb: f64 = cols[6].parse().unwrap();
        assert!(ov >= lb - 1e-12, "{row}");
    }
}
