//! Behavioral tests of the installed binary: exit codes, fixture
//! resolution, determinism, and file outputs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cryonoise"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary should spawn")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn repo_data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/v1").join(name)
}

#[test]
fn cascade_demo_chain_prints_the_stage_table() {
    let out = run(&["cascade", "--table1", "--freq", "5e9"]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "stage,T_K,A_lump_dB,length_m,alpha_dB_per_m,A_tot_dB,N_photons"
    );
    let last = text.lines().last().unwrap();
    assert!(last.starts_with("ColdFinger,"), "unexpected last row: {last}");
}

#[test]
fn missing_chain_and_conflicting_flags_are_usage_errors() {
    let out = run(&["cascade"]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("chain.json");
    std::fs::write(&cfg, r#"{"source_temperature_k": 295.0, "stages": []}"#).unwrap();
    let out = run(&["cascade", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("no stages"));

    let out = run(&["cascade", "--table1", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_keys_are_rejected_with_their_paths() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("chain.json");
    std::fs::write(
        &cfg,
        r#"{"source_temperature_k": 295.0, "stages": [
            {"name": "a", "temperature_k": 4.0, "a_lump_db": 10.0,
             "length_m": 0.0, "alpha_db_per_m": 0.0, "color": "red"}]}"#,
    )
    .unwrap();
    let out = run(&["cascade", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("stages.0.color"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn malformed_sweep_data_exits_three_with_a_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sweep.csv");
    std::fs::write(
        &csv,
        "freq_hz,T_vts_K,psd_W_per_Hz\n4e9,0.02,1e-15\n4e9,abc,1e-15\n",
    )
    .unwrap();
    let out = run(&["planck-fit", "--sweep", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("line 3"), "stderr: {}", stderr(&out));
}

#[test]
fn explicit_ideal_source_matches_the_default() {
    let default = run(&["planck-fit"]);
    let explicit = run(&["planck-fit", "--source", "ideal"]);
    assert!(default.status.success());
    assert_eq!(stdout(&default), stdout(&explicit));
}

#[test]
fn qualification_failure_exits_four() {
    let mut cfg: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(repo_data("protocol_demo.json")).unwrap(),
    )
    .unwrap();
    cfg["cryostat"]["vts"]["attenuation_db"] = serde_json::json!(3.0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad_vts.json");
    std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let out = run(&["protocol", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("qualification"));
}

#[test]
fn protocol_reports_are_bit_identical_and_replayable() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out_dir in [&out_a, &out_b] {
        let out = run(&["protocol", "--out", out_dir.to_str().unwrap()]);
        assert!(out.status.success(), "stderr: {}", stderr(&out));
    }
    let report_a = std::fs::read(out_a.join("protocol_report.json")).unwrap();
    let report_b = std::fs::read(out_b.join("protocol_report.json")).unwrap();
    assert_eq!(report_a, report_b, "same seed must give identical bytes");

    let replay = run(&[
        "protocol",
        "--replay",
        out_a.join("protocol_report.json").to_str().unwrap(),
    ]);
    assert!(replay.status.success(), "stderr: {}", stderr(&replay));
    assert!(stdout(&replay).contains("replay ok"));

    // A different seed must change the raw digest.
    let out_c = dir.path().join("c");
    let out = run(&["protocol", "--seed", "99", "--out", out_c.to_str().unwrap()]);
    assert!(out.status.success());
    let report_c = std::fs::read(out_c.join("protocol_report.json")).unwrap();
    assert_ne!(report_a, report_c);
}

#[test]
fn corrected_fixture_device_matches_its_stored_truth() {
    use cryonoise::sparams::touchstone::parse_two_port;
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["solr", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let corrected = parse_two_port(
        &std::fs::read_to_string(dir.path().join("dut_corrected.s2p")).unwrap(),
    )
    .unwrap();
    let truth = parse_two_port(
        &std::fs::read_to_string(repo_data("solr/dut_true.s2p")).unwrap(),
    )
    .unwrap();
    for (have, want) in corrected.points.iter().zip(&truth.points) {
        for (h, w) in [
            (have.s11, want.s11),
            (have.s21, want.s21),
            (have.s12, want.s12),
            (have.s22, want.s22),
        ] {
            assert!((h - w).norm() < 1e-10, "corrected {h} vs truth {w}");
        }
    }
}

#[test]
fn data_dir_override_is_honoured_and_missing_files_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    // Point the override at a directory missing the fixture entirely.
    let out = bin()
        .args(["bias"])
        .env("CRYONOISE_DATA_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr(&out));

    // Provide a modified fixture: no spur modes means zero distortion.
    let mut cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(repo_data("bias_demo.json")).unwrap())
            .unwrap();
    let modes = cfg["modes"].as_array().unwrap().clone();
    cfg["modes"] = serde_json::Value::Array(
        modes
            .into_iter()
            .filter(|m| {
                let n = m["n"].as_i64().unwrap();
                n == 0 || n == -1
            })
            .collect(),
    );
    std::fs::write(
        dir.path().join("bias_demo.json"),
        serde_json::to_string(&cfg).unwrap(),
    )
    .unwrap();
    let out = bin()
        .args(["bias"])
        .env("CRYONOISE_DATA_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(
        stdout(&out).contains("beta = 0e0"),
        "stdout: {}",
        stdout(&out)
    );
}

#[test]
fn outputs_are_overwritten_atomically_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    for _ in 0..2 {
        let out = run(&["cascade", "--table1", "--out", dir.path().to_str().unwrap()]);
        assert!(out.status.success());
    }
    let table = std::fs::read_to_string(dir.path().join("cascade_stage_table.csv")).unwrap();
    assert!(table.starts_with("stage,"));
    assert!(
        !dir.path().join("cascade_stage_table.csv.tmp").exists(),
        "temp file must not survive"
    );
}
