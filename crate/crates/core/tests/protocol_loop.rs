//! The full protocol against the simulated cryostat under realistic
//! measurement noise: reported uncertainties must cover the hidden truth,
//! and reports must survive a serialization round trip and replay.

use cryonoise::protocol::{replay, run_protocol, CryostatConfig, MeasurementPlan, VirtualCryostat};

fn noisy_config(seed: u64) -> CryostatConfig {
    let mut config = CryostatConfig::demo();
    config.noise.sparam_sigma = 1e-4;
    config.noise.psd_rel_sigma = 1e-3;
    config.noise.seed = seed;
    config
}

fn plan() -> MeasurementPlan {
    let temps: Vec<f64> = (0..10).map(|i| 0.05 + 1.45 * i as f64 / 9.0).collect();
    MeasurementPlan::new(vec![4e9, 5e9, 6e9], temps).unwrap()
}

/// 200 independently seeded noisy runs; the extracted added noise must sit
/// inside its own three-sigma band around the hidden truth in at least 95 %
/// of the frequency points.
#[test]
fn noisy_runs_report_honest_added_noise_uncertainties() {
    let plan = plan();
    let truth = CryostatConfig::demo().dut.n_add;
    let mut covered = 0usize;
    let mut total = 0usize;
    for seed in 0..200u64 {
        let cryostat = VirtualCryostat::new(noisy_config(seed)).unwrap();
        let report = run_protocol(&cryostat, &plan).unwrap();
        for p in &report.derived.added_noise.points {
            assert!(!p.flagged_negative, "seed {seed}: unphysical extraction");
            total += 1;
            if (p.n_add - truth).abs() <= 3.0 * p.sigma_n_add {
                covered += 1;
            }
        }
    }
    assert!(
        covered * 100 >= total * 95,
        "only {covered}/{total} points inside 3 sigma"
    );
}

#[test]
fn noisy_report_replays_after_a_json_round_trip() {
    let cryostat = VirtualCryostat::new(noisy_config(31)).unwrap();
    let report = run_protocol(&cryostat, &plan()).unwrap();

    let text = serde_json::to_string(&report).unwrap();
    let restored: cryonoise::protocol::CalibrationReport = serde_json::from_str(&text).unwrap();
    assert_eq!(restored, report);

    let rederived = replay(&restored).unwrap();
    assert_eq!(rederived, report.derived);
}
