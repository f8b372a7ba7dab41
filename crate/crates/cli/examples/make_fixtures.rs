//! Regenerates the bundled fixtures under `data/v1/`.
//!
//! Everything here is deterministic, so re-running leaves the tree
//! unchanged unless the toolkit itself changed:
//!
//! ```text
//! cargo run -p cryonoise-cli --example make_fixtures
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cryonoise::bias::demo_config;
use cryonoise::constants::{boltzmann, hbar};
use cryonoise::physics::{planck_occupation, Frequency};
use cryonoise::planck::{write_sweep_csv, PlanckSweep, SweepRecord, SweepSource};
use cryonoise::protocol::{CryostatConfig, MeasurementPlan};
use cryonoise::sparams::cal::{embed, ErrorBoxes, ErrorPoint};
use cryonoise::sparams::touchstone::{write_two_port, FreqUnit, NumberFormat};
use cryonoise::sparams::{SPoint, TwoPort};
use cryonoise::thermal::ChainSpec;

type C = Complex<f64>;

fn polar(rng: &mut ChaCha8Rng, mag_lo: f64, mag_hi: f64) -> C {
    let mag = rng.random_range(mag_lo..mag_hi);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    Complex::from_polar(mag, phase)
}

/// Reciprocity-consistent eight-term boxes for the calibration fixture.
fn fixture_boxes(rng: &mut ChaCha8Rng, freqs_hz: &[f64]) -> ErrorBoxes<f64> {
    let points = freqs_hz
        .iter()
        .map(|&f| {
            let e10e01 = polar(rng, 0.7, 1.0);
            let e23e32 = polar(rng, 0.7, 1.0);
            let e10e32 = (e10e01 * e23e32).sqrt();
            ErrorPoint {
                freq_hz: f,
                e00: polar(rng, 0.03, 0.15),
                e11: polar(rng, 0.03, 0.15),
                e10e01,
                e33: polar(rng, 0.03, 0.15),
                e22: polar(rng, 0.03, 0.15),
                e23e32,
                e10e32,
                e23e01: e10e01 * e23e32 / e10e32,
            }
        })
        .collect();
    ErrorBoxes { z0_ohm: 50.0, points }
}

fn fixture_device(rng: &mut ChaCha8Rng, freqs_hz: &[f64]) -> TwoPort<f64> {
    let points = freqs_hz
        .iter()
        .map(|_| {
            SPoint::new(
                polar(rng, 0.02, 0.25),
                polar(rng, 0.3, 0.9),
                polar(rng, 0.3, 0.9),
                polar(rng, 0.02, 0.25),
            )
        })
        .collect();
    TwoPort::new(50.0, freqs_hz.to_vec(), points).unwrap()
}

fn reflect_net(gamma: C, freqs_hz: &[f64]) -> TwoPort<f64> {
    let points = freqs_hz.iter().map(|_| SPoint::reflect(gamma)).collect();
    TwoPort::new(50.0, freqs_hz.to_vec(), points).unwrap()
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/v1");

    // Input-line budget: the built-in demonstration chain as an editable
    // starting point for custom configs.
    let chain = ChainSpec::<f64>::demo_input_line();
    write(
        &root.join("table1_chain.json"),
        &format!("{}\n", serde_json::to_string_pretty(&chain)?),
    )?;

    // Serial-calibration demo: 20 dB device, lossless source paths.
    let bias = demo_config::<f64>(20.0, None)?;
    write(
        &root.join("bias_demo.json"),
        &format!("{}\n", serde_json::to_string_pretty(&bias)?),
    )?;

    // Noiseless temperature sweep of a 70.9 dB / 4.65 K chain.
    let gsys = 10f64.powf(70.9 / 10.0);
    let tsys_k = 4.65;
    let freqs = vec![4e9, 5e9, 6e9];
    let records = (0..10)
        .map(|i| {
            let t = 0.02 + (2.0 - 0.02) * f64::from(i) / 9.0;
            let psd = freqs
                .iter()
                .map(|&f_hz| {
                    let f = Frequency::new(f_hz).unwrap();
                    let hw = hbar::<f64>() * std::f64::consts::TAU * f_hz;
                    gsys * (hw * planck_occupation(f, t).unwrap() + boltzmann::<f64>() * tsys_k)
                })
                .collect();
            SweepRecord { t_vts_k: t, psd_w_per_hz: psd }
        })
        .collect();
    let sweep = PlanckSweep::new(freqs, records, SweepSource::Ideal)?;
    write(&root.join("planck_sweep.csv"), &write_sweep_csv(&sweep)?)?;

    // SOLR round-trip set: raw standards and one raw device, all synthesized
    // through one fixed pair of error boxes, plus the device truth.
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let grid: Vec<f64> = (1..=8).map(|k| f64::from(k) * 1e9).collect();
    let boxes = fixture_boxes(&mut rng, &grid);
    let dut = fixture_device(&mut rng, &grid);
    let s2p = |net: &TwoPort<f64>| write_two_port(net, FreqUnit::GHz, NumberFormat::Ri);
    let solr = root.join("solr");
    write(
        &solr.join("raw_short.s2p"),
        &s2p(&embed(&reflect_net(C::new(-1.0, 0.0), &grid), &boxes)?),
    )?;
    write(
        &solr.join("raw_open.s2p"),
        &s2p(&embed(&reflect_net(C::new(1.0, 0.0), &grid), &boxes)?),
    )?;
    write(
        &solr.join("raw_load.s2p"),
        &s2p(&embed(&reflect_net(C::new(0.0, 0.0), &grid), &boxes)?),
    )?;
    write(
        &solr.join("raw_thru.s2p"),
        &s2p(&embed(&TwoPort::ideal_thru(grid.clone())?, &boxes)?),
    )?;
    write(&solr.join("raw_dut.s2p"), &s2p(&embed(&dut, &boxes)?))?;
    write(&solr.join("dut_true.s2p"), &s2p(&dut))?;

    // End-to-end protocol demo: the stock simulator plus a realistic plan.
    let plan = MeasurementPlan::new(
        vec![4e9, 5e9, 6e9],
        (0..8).map(|i| 0.05 + 1.45 * f64::from(i) / 7.0).collect(),
    )?;
    let demo = serde_json::json!({
        "cryostat": CryostatConfig::demo(),
        "plan": plan,
    });
    write(
        &root.join("protocol_demo.json"),
        &format!("{}\n", serde_json::to_string_pretty(&demo)?),
    )?;

    Ok(())
}
