//! Randomized embed/calibrate/de-embed round trips through the eight-term
//! error model.

use cryonoise::sparams::cal::{
    calibrate_solr, deembed, embed, ErrorBoxes, ErrorPoint, OnePortStandards,
};
use cryonoise::sparams::{SPoint, TwoPort};
use num_complex::Complex;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

type C = Complex<f64>;

fn polar(rng: &mut ChaCha8Rng, mag_lo: f64, mag_hi: f64) -> C {
    let mag = rng.random_range(mag_lo..mag_hi);
    let phase = rng.random_range(0.0..TAU);
    Complex::from_polar(mag, phase)
}

/// Random eight-term boxes obeying the reciprocity constraint
/// `e10e32 · e23e01 = e10e01 · e23e32` that any pair of physical fixtures
/// satisfies.
fn random_boxes(rng: &mut ChaCha8Rng, freqs_hz: &[f64]) -> ErrorBoxes<f64> {
    let points = freqs_hz
        .iter()
        .map(|&f| {
            let e10e01 = polar(rng, 0.6, 1.1);
            let e23e32 = polar(rng, 0.6, 1.1);
            let sign = if rng.random_range(0..2) == 0 { 1.0 } else { -1.0 };
            let e10e32 = (e10e01 * e23e32).sqrt() * sign;
            ErrorPoint {
                freq_hz: f,
                e00: polar(rng, 0.02, 0.3),
                e11: polar(rng, 0.02, 0.3),
                e10e01,
                e33: polar(rng, 0.02, 0.3),
                e22: polar(rng, 0.02, 0.3),
                e23e32,
                e10e32,
                e23e01: e10e01 * e23e32 / e10e32,
            }
        })
        .collect();
    ErrorBoxes {
        z0_ohm: 50.0,
        points,
    }
}

fn random_device(rng: &mut ChaCha8Rng, freqs_hz: &[f64]) -> TwoPort<f64> {
    let points = freqs_hz
        .iter()
        .map(|_| {
            SPoint::new(
                polar(rng, 0.0, 0.4),
                polar(rng, 0.1, 0.9),
                polar(rng, 0.1, 0.9),
                polar(rng, 0.0, 0.4),
            )
        })
        .collect();
    TwoPort::new(50.0, freqs_hz.to_vec(), points).unwrap()
}

fn reflect_net(gamma: C, freqs_hz: &[f64]) -> TwoPort<f64> {
    let points = freqs_hz.iter().map(|_| SPoint::reflect(gamma)).collect();
    TwoPort::new(50.0, freqs_hz.to_vec(), points).unwrap()
}

/// Synthesizes the four raw standard measurements a real instrument would
/// record through `truth`, solves the calibration, and returns the boxes.
fn calibrate_through(truth: &ErrorBoxes<f64>, freqs_hz: &[f64]) -> ErrorBoxes<f64> {
    let raw_short = embed(&reflect_net(C::new(-1.0, 0.0), freqs_hz), truth).unwrap();
    let raw_open = embed(&reflect_net(C::new(1.0, 0.0), freqs_hz), truth).unwrap();
    let raw_load = embed(&reflect_net(C::new(0.0, 0.0), freqs_hz), truth).unwrap();
    let raw_thru = embed(&TwoPort::ideal_thru(freqs_hz.to_vec()).unwrap(), truth).unwrap();
    calibrate_solr(
        &raw_short,
        &raw_open,
        &raw_load,
        &raw_thru,
        &OnePortStandards::ideal(),
        None,
    )
    .unwrap()
}

#[test]
fn hundred_random_fixture_pairs_round_trip_to_ten_digits() {
    let freqs: Vec<f64> = (1..=9).map(|k| k as f64 * 1e9).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1805);
    for pair in 0..100 {
        let truth = random_boxes(&mut rng, &freqs);
        let device = random_device(&mut rng, &freqs);
        let solved = calibrate_through(&truth, &freqs);
        let raw_dut = embed(&device, &truth).unwrap();
        let corrected = deembed(&raw_dut, &solved).unwrap();
        for (have, want) in corrected.network.points.iter().zip(&device.points) {
            for (h, w) in [
                (have.s11, want.s11),
                (have.s21, want.s21),
                (have.s12, want.s12),
                (have.s22, want.s22),
            ] {
                assert!(
                    (h - w).norm() < 1e-10,
                    "pair {pair}: corrected {h} vs true {w}"
                );
            }
        }
    }
}

/// Ideal fixtures must calibrate to a transparent correction: a device
/// measured through nothing comes back unchanged.
#[test]
fn ideal_fixture_calibration_is_a_passthrough() {
    let freqs: Vec<f64> = (1..=9).map(|k| k as f64 * 1e9).collect();
    let identity = ErrorBoxes::identity(50.0, &freqs);
    let solved = calibrate_through(&identity, &freqs);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let device = random_device(&mut rng, &freqs);
    let corrected = deembed(&device, &solved).unwrap();
    for (have, want) in corrected.network.points.iter().zip(&device.points) {
        for (h, w) in [
            (have.s11, want.s11),
            (have.s21, want.s21),
            (have.s12, want.s12),
            (have.s22, want.s22),
        ] {
            assert!((h - w).norm() < 1e-10, "passthrough broke: {h} vs {w}");
        }
    }
}
