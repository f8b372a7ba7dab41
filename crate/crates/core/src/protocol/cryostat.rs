//! Simulated cryostat backing the protocol runner.
//!
//! The simulator owns ground-truth models (device, readout chain, thermal
//! stage, error boxes) that stay private; the only way data leaves is
//! through [`InstrumentSuite`] calls, which return what real instruments
//! would see: S-parameters embedded in the error boxes and detection-plane
//! PSDs, both with optional seeded Gaussian noise. A simulated clock
//! advances with every operation, and the temperature stage settles
//! exponentially toward its setpoint before the servo holds it.

use std::sync::Mutex;

use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{InstrumentCall, InstrumentSuite, LogEvent, Provenance, SwitchThrow};
use crate::constants::BOLTZMANN;
use crate::error::{Error, Result};
use crate::physics::{db_to_linear, planck_occupation, Frequency};
use crate::sparams::cal::{embed, ErrorBoxes, ErrorPoint};
use crate::sparams::{SPoint, TwoPort};

/// Ground truth of the device under test. Reflections and transmissions
/// pick up linear phase from `delay_ps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DutModel {
    pub gain_db: f64,
    /// True input-referred added noise, photons.
    pub n_add: f64,
    pub s11_mag: f64,
    pub s22_mag: f64,
    /// Reverse isolation, positive dB.
    pub isolation_db: f64,
    pub delay_ps: f64,
}

/// Ground truth of the linear readout chain behind the device plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadoutModel {
    pub gsys_db: f64,
    pub tsys_k: f64,
}

/// Ground truth of the variable-temperature stage: a matched attenuator
/// with a heater, thermometer, and first-order thermal settling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VtsModel {
    pub attenuation_db: f64,
    pub s11_mag: f64,
    pub s22_mag: f64,
    pub delay_ps: f64,
    pub initial_temperature_k: f64,
    pub time_constant_s: f64,
}

/// One error box of the raw measurement path, smooth in frequency: fixed
/// magnitudes with linear phase set by `delay_ps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBoxModel {
    pub directivity_mag: f64,
    pub source_match_mag: f64,
    pub tracking_mag: f64,
    pub delay_ps: f64,
}

/// Measurement-noise levels. Zero sigmas give a noiseless instrument; the
/// seed makes noisy runs reproducible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Standard deviation of additive complex Gaussian noise per raw
    /// S-parameter entry.
    pub sparam_sigma: f64,
    /// Relative standard deviation of PSD readings before averaging.
    pub psd_rel_sigma: f64,
    pub seed: u64,
}

/// Full simulator configuration. All values here are hidden ground truth;
/// the protocol runner only ever sees instrument responses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CryostatConfig {
    pub dut: DutModel,
    pub readout: ReadoutModel,
    pub vts: VtsModel,
    pub input_box: ErrorBoxModel,
    pub output_box: ErrorBoxModel,
    /// Occupation entering the device/stage input from the drive line.
    pub input_occupation: f64,
    pub noise: NoiseModel,
    pub z0_ohm: f64,
}

impl CryostatConfig {
    /// A representative noiseless setup: 20 dB quantum-limited-ish device
    /// with one photon of added noise, a 70.9 dB readout at 4.65 K, and a
    /// 20 dB thermal stage parked at 20 mK.
    pub fn demo() -> Self {
        Self {
            dut: DutModel {
                gain_db: 20.0,
                n_add: 1.0,
                s11_mag: 0.05,
                s22_mag: 0.07,
                isolation_db: 30.0,
                delay_ps: 50.0,
            },
            readout: ReadoutModel {
                gsys_db: 70.9,
                tsys_k: 4.65,
            },
            vts: VtsModel {
                attenuation_db: 20.0,
                s11_mag: 0.03,
                s22_mag: 0.05,
                delay_ps: 80.0,
                initial_temperature_k: 0.02,
                time_constant_s: 3.0,
            },
            input_box: ErrorBoxModel {
                directivity_mag: 0.08,
                source_match_mag: 0.12,
                tracking_mag: 0.85,
                delay_ps: 300.0,
            },
            output_box: ErrorBoxModel {
                directivity_mag: 0.06,
                source_match_mag: 0.10,
                tracking_mag: 0.80,
                delay_ps: 420.0,
            },
            input_occupation: 0.5,
            noise: NoiseModel {
                sparam_sigma: 0.0,
                psd_rel_sigma: 0.0,
                seed: 7,
            },
            z0_ohm: 50.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (label, mag) in [
            ("dut s11", self.dut.s11_mag),
            ("dut s22", self.dut.s22_mag),
            ("vts s11", self.vts.s11_mag),
            ("vts s22", self.vts.s22_mag),
        ] {
            if !(mag.is_finite() && (0.0..=1.0).contains(&mag)) {
                return Err(Error::Domain(format!(
                    "{label} magnitude must lie in [0, 1], got {mag}"
                )));
            }
        }
        if !(self.vts.initial_temperature_k.is_finite() && self.vts.initial_temperature_k >= 0.0) {
            return Err(Error::Domain(
                "stage initial temperature must be finite and non-negative".into(),
            ));
        }
        if !(self.vts.time_constant_s > 0.0) {
            return Err(Error::Domain("stage time constant must be positive".into()));
        }
        if !(self.input_occupation.is_finite() && self.input_occupation >= 0.0) {
            return Err(Error::Domain(
                "input occupation must be finite and non-negative".into(),
            ));
        }
        if !(self.noise.sparam_sigma >= 0.0 && self.noise.psd_rel_sigma >= 0.0) {
            return Err(Error::Domain("noise sigmas must be non-negative".into()));
        }
        if !(self.z0_ohm.is_finite() && self.z0_ohm > 0.0) {
            return Err(Error::Domain("reference impedance must be positive".into()));
        }
        Ok(())
    }
}

/// Thermal state of the stage: exponential approach from `from_k` toward
/// `target_k` starting at `since_s`; once the servo reports stable it holds
/// the setpoint exactly.
#[derive(Clone, Copy, Debug)]
struct StageState {
    target_k: f64,
    from_k: f64,
    since_s: f64,
    held: bool,
}

#[derive(Debug)]
struct CryoState {
    clock_s: f64,
    throw: SwitchThrow,
    stage: StageState,
    rng: ChaCha8Rng,
}

/// Simulated backend implementing [`InstrumentSuite`]. Instrument methods
/// take `&self`; internal state sits behind mutexes so a monitoring thread
/// may read the run log while a run is in progress.
pub struct VirtualCryostat {
    config: CryostatConfig,
    config_sha256: String,
    state: Mutex<CryoState>,
    log: Mutex<Vec<LogEvent>>,
}

/// Simulated durations of instrument operations, seconds.
const SELECT_TIME_S: f64 = 0.5;
const SET_TIME_S: f64 = 0.1;
const READ_TIME_S: f64 = 0.05;
const SPARAM_TIME_PER_POINT_S: f64 = 0.02;
const PSD_TIME_PER_POINT_S: f64 = 0.01;

impl VirtualCryostat {
    pub fn new(config: CryostatConfig) -> Result<Self> {
        config.validate()?;
        let canonical = serde_json::to_vec(&config)
            .map_err(|e| Error::Instrument(format!("config not serializable: {e}")))?;
        let config_sha256 = super::sha256_hex(&canonical);
        let stage = StageState {
            target_k: config.vts.initial_temperature_k,
            from_k: config.vts.initial_temperature_k,
            since_s: 0.0,
            held: true,
        };
        let rng = ChaCha8Rng::seed_from_u64(config.noise.seed);
        Ok(Self {
            config,
            config_sha256,
            state: Mutex::new(CryoState {
                clock_s: 0.0,
                throw: SwitchThrow::Thru,
                stage,
                rng,
            }),
            log: Mutex::new(Vec::new()),
        })
    }

    fn log_call(&self, time_s: f64, call: InstrumentCall) {
        let mut log = self.log.lock().expect("log lock");
        let seq = log.len() as u64;
        log.push(LogEvent { seq, time_s, call });
    }

    /// True S-parameters of the element a throw routes between the planes.
    fn true_sparams(&self, throw: SwitchThrow, f_hz: f64) -> SPoint<f64> {
        let phase = |delay_ps: f64, scale: f64, offset: f64| -> Complex<f64> {
            Complex::from_polar(
                1.0,
                -2.0 * std::f64::consts::PI * f_hz * delay_ps * 1e-12 * scale + offset,
            )
        };
        match throw {
            SwitchThrow::Short => SPoint::reflect(Complex::new(-1.0, 0.0)),
            SwitchThrow::Open => SPoint::reflect(Complex::new(1.0, 0.0)),
            SwitchThrow::Load => SPoint::reflect(Complex::new(0.0, 0.0)),
            SwitchThrow::Thru => SPoint::ideal_thru(),
            SwitchThrow::Dut => {
                let d = &self.config.dut;
                let s21 = db_to_linear(d.gain_db).sqrt() * phase(d.delay_ps, 1.0, 0.0);
                let s12 = db_to_linear(-d.isolation_db).sqrt() * phase(d.delay_ps, 1.0, 0.0);
                let s11 = d.s11_mag * phase(d.delay_ps, 0.25, 0.2);
                let s22 = d.s22_mag * phase(d.delay_ps, 0.35, 0.5);
                SPoint::new(s11, s12, s21, s22)
            }
            SwitchThrow::Vts => {
                let v = &self.config.vts;
                let thru = db_to_linear(-v.attenuation_db).sqrt() * phase(v.delay_ps, 1.0, 0.0);
                let s11 = v.s11_mag * phase(v.delay_ps, 0.3, 0.0);
                let s22 = v.s22_mag * phase(v.delay_ps, 0.4, 0.3);
                SPoint::new(s11, thru, thru, s22)
            }
        }
    }

    fn error_boxes(&self, freqs_hz: &[f64]) -> ErrorBoxes<f64> {
        let polar = |mag: f64, f_hz: f64, delay_ps: f64, scale: f64, offset: f64| {
            Complex::from_polar(
                mag,
                -2.0 * std::f64::consts::PI * f_hz * delay_ps * 1e-12 * scale + offset,
            )
        };
        let a = &self.config.input_box;
        let b = &self.config.output_box;
        let points = freqs_hz
            .iter()
            .map(|&f| {
                let e10e01 = polar(a.tracking_mag, f, a.delay_ps, 1.0, 0.0);
                let e23e32 = polar(b.tracking_mag, f, b.delay_ps, 1.0, 0.0);
                let e10e32 = polar(
                    (a.tracking_mag * b.tracking_mag).sqrt(),
                    f,
                    0.5 * (a.delay_ps + b.delay_ps),
                    1.0,
                    0.0,
                );
                ErrorPoint {
                    freq_hz: f,
                    e00: polar(a.directivity_mag, f, a.delay_ps, 0.6, 0.4),
                    e11: polar(a.source_match_mag, f, a.delay_ps, 0.8, 1.1),
                    e10e01,
                    e33: polar(b.directivity_mag, f, b.delay_ps, 0.6, 0.7),
                    e22: polar(b.source_match_mag, f, b.delay_ps, 0.8, 1.9),
                    e23e32,
                    e10e32,
                    e23e01: e10e01 * e23e32 / e10e32,
                }
            })
            .collect();
        ErrorBoxes {
            z0_ohm: self.config.z0_ohm,
            points,
        }
    }

    /// Detection-plane PSD for one throw at one frequency, W/Hz.
    fn true_psd(&self, throw: SwitchThrow, f_hz: f64, stage_temp_k: f64) -> Result<f64> {
        let f = Frequency::new(f_hz)?;
        let hw = f.photon_energy();
        let n_in = self.config.input_occupation;
        let occupation = match throw {
            SwitchThrow::Dut => {
                let g = db_to_linear(self.config.dut.gain_db);
                g * (n_in + self.config.dut.n_add)
            }
            SwitchThrow::Vts => {
                let v = &self.config.vts;
                let transmit_sq = db_to_linear(-v.attenuation_db);
                let reflect_sq = v.s22_mag * v.s22_mag;
                (1.0 - reflect_sq) * planck_occupation(f, stage_temp_k)? + transmit_sq * n_in
            }
            SwitchThrow::Thru => n_in,
            // Reflective standards bounce the readout's own backaction; to
            // this linear model the detection plane just sees vacuum.
            SwitchThrow::Short | SwitchThrow::Open | SwitchThrow::Load => 0.5,
        };
        let gsys = db_to_linear(self.config.readout.gsys_db);
        Ok(gsys * (hw * occupation + BOLTZMANN * self.config.readout.tsys_k))
    }
}

impl InstrumentSuite for VirtualCryostat {
    fn select(&self, throw: SwitchThrow) -> Result<()> {
        let mut state = self.state.lock().expect("state lock");
        state.clock_s += SELECT_TIME_S;
        state.throw = throw;
        let t = state.clock_s;
        drop(state);
        self.log_call(t, InstrumentCall::Select { throw });
        Ok(())
    }

    fn set_temperature(&self, kelvin: f64) -> Result<()> {
        if !(kelvin.is_finite() && kelvin >= 0.0) {
            return Err(Error::Instrument(format!(
                "setpoint must be finite and non-negative, got {kelvin} K"
            )));
        }
        let mut state = self.state.lock().expect("state lock");
        state.clock_s += SET_TIME_S;
        let now = state.clock_s;
        let current = current_stage_temperature(&state.stage, now, self.config.vts.time_constant_s);
        state.stage = StageState {
            target_k: kelvin,
            from_k: current,
            since_s: now,
            held: false,
        };
        drop(state);
        self.log_call(now, InstrumentCall::SetTemperature { kelvin });
        Ok(())
    }

    fn read_temperature(&self) -> Result<f64> {
        let mut state = self.state.lock().expect("state lock");
        state.clock_s += READ_TIME_S;
        let now = state.clock_s;
        let kelvin = current_stage_temperature(&state.stage, now, self.config.vts.time_constant_s);
        drop(state);
        self.log_call(now, InstrumentCall::ReadTemperature { kelvin });
        Ok(kelvin)
    }

    fn wait_stable(&self, tolerance_k: f64, timeout_s: f64) -> Result<f64> {
        if !(tolerance_k > 0.0 && timeout_s > 0.0) {
            return Err(Error::Instrument(
                "stability tolerance and timeout must be positive".into(),
            ));
        }
        let mut state = self.state.lock().expect("state lock");
        let tau = self.config.vts.time_constant_s;
        let now = state.clock_s;
        let gap = (current_stage_temperature(&state.stage, now, tau) - state.stage.target_k).abs();
        let needed_s = if state.stage.held || gap <= tolerance_k {
            0.0
        } else {
            tau * (gap / tolerance_k).ln()
        };
        if needed_s > timeout_s {
            state.clock_s += timeout_s;
            let t = state.clock_s;
            let target = state.stage.target_k;
            drop(state);
            self.log_call(
                t,
                InstrumentCall::WaitStable {
                    tolerance_k,
                    timeout_s,
                    settled_k: f64::NAN,
                },
            );
            return Err(Error::Instrument(format!(
                "stage did not settle to {target} K within {timeout_s} s \
                 (needs {needed_s:.1} s at tolerance {tolerance_k} K)"
            )));
        }
        state.clock_s += needed_s;
        // Within the band the servo pins the plateau; readings from here on
        // return the setpoint until the next command.
        state.stage.held = true;
        state.stage.from_k = state.stage.target_k;
        let settled = state.stage.target_k;
        let t = state.clock_s;
        drop(state);
        self.log_call(
            t,
            InstrumentCall::WaitStable {
                tolerance_k,
                timeout_s,
                settled_k: settled,
            },
        );
        Ok(settled)
    }

    fn measure_sparams(&self, freqs_hz: &[f64]) -> Result<TwoPort<f64>> {
        let boxes = self.error_boxes(freqs_hz);
        let mut state = self.state.lock().expect("state lock");
        state.clock_s += SPARAM_TIME_PER_POINT_S * freqs_hz.len() as f64;
        let throw = state.throw;
        let true_points: Vec<SPoint<f64>> = freqs_hz
            .iter()
            .map(|&f| self.true_sparams(throw, f))
            .collect();
        let device = TwoPort::new(self.config.z0_ohm, freqs_hz.to_vec(), true_points)?;
        let mut raw = embed(&device, &boxes)?;
        let sigma = self.config.noise.sparam_sigma;
        if sigma > 0.0 {
            for p in &mut raw.points {
                for entry in [&mut p.s11, &mut p.s12, &mut p.s21, &mut p.s22] {
                    let re: f64 = StandardNormal.sample(&mut state.rng);
                    let im: f64 = StandardNormal.sample(&mut state.rng);
                    *entry += Complex::new(re, im) * sigma;
                }
            }
        }
        let t = state.clock_s;
        drop(state);
        self.log_call(
            t,
            InstrumentCall::MeasureSparams {
                throw,
                points: freqs_hz.len(),
            },
        );
        Ok(raw)
    }

    fn measure_psd(&self, freqs_hz: &[f64], rbw_hz: f64, averages: u32) -> Result<Vec<f64>> {
        if !(rbw_hz > 0.0) || averages == 0 {
            return Err(Error::Instrument(
                "resolution bandwidth must be positive and averages at least one".into(),
            ));
        }
        let mut state = self.state.lock().expect("state lock");
        state.clock_s += PSD_TIME_PER_POINT_S * freqs_hz.len() as f64 * f64::from(averages);
        let now = state.clock_s;
        let throw = state.throw;
        let stage_temp = current_stage_temperature(&state.stage, now, self.config.vts.time_constant_s);
        let sigma = self.config.noise.psd_rel_sigma / f64::from(averages).sqrt();
        let mut out = Vec::with_capacity(freqs_hz.len());
        for &f in freqs_hz {
            let mut psd = self.true_psd(throw, f, stage_temp)?;
            if sigma > 0.0 {
                let z: f64 = StandardNormal.sample(&mut state.rng);
                psd *= 1.0 + sigma * z;
            }
            out.push(psd);
        }
        drop(state);
        self.log_call(
            now,
            InstrumentCall::MeasurePsd {
                throw,
                points: freqs_hz.len(),
                rbw_hz,
                averages,
            },
        );
        Ok(out)
    }

    fn run_log(&self) -> Vec<LogEvent> {
        self.log.lock().expect("log lock").clone()
    }

    fn clock_s(&self) -> f64 {
        self.state.lock().expect("state lock").clock_s
    }

    fn provenance(&self) -> Provenance {
        Provenance {
            backend: "virtual-cryostat".into(),
            seed: self.config.noise.seed,
            config_sha256: self.config_sha256.clone(),
        }
    }
}

fn current_stage_temperature(stage: &StageState, now_s: f64, tau_s: f64) -> f64 {
    if stage.held {
        return stage.target_k;
    }
    let dt = (now_s - stage.since_s).max(0.0);
    stage.target_k + (stage.from_k - stage.target_k) * (-dt / tau_s).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn stage_settles_exponentially_then_holds() {
        let cryo = VirtualCryostat::new(CryostatConfig::demo()).unwrap();
        assert_relative_eq!(cryo.read_temperature().unwrap(), 0.02, max_relative = 1e-12);
        cryo.set_temperature(1.0).unwrap();
        let early = cryo.read_temperature().unwrap();
        assert!(early < 0.1, "should still be near base, got {early}");
        let settled = cryo.wait_stable(1e-3, 600.0).unwrap();
        assert_eq!(settled, 1.0);
        assert_eq!(cryo.read_temperature().unwrap(), 1.0);
    }

    #[test]
    fn wait_stable_times_out_with_diagnostic() {
        let cryo = VirtualCryostat::new(CryostatConfig::demo()).unwrap();
        cryo.set_temperature(2.0).unwrap();
        let err = cryo.wait_stable(1e-6, 1.0).unwrap_err();
        match err {
            Error::Instrument(msg) => assert!(msg.contains("did not settle"), "{msg}"),
            other => panic!("wrong error kind: {other}"),
        }
    }

    #[test]
    fn raw_sparams_differ_from_truth_and_calibrate_back() {
        let cryo = VirtualCryostat::new(CryostatConfig::demo()).unwrap();
        let freqs = vec![4.0e9, 4.5e9, 5.0e9];
        cryo.select(SwitchThrow::Thru).unwrap();
        let raw = cryo.measure_sparams(&freqs).unwrap();
        // The error boxes dominate the raw view of an ideal thru.
        assert!((raw.points[0].s21.norm() - 1.0).abs() > 0.05);
        assert!(raw.points[0].s11.norm() > 0.01);
    }

    #[test]
    fn psd_reflects_the_selected_element() {
        let cryo = VirtualCryostat::new(CryostatConfig::demo()).unwrap();
        let freqs = vec![5.0e9];
        cryo.select(SwitchThrow::Dut).unwrap();
        let dut = cryo.measure_psd(&freqs, 1e6, 1).unwrap()[0];
        cryo.select(SwitchThrow::Thru).unwrap();
        let thru = cryo.measure_psd(&freqs, 1e6, 1).unwrap()[0];
        // 20 dB of gain on (0.5 + 1.0) photons dwarfs the bare line.
        assert!(dut > thru * 1.5);
        let f = Frequency::new(5.0e9).unwrap();
        let expect = db_to_linear(70.9)
            * (f.photon_energy() * db_to_linear(20.0) * 1.5 + BOLTZMANN * 4.65);
        assert_relative_eq!(dut, expect, max_relative = 1e-12);
    }

    #[test]
    fn every_call_is_logged_once_in_order() {
        let cryo = VirtualCryostat::new(CryostatConfig::demo()).unwrap();
        cryo.select(SwitchThrow::Load).unwrap();
        cryo.set_temperature(0.5).unwrap();
        cryo.wait_stable(1e-3, 600.0).unwrap();
        cryo.measure_psd(&[4e9, 5e9], 1e6, 2).unwrap();
        let log = cryo.run_log();
        assert_eq!(log.len(), 4);
        for (i, event) in log.iter().enumerate() {
            assert_eq!(event.seq, i as u64);
        }
        assert!(log.windows(2).all(|w| w[0].time_s <= w[1].time_s));
        assert!(matches!(
            log[3].call,
            InstrumentCall::MeasurePsd {
                throw: SwitchThrow::Load,
                points: 2,
                averages: 2,
                ..
            }
        ));
    }

    #[test]
    fn seeded_noise_is_deterministic() {
        let mut config = CryostatConfig::demo();
        config.noise.sparam_sigma = 1e-4;
        config.noise.psd_rel_sigma = 1e-3;
        let freqs = vec![4e9, 5e9];
        let run = |cfg: &CryostatConfig| {
            let cryo = VirtualCryostat::new(cfg.clone()).unwrap();
            cryo.select(SwitchThrow::Dut).unwrap();
            let s = cryo.measure_sparams(&freqs).unwrap();
            let p = cryo.measure_psd(&freqs, 1e6, 1).unwrap();
            (s, p)
        };
        let (s1, p1) = run(&config);
        let (s2, p2) = run(&config);
        assert_eq!(s1.points[1].s21, s2.points[1].s21);
        assert_eq!(p1[0].to_bits(), p2[0].to_bits());
        let mut reseeded = config.clone();
        reseeded.noise.seed = 8;
        let (s3, _) = run(&reseeded);
        assert_ne!(s1.points[1].s21, s3.points[1].s21);
    }
}
