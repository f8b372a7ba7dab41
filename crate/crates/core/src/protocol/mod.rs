//! Standardized noise-calibration workflow against abstract instruments.
//!
//! The runner executes the eight-step substitution protocol: S-parameter
//! calibration of both readout ports, device scattering and noise
//! measurements, qualification of the thermal source, a temperature sweep
//! fitted to the emission law, and extraction of the device's added noise,
//! all through the [`InstrumentSuite`] trait. Any backend that implements
//! the trait can drive the run; [`cryostat::VirtualCryostat`] provides a
//! simulated one whose ground truth stays hidden behind instrument calls,
//! closing the loop from virtual hardware to extracted noise.
//!
//! Every run yields a self-contained [`CalibrationReport`]: raw artifacts
//! (Touchstone blocks as text, PSD tables), derived results, the full
//! instrument log, and a checksum that lets [`replay`] re-derive and verify
//! the results bit for bit without touching hardware.

pub mod cryostat;
mod runner;

pub use cryostat::{CryostatConfig, VirtualCryostat};
pub use runner::{run_protocol, serial_topology_report};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::physics::QualificationPoint;
use crate::planck::{AddedNoiseResult, PlanckFitResult};
use crate::sparams::cal::{CorrectionFlag, ErrorBoxes};
use crate::sparams::TwoPort;

/// Positions of the cryogenic switch pair. The two switches move together:
/// one throw routes the same kind of element into both reference planes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchThrow {
    Dut,
    Vts,
    Short,
    Open,
    Load,
    Thru,
}

impl std::fmt::Display for SwitchThrow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            SwitchThrow::Dut => "dut",
            SwitchThrow::Vts => "vts",
            SwitchThrow::Short => "short",
            SwitchThrow::Open => "open",
            SwitchThrow::Load => "load",
            SwitchThrow::Thru => "thru",
        };
        f.write_str(name)
    }
}

/// One instrument call as recorded in the run log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "call", rename_all = "snake_case")]
pub enum InstrumentCall {
    Select {
        throw: SwitchThrow,
    },
    SetTemperature {
        kelvin: f64,
    },
    ReadTemperature {
        kelvin: f64,
    },
    WaitStable {
        tolerance_k: f64,
        timeout_s: f64,
        settled_k: f64,
    },
    MeasureSparams {
        throw: SwitchThrow,
        points: usize,
    },
    MeasurePsd {
        throw: SwitchThrow,
        points: usize,
        rbw_hz: f64,
        averages: u32,
    },
}

/// A timestamped entry of the run log. `seq` increments by one per call;
/// `time_s` is seconds since the backend was brought up.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    pub seq: u64,
    pub time_s: f64,
    #[serde(flatten)]
    pub call: InstrumentCall,
}

/// Renders a run log as line-delimited JSON, one event per line.
pub fn run_log_jsonl(log: &[LogEvent]) -> Result<String> {
    let mut out = String::new();
    for event in log {
        let line = serde_json::to_string(event)
            .map_err(|e| Error::Instrument(format!("log serialization failed: {e}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

/// Identity of the backend a report was produced on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub backend: String,
    pub seed: u64,
    /// SHA-256 of the backend's canonical configuration JSON.
    pub config_sha256: String,
}

/// The instrument surface the protocol runner drives. Implementations must
/// log every call (timestamp, parameters, scalar outcomes) into the run
/// record, and must tolerate a concurrent reader of that record.
pub trait InstrumentSuite: Send + Sync {
    /// Routes the switch pair to one throw.
    fn select(&self, throw: SwitchThrow) -> Result<()>;

    /// Commands the variable-temperature stage setpoint, K.
    fn set_temperature(&self, kelvin: f64) -> Result<()>;

    /// Reads the stage thermometer, K.
    fn read_temperature(&self) -> Result<f64>;

    /// Blocks until the stage temperature sits within `tolerance_k` of the
    /// setpoint, returning the settled reading; errors after `timeout_s`.
    fn wait_stable(&self, tolerance_k: f64, timeout_s: f64) -> Result<f64>;

    /// Two-port S-parameters of whatever the switches currently route.
    fn measure_sparams(&self, freqs_hz: &[f64]) -> Result<TwoPort<f64>>;

    /// Noise PSD in W/Hz at the detection plane for the current throw.
    fn measure_psd(&self, freqs_hz: &[f64], rbw_hz: f64, averages: u32) -> Result<Vec<f64>>;

    /// Snapshot of the run record so far.
    fn run_log(&self) -> Vec<LogEvent>;

    /// Seconds elapsed on the backend's clock.
    fn clock_s(&self) -> f64;

    fn provenance(&self) -> Provenance;
}

/// Everything the runner decides up front: grids, schedule, and analysis
/// settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementPlan {
    pub freqs_hz: Vec<f64>,
    pub vts_temperatures_k: Vec<f64>,
    /// Stability band for the temperature servo, K.
    pub settle_tolerance_k: f64,
    pub settle_timeout_s: f64,
    /// Resolution bandwidth requested from the spectrum analyzer, Hz.
    pub rbw_hz: f64,
    pub psd_averages: u32,
    /// Leakage bound for the thermal-source qualification inequality.
    pub qualification_threshold: f64,
    /// Occupation entering the device input, used when referring the
    /// output noise back to the input. Vacuum by default.
    pub input_occupation: f64,
    /// Expected corrected transmission phase of the reciprocal standard,
    /// per frequency. `None` means the reciprocal is the switch thru path,
    /// whose corrected phase is zero.
    pub reciprocal_phase_estimate_rad: Option<Vec<f64>>,
}

impl MeasurementPlan {
    /// A plan with conventional settings: 1 mK stability, 10 minute settle
    /// budget, 1 MHz resolution bandwidth, vacuum at the device input.
    pub fn new(freqs_hz: Vec<f64>, vts_temperatures_k: Vec<f64>) -> Result<Self> {
        let plan = Self {
            freqs_hz,
            vts_temperatures_k,
            settle_tolerance_k: 1e-3,
            settle_timeout_s: 600.0,
            rbw_hz: 1e6,
            psd_averages: 1,
            qualification_threshold: 0.1,
            input_occupation: 0.5,
            reciprocal_phase_estimate_rad: None,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.freqs_hz.is_empty() {
            return Err(Error::Domain("plan needs at least one frequency".into()));
        }
        for pair in self.freqs_hz.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::Grid(
                    "plan frequencies must be strictly ascending".into(),
                ));
            }
        }
        if self.freqs_hz[0] <= 0.0 || !self.freqs_hz.iter().all(|f| f.is_finite()) {
            return Err(Error::Domain("plan frequencies must be finite and positive".into()));
        }
        let mut temps = self.vts_temperatures_k.clone();
        temps.sort_by(|a, b| a.partial_cmp(b).expect("checked below"));
        temps.dedup();
        if temps.len() < 2 {
            return Err(Error::Domain(
                "temperature schedule needs at least two distinct points".into(),
            ));
        }
        if !self
            .vts_temperatures_k
            .iter()
            .all(|t| t.is_finite() && *t >= 0.0)
        {
            return Err(Error::Domain(
                "temperature schedule must be finite and non-negative".into(),
            ));
        }
        if !(self.settle_tolerance_k > 0.0 && self.settle_timeout_s > 0.0) {
            return Err(Error::Domain(
                "settle tolerance and timeout must be positive".into(),
            ));
        }
        if !(self.rbw_hz > 0.0) || self.psd_averages == 0 {
            return Err(Error::Domain(
                "resolution bandwidth must be positive and averages at least one".into(),
            ));
        }
        if !(self.qualification_threshold > 0.0 && self.qualification_threshold < 1.0) {
            return Err(Error::Domain(
                "qualification threshold must lie in (0, 1)".into(),
            ));
        }
        if !(self.input_occupation.is_finite() && self.input_occupation >= 0.0) {
            return Err(Error::Domain(
                "input occupation must be finite and non-negative".into(),
            ));
        }
        if let Some(est) = &self.reciprocal_phase_estimate_rad {
            if est.len() != self.freqs_hz.len() {
                return Err(Error::Grid(format!(
                    "phase estimate has {} points for a {}-point grid",
                    est.len(),
                    self.freqs_hz.len()
                )));
            }
        }
        Ok(())
    }
}

/// One Planck-sweep plateau as recorded: the commanded setpoint, the
/// thermometer reading actually used by the fit, and the PSD trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanckRawRecord {
    pub t_set_k: f64,
    pub t_read_k: f64,
    pub psd_w_per_hz: Vec<f64>,
}

/// Unprocessed step outputs, sufficient to re-derive every result.
/// S-parameter measurements are embedded as Touchstone text in
/// real/imaginary format, which round-trips doubles exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawArtifacts {
    pub freqs_hz: Vec<f64>,
    pub short_s2p: String,
    pub open_s2p: String,
    pub load_s2p: String,
    pub reciprocal_s2p: String,
    pub dut_s2p: String,
    pub dut_psd_initial_w_per_hz: Vec<f64>,
    pub vts_s2p: String,
    pub planck_records: Vec<PlanckRawRecord>,
    pub dut_psd_final_w_per_hz: Vec<f64>,
}

/// Results computed from [`RawArtifacts`]; [`replay`] reproduces this block
/// bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedArtifacts {
    pub error_boxes: ErrorBoxes<f64>,
    pub dut_corrected_s2p: String,
    pub dut_correction_flags: Vec<CorrectionFlag>,
    pub vts_corrected_s2p: String,
    pub vts_correction_flags: Vec<CorrectionFlag>,
    pub qualification: Vec<QualificationPoint>,
    pub planck_fit: PlanckFitResult<f64>,
    pub added_noise: AddedNoiseResult<f64>,
}

/// Wall-clock bracket of one protocol step on the backend clock.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    pub step: u8,
    pub label: String,
    pub started_s: f64,
    pub finished_s: f64,
}

/// Self-contained record of one protocol run: plan, provenance, raw step
/// artifacts with their checksum, derived results, timings, and the full
/// instrument log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub provenance: Provenance,
    pub plan: MeasurementPlan,
    pub step_timings: Vec<StepTiming>,
    pub raw: RawArtifacts,
    /// SHA-256 over the canonical JSON of `raw`.
    pub raw_sha256: String,
    pub derived: DerivedArtifacts,
    pub run_log: Vec<LogEvent>,
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub(crate) fn raw_digest(raw: &RawArtifacts) -> Result<String> {
    let bytes = serde_json::to_vec(raw)
        .map_err(|e| Error::Replay(format!("raw artifacts not serializable: {e}")))?;
    Ok(sha256_hex(&bytes))
}

/// Recomputes every derived quantity of a stored report from its raw step
/// data and verifies the outcome.
///
/// Fails if the raw block's checksum does not match (tampering or
/// corruption), or if the re-derived results differ from the stored ones
/// in any byte of their canonical JSON.
pub fn replay(report: &CalibrationReport) -> Result<DerivedArtifacts> {
    if report.raw.freqs_hz.is_empty() || report.raw.planck_records.is_empty() {
        return Err(Error::Replay("report carries no raw data".into()));
    }
    let digest = raw_digest(&report.raw)?;
    if digest != report.raw_sha256 {
        return Err(Error::Replay(format!(
            "raw-data checksum mismatch: stored {}, recomputed {digest}",
            report.raw_sha256
        )));
    }
    let derived = runner::derive_artifacts(&report.plan, &report.raw)?;
    let stored = serde_json::to_vec(&report.derived)
        .map_err(|e| Error::Replay(format!("stored results not serializable: {e}")))?;
    let fresh = serde_json::to_vec(&derived)
        .map_err(|e| Error::Replay(format!("re-derived results not serializable: {e}")))?;
    if stored != fresh {
        return Err(Error::Replay(
            "re-derived results differ from the stored ones".into(),
        ));
    }
    Ok(derived)
}
