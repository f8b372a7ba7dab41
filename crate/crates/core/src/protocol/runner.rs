//! The sequential protocol state machine and its derivation pipeline.

use super::{
    raw_digest, CalibrationReport, DerivedArtifacts, InstrumentSuite, MeasurementPlan,
    PlanckRawRecord, RawArtifacts, StepTiming, SwitchThrow,
};
use crate::bias::{self, ModeSpec, SerialBiasConfig, SerialBiasReport};
use crate::error::{Error, Result};
use crate::physics::{db_to_linear, ControlParameter, Frequency, QualificationPoint, SourceKind};
use crate::planck::{extract_added_noise, fit_planck, PlanckSweep, SweepRecord, SweepSource};
use crate::protocol::cryostat::CryostatConfig;
use crate::sparams::cal::{calibrate_solr, deembed, CorrectedNetwork, OnePortStandards};
use crate::sparams::touchstone::{self, FreqUnit, NumberFormat};
use crate::sparams::{NoiseSourceModel, Port, TwoPort};

/// Serializes a raw measurement for the report. Real/imaginary format
/// round-trips doubles exactly, so replay sees the same bits the runner
/// saw.
fn to_block(net: &TwoPort<f64>) -> String {
    touchstone::write_two_port(net, FreqUnit::GHz, NumberFormat::Ri)
}

fn from_block(label: &str, text: &str) -> Result<TwoPort<f64>> {
    touchstone::parse_two_port(text)
        .map_err(|e| Error::Replay(format!("stored {label} block unreadable: {e}")))
}

fn qualification_failure(points: &[QualificationPoint], threshold: f64) -> Option<Error> {
    let worst = points.iter().find(|p| !p.pass)?;
    Some(Error::Qualification {
        emitting_port: 2,
        msg: format!(
            "at {:.6e} Hz the inequality |S21|^2 <= {threshold}*(1 - |S22|^2) fails: \
             |S21|^2 = {:.6e}, allowed {:.6e} with |S22|^2 = {:.6e}; \
             the stage cannot serve as the thermal reference for this port",
            worst.freq_hz, worst.transmit_sq, worst.limit, worst.reflect_sq
        ),
    })
}

struct CalibrationInputs {
    boxes: crate::sparams::cal::ErrorBoxes<f64>,
    vts: CorrectedNetwork<f64>,
    qualification: Vec<QualificationPoint>,
}

/// Steps 2 and 5 of the derivation: solve the error boxes from the stored
/// standards, correct the thermal stage, and qualify it as a source.
fn solve_and_qualify(plan: &MeasurementPlan, raw: &RawArtifacts) -> Result<CalibrationInputs> {
    let short = from_block("short", &raw.short_s2p)?;
    let open = from_block("open", &raw.open_s2p)?;
    let load = from_block("load", &raw.load_s2p)?;
    let reciprocal = from_block("reciprocal", &raw.reciprocal_s2p)?;
    let estimate = plan
        .reciprocal_phase_estimate_rad
        .clone()
        .unwrap_or_else(|| vec![0.0; raw.freqs_hz.len()]);
    let boxes = calibrate_solr(
        &short,
        &open,
        &load,
        &reciprocal,
        &OnePortStandards::ideal(),
        Some(&estimate),
    )?;
    let vts_raw = from_block("stage", &raw.vts_s2p)?;
    let vts = deembed(&vts_raw, &boxes)?;
    let source = NoiseSourceModel::new(vts.network.clone(), SourceKind::Thermal, Port::Two);
    let qualification = source.qualification(plan.qualification_threshold)?;
    if let Some(err) = qualification_failure(&qualification, plan.qualification_threshold) {
        return Err(err);
    }
    Ok(CalibrationInputs {
        boxes,
        vts,
        qualification,
    })
}

/// Recomputes every derived artifact from raw step data. Pure function of
/// its inputs; both the runner and [`super::replay`] go through here, so a
/// replay reproduces the runner's results exactly.
pub(crate) fn derive_artifacts(
    plan: &MeasurementPlan,
    raw: &RawArtifacts,
) -> Result<DerivedArtifacts> {
    plan.validate()?;
    let cal = solve_and_qualify(plan, raw)?;
    let dut_raw = from_block("device", &raw.dut_s2p)?;
    let dut = deembed(&dut_raw, &cal.boxes)?;

    let source = NoiseSourceModel::new(cal.vts.network.clone(), SourceKind::Thermal, Port::Two);
    let records = raw
        .planck_records
        .iter()
        .map(|r| SweepRecord {
            t_vts_k: r.t_read_k,
            psd_w_per_hz: r.psd_w_per_hz.clone(),
        })
        .collect();
    let sweep = PlanckSweep::new(
        raw.freqs_hz.clone(),
        records,
        SweepSource::Measured(source),
    )?;
    let planck_fit = fit_planck(&sweep)?;
    let chain = planck_fit.to_chain_params()?;

    let g_dut: Vec<f64> = dut.network.points.iter().map(|p| p.s21.norm_sqr()).collect();
    let n_in = vec![plan.input_occupation; raw.freqs_hz.len()];
    let added_noise = extract_added_noise(
        &raw.freqs_hz,
        &raw.dut_psd_final_w_per_hz,
        &chain,
        &g_dut,
        Some(&n_in),
    )?;

    Ok(DerivedArtifacts {
        error_boxes: cal.boxes,
        dut_corrected_s2p: to_block(&dut.network),
        dut_correction_flags: dut.flags,
        vts_corrected_s2p: to_block(&cal.vts.network),
        vts_correction_flags: cal.vts.flags,
        qualification: cal.qualification,
        planck_fit,
        added_noise,
    })
}

/// Executes protocol steps 2 through 8 against a backend (step 1, physical
/// mounting, is the backend's construction). Each step consumes only
/// prior-step outputs. A thermal stage that fails its qualification
/// inequality aborts the run during step 5, before any temperature is
/// commanded.
pub fn run_protocol<S: InstrumentSuite>(
    suite: &S,
    plan: &MeasurementPlan,
) -> Result<CalibrationReport> {
    plan.validate()?;
    let freqs = &plan.freqs_hz;
    let mut timings = Vec::new();
    let mut step = |label: &str, n: u8, start: f64, end: f64| {
        timings.push(StepTiming {
            step: n,
            label: label.to_string(),
            started_s: start,
            finished_s: end,
        });
    };

    // Step 2: SOLR standards. The switch thru path doubles as the
    // reciprocal element that fixes transmission tracking.
    let t0 = suite.clock_s();
    let measure = |throw: SwitchThrow| -> Result<TwoPort<f64>> {
        suite.select(throw)?;
        suite.measure_sparams(freqs)
    };
    let short_s2p = to_block(&measure(SwitchThrow::Short)?);
    let open_s2p = to_block(&measure(SwitchThrow::Open)?);
    let load_s2p = to_block(&measure(SwitchThrow::Load)?);
    let reciprocal_s2p = to_block(&measure(SwitchThrow::Thru)?);
    step("solr_standards", 2, t0, suite.clock_s());

    // Step 3: device scattering at the operating point.
    let t0 = suite.clock_s();
    let dut_s2p = to_block(&measure(SwitchThrow::Dut)?);
    step("dut_sparams", 3, t0, suite.clock_s());

    // Step 4: device output PSD, unseeded. Retained for the record; step 7
    // repeats it after the readout calibration exists.
    let t0 = suite.clock_s();
    let dut_psd_initial = suite.measure_psd(freqs, plan.rbw_hz, plan.psd_averages)?;
    step("dut_psd_initial", 4, t0, suite.clock_s());

    // Step 5: stage scattering and source qualification. This is the abort
    // point for an unsuitable stage; the sweep never starts.
    let t0 = suite.clock_s();
    let vts_s2p = to_block(&measure(SwitchThrow::Vts)?);
    let mut raw = RawArtifacts {
        freqs_hz: freqs.clone(),
        short_s2p,
        open_s2p,
        load_s2p,
        reciprocal_s2p,
        dut_s2p,
        dut_psd_initial_w_per_hz: dut_psd_initial,
        vts_s2p,
        planck_records: Vec::new(),
        dut_psd_final_w_per_hz: Vec::new(),
    };
    solve_and_qualify(plan, &raw)?;
    step("vts_qualification", 5, t0, suite.clock_s());

    // Step 6: temperature sweep. The fit consumes thermometer readings,
    // not setpoints.
    let t0 = suite.clock_s();
    for &t_set in &plan.vts_temperatures_k {
        suite.set_temperature(t_set)?;
        suite.wait_stable(plan.settle_tolerance_k, plan.settle_timeout_s)?;
        let t_read = suite.read_temperature()?;
        let psd = suite.measure_psd(freqs, plan.rbw_hz, plan.psd_averages)?;
        raw.planck_records.push(PlanckRawRecord {
            t_set_k: t_set,
            t_read_k: t_read,
            psd_w_per_hz: psd,
        });
    }
    step("planck_sweep", 6, t0, suite.clock_s());

    // Step 7: back to the device for the calibrated output spectrum.
    let t0 = suite.clock_s();
    suite.select(SwitchThrow::Dut)?;
    raw.dut_psd_final_w_per_hz = suite.measure_psd(freqs, plan.rbw_hz, plan.psd_averages)?;
    step("dut_psd_final", 7, t0, suite.clock_s());

    // Step 8: derive everything from the raw record, exactly as a replay
    // would.
    let t0 = suite.clock_s();
    let derived = derive_artifacts(plan, &raw)?;
    step("extract", 8, t0, suite.clock_s());

    let raw_sha256 = raw_digest(&raw)?;
    Ok(CalibrationReport {
        provenance: suite.provenance(),
        plan: plan.clone(),
        step_timings: timings,
        raw,
        raw_sha256,
        derived,
        run_log: suite.run_log(),
    })
}

/// What the same hardware would report if the thermal sweep traversed the
/// device (a serial topology) and were analyzed with the affine two-mode
/// model: the frequency-converting device scatters sweep noise through its
/// intermodulation products, and the affine fit misattributes it. Returns
/// the full distortion report; its `fitted_noise_error` is the
/// underestimation the substitution protocol avoids by never routing
/// calibration noise through the device.
pub fn serial_topology_report(
    config: &CryostatConfig,
    vts_temperatures_k: &[f64],
    f_s_hz: f64,
    f_p_hz: f64,
) -> Result<SerialBiasReport<f64>> {
    let gain_linear = db_to_linear(config.dut.gain_db);
    let f_s = Frequency::new(f_s_hz)?;
    let mut modes = Vec::new();
    for n in [0, -1, 1, -2, 2, 3, -4, 4, -5] {
        let fwd = bias::demo_forward_weight(gain_linear, n)?;
        modes.push(ModeSpec::at_index(n, f_s_hz, f_p_hz, 1.0, fwd, fwd / 100.0)?);
    }
    let epsilon_grid = vts_temperatures_k
        .iter()
        .map(|&t| ControlParameter::from_temperature(t, f_s))
        .collect::<Result<Vec<_>>>()?;
    let cfg = SerialBiasConfig {
        f_s_hz,
        f_p_hz,
        gain_linear,
        a_s: 1.0,
        a_i: 1.0,
        modes,
        gsys_linear: db_to_linear(config.readout.gsys_db),
        tsys_k: config.readout.tsys_k,
        epsilon_grid,
        junction_temp_k: 0.0,
        n_exc_loss: 0.0,
    };
    bias::analytic_bias(&cfg)
}
