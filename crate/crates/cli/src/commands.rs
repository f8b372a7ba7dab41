//! The five analysis subcommands, each a thin layer over the library:
//! resolve inputs, run, emit plot-ready artifacts.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use cryonoise::bias::{
    analytic_bias, analyze_dataset, synth_measured, NoiseSpec, SerialBiasConfig,
};
use cryonoise::physics::Frequency;
use cryonoise::planck::{fit_planck, parse_sweep_csv, results_csv, SweepSource};
use cryonoise::protocol::{
    replay, run_protocol, CalibrationReport, CryostatConfig, MeasurementPlan, VirtualCryostat,
};
use cryonoise::sparams::cal::{calibrate_solr, deembed, OnePortStandards};
use cryonoise::sparams::touchstone::{parse_two_port, write_two_port, FreqUnit, NumberFormat};
use cryonoise::sparams::{NoiseSourceModel, Port, TwoPort};
use cryonoise::thermal::{stage_table_report, ChainSpec};
use cryonoise::SourceKind;

use crate::io::{
    emit_line, emit_stdout, fixture, parse_strict, read_config, read_data, write_atomic,
    CliError,
};

/// Resolved global flags shared by every subcommand.
pub struct RunConfig {
    pub config: Option<PathBuf>,
    pub freq_hz: Option<f64>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub verbose: bool,
}

impl RunConfig {
    fn note(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn emit(&self, files: &[(&str, &str)]) -> anyhow::Result<()> {
        if let Some(dir) = &self.out_dir {
            for (name, text) in files {
                write_atomic(dir, name, text)?;
                self.note(format!("wrote {}", dir.join(name).display()));
            }
        }
        Ok(())
    }
}

pub fn cascade(run: &RunConfig, table1: bool) -> anyhow::Result<()> {
    let spec: ChainSpec<f64> = match (&run.config, table1) {
        (Some(_), true) => {
            return Err(
                CliError::Usage("--table1 and --config are mutually exclusive".into()).into(),
            )
        }
        (None, true) => ChainSpec::demo_input_line(),
        (Some(path), false) => parse_strict(&read_config(path)?, "chain config")?,
        (None, false) => {
            return Err(CliError::Usage(
                "cascade needs a chain: pass --config <json> or --table1".into(),
            )
            .into())
        }
    };
    if spec.stages.is_empty() {
        return Err(CliError::Usage("chain config lists no stages".into()).into());
    }
    let f = Frequency::new(run.freq_hz.unwrap_or(5e9))?;
    let table = stage_table_report(&spec, f)?;
    emit_stdout(&table);
    run.emit(&[("cascade_stage_table.csv", &table)])
}

pub fn planck_fit(
    run: &RunConfig,
    sweep_path: Option<&Path>,
    source_arg: &str,
) -> anyhow::Result<()> {
    let text = match sweep_path {
        Some(p) => read_data(p)?,
        None => fixture("planck_sweep.csv")?,
    };
    let source = if source_arg == "ideal" {
        SweepSource::Ideal
    } else {
        let net = parse_two_port(&read_data(Path::new(source_arg))?)?;
        SweepSource::Measured(NoiseSourceModel::new(net, SourceKind::Thermal, Port::Two))
    };
    let sweep = parse_sweep_csv(&text, source)?;
    let fit = fit_planck(&sweep)?;
    let csv = results_csv(&fit, None)?;
    let json = serde_json::to_string_pretty(&fit).context("fit not serializable")?;
    emit_stdout(&csv);
    run.emit(&[("planck_fit.csv", &csv), ("planck_fit.json", &json)])
}

pub fn bias(run: &RunConfig, no_spurs: bool, noise: Option<f64>) -> anyhow::Result<()> {
    let mut cfg: SerialBiasConfig<f64> = match &run.config {
        Some(path) => parse_strict(&read_config(path)?, "bias config")?,
        None => parse_strict(&fixture("bias_demo.json")?, "bundled bias config")?,
    };
    if no_spurs {
        cfg.modes.retain(|m| m.n == 0 || m.n == -1);
    }
    let report = match noise {
        None => analytic_bias(&cfg)?,
        Some(sigma_rel) => {
            let spec = NoiseSpec {
                sigma_rel,
                seed: run.seed.unwrap_or(0),
            };
            let dataset = synth_measured(&cfg, Some(spec))?;
            analyze_dataset(&cfg, &dataset)?
        }
    };

    let gain_rel = ((report.analytic.dressed_gain - report.oracle.dressed_gain)
        / report.oracle.dressed_gain)
        .abs();
    let nsys_rel =
        ((report.analytic.n_sys - report.oracle.n_sys) / report.oracle.n_sys).abs();
    emit_line(format!("relative slope distortion beta = {:e}", report.beta));
    emit_line(format!(
        "fitted gain {:e} (true {:e}), fitted zero-drive noise error {:e} photons",
        report.oracle.dressed_gain, report.dressed_gain_true, report.fitted_noise_error
    ));
    emit_line(format!(
        "high-drive prediction: beta -> {:e}, noise error -> {:e}",
        report.asymptotic.beta_asym, report.asymptotic.predicted_noise_error
    ));
    emit_line(format!(
        "route agreement: gain {gain_rel:e} relative, zero-drive noise {nsys_rel:e} relative"
    ));
    if noise.is_none() && (gain_rel > 1e-9 || nsys_rel > 1e-9) {
        return Err(CliError::Diagnostic(format!(
            "closed-form and least-squares routes disagree: gain {gain_rel:e}, noise {nsys_rel:e}"
        ))
        .into());
    }

    let json = serde_json::to_string_pretty(&report).context("report not serializable")?;
    let csv = cryonoise::bias::report_csv(&report)?;
    run.emit(&[("bias_report.json", &json), ("bias_points.csv", &csv)])
}

pub fn solr(
    run: &RunConfig,
    short: Option<&Path>,
    open: Option<&Path>,
    load: Option<&Path>,
    reciprocal: Option<&Path>,
    dut: Option<&Path>,
) -> anyhow::Result<()> {
    let net = |flag: Option<&Path>, name: &str| -> anyhow::Result<TwoPort<f64>> {
        let text = match flag {
            Some(p) => read_data(p)?,
            None => fixture(name)?,
        };
        Ok(parse_two_port(&text)?)
    };
    let raw_short = net(short, "solr/raw_short.s2p")?;
    let raw_open = net(open, "solr/raw_open.s2p")?;
    let raw_load = net(load, "solr/raw_load.s2p")?;
    let raw_reciprocal = net(reciprocal, "solr/raw_thru.s2p")?;
    let raw_dut = net(dut, "solr/raw_dut.s2p")?;

    let boxes = calibrate_solr(
        &raw_short,
        &raw_open,
        &raw_load,
        &raw_reciprocal,
        &OnePortStandards::ideal(),
        None,
    )?;
    let corrected = deembed(&raw_dut, &boxes)?;
    for flag in &corrected.flags {
        eprintln!("warning: correction flag at {:?}", flag);
    }
    let s2p = write_two_port(&corrected.network, FreqUnit::GHz, NumberFormat::Ri);
    let json = serde_json::to_string_pretty(&boxes).context("boxes not serializable")?;
    emit_stdout(&s2p);
    run.emit(&[("error_boxes.json", &json), ("dut_corrected.s2p", &s2p)])
}

/// On-disk protocol configuration: the simulator ground truth plus the
/// measurement plan the runner executes against it.
#[derive(Serialize, Deserialize)]
pub struct ProtocolFileConfig {
    pub cryostat: CryostatConfig,
    pub plan: MeasurementPlan,
}

pub fn protocol(run: &RunConfig, replay_path: Option<&Path>) -> anyhow::Result<()> {
    if let Some(path) = replay_path {
        let report: CalibrationReport = serde_json::from_str(&read_data(path)?)
            .map_err(|e| CliError::Data(format!("stored report: {e}")))?;
        replay(&report)?;
        emit_line(format!(
            "replay ok: raw digest {} reproduces every derived artifact",
            report.raw_sha256
        ));
        return Ok(());
    }

    let mut file: ProtocolFileConfig = match &run.config {
        Some(path) => parse_strict(&read_config(path)?, "protocol config")?,
        None => parse_strict(&fixture("protocol_demo.json")?, "bundled protocol config")?,
    };
    if let Some(seed) = run.seed {
        file.cryostat.noise.seed = seed;
    }
    let cryostat = VirtualCryostat::new(file.cryostat)?;
    let report = run_protocol(&cryostat, &file.plan)?;

    emit_line(format!("backend {} seed {}", report.provenance.backend, report.provenance.seed));
    emit_line(format!("raw digest {}", report.raw_sha256));
    for p in &report.derived.added_noise.points {
        emit_line(format!(
            "{} Hz: added noise {:.6} +- {:.6} photons (quantum limit {:.6})",
            p.freq_hz, p.n_add, p.sigma_n_add, p.quantum_limit
        ));
    }
    let total = report
        .step_timings
        .last()
        .map_or(0.0, |t| t.finished_s);
    emit_line(format!("simulated wall time {total:.1} s over {} steps", report.step_timings.len()));

    let json = serde_json::to_string_pretty(&report).context("report not serializable")?;
    run.emit(&[("protocol_report.json", &json)])
}
