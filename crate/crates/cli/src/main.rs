//! `cryonoise`: command-line noise metrology for cryogenic readout chains.
//!
//! Subcommands map one-to-one onto the library's analysis surfaces; every
//! run is deterministic given its config and seed. Exit codes are a stable
//! contract: 0 success, 2 usage or config error, 3 unreadable or malformed
//! data, 4 physics or diagnostic failure.

mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::RunConfig;

#[derive(Parser)]
#[command(name = "cryonoise", version, about = "Noise metrology for cryogenic microwave readout chains")]
struct Cli {
    /// JSON configuration file for the subcommand.
    #[arg(long, global = true, value_name = "JSON")]
    config: Option<PathBuf>,

    /// Working frequency in Hz where a single frequency applies.
    #[arg(long, global = true, value_name = "HZ")]
    freq: Option<f64>,

    /// Directory for output artifacts; primary results always print to
    /// stdout. Existing files are replaced atomically.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Seed override for synthetic-data subcommands.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Upper bound on worker threads for per-frequency parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Chat about file writes and intermediate steps on stderr.
    #[arg(long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Photon-occupation budget of an attenuating input line, as CSV.
    Cascade {
        /// Use the built-in demonstration drive line instead of --config.
        #[arg(long)]
        table1: bool,
    },
    /// Fit chain gain and noise temperature from a temperature-sweep CSV.
    PlanckFit {
        /// Sweep data (columns freq_hz,T_vts_K,psd_W_per_Hz); defaults to
        /// the bundled synthetic sweep.
        #[arg(long, value_name = "CSV")]
        sweep: Option<PathBuf>,
        /// Noise-source model: `ideal` or a path to a two-port .s2p file.
        #[arg(long, default_value = "ideal", value_name = "IDEAL|S2P")]
        source: String,
    },
    /// Serial-calibration bias analysis on synthetic multimode data.
    Bias {
        /// Drop every mixing product except the signal and idler.
        #[arg(long)]
        no_spurs: bool,
        /// Relative Gaussian noise added to the synthetic measurements.
        #[arg(long, value_name = "REL")]
        noise: Option<f64>,
    },
    /// Solve SOLR error boxes from raw standards and de-embed a device.
    Solr {
        /// Raw measurement of the short standard at both ports.
        #[arg(long, value_name = "S2P")]
        short: Option<PathBuf>,
        /// Raw measurement of the open standard at both ports.
        #[arg(long, value_name = "S2P")]
        open: Option<PathBuf>,
        /// Raw measurement of the matched load at both ports.
        #[arg(long, value_name = "S2P")]
        load: Option<PathBuf>,
        /// Raw measurement of the reciprocal element (a thru works).
        #[arg(long, value_name = "S2P")]
        reciprocal: Option<PathBuf>,
        /// Raw measurement of the device to correct.
        #[arg(long, value_name = "S2P")]
        dut: Option<PathBuf>,
    },
    /// Run the simulated end-to-end calibration, or verify a stored report.
    Protocol {
        /// Recompute a stored report's results from its raw data instead of
        /// running the protocol.
        #[arg(long, value_name = "JSON")]
        replay: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        // A second initialization in one process is harmless: the pool is
        // already sized, so the request is simply ignored.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let run = RunConfig {
        config: cli.config,
        freq_hz: cli.freq,
        out_dir: cli.out,
        seed: cli.seed,
        verbose: cli.verbose,
    };
    let outcome = match &cli.command {
        Command::Cascade { table1 } => commands::cascade(&run, *table1),
        Command::PlanckFit { sweep, source } => {
            commands::planck_fit(&run, sweep.as_deref(), source)
        }
        Command::Bias { no_spurs, noise } => commands::bias(&run, *no_spurs, *noise),
        Command::Solr {
            short,
            open,
            load,
            reciprocal,
            dut,
        } => commands::solr(
            &run,
            short.as_deref(),
            open.as_deref(),
            load.as_deref(),
            reciprocal.as_deref(),
            dut.as_deref(),
        ),
        Command::Protocol { replay } => commands::protocol(&run, replay.as_deref()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(u8::try_from(io::exit_code(&err)).unwrap_or(2))
        }
    }
}
