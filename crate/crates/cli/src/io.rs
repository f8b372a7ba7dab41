//! Config loading, bundled-fixture resolution, and atomic output writing.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

/// Error classes carrying the process exit code: 2 for usage/config
/// problems, 3 for unreadable or malformed data files, 4 for physics or
/// diagnostic failures found in otherwise well-formed inputs.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Diagnostic(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Diagnostic(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Data(msg) | CliError::Diagnostic(msg) => {
                f.write_str(msg)
            }
        }
    }
}

impl std::error::Error for CliError {}

/// Maps any error surfaced by a subcommand onto the exit-code contract.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if let Some(cli) = err.downcast_ref::<CliError>() {
        return cli.exit_code();
    }
    if let Some(core) = err.downcast_ref::<cryonoise::Error>() {
        return match core {
            cryonoise::Error::Domain(_) => 2,
            cryonoise::Error::Parse { .. }
            | cryonoise::Error::Grid(_)
            | cryonoise::Error::Underdetermined(_) => 3,
            cryonoise::Error::Singular { .. }
            | cryonoise::Error::RootAmbiguity(_)
            | cryonoise::Error::Qualification { .. }
            | cryonoise::Error::Instrument(_)
            | cryonoise::Error::Replay(_) => 4,
        };
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return 3;
    }
    2
}

/// Fixture set bundled into the binary at build time. Setting
/// CRYONOISE_DATA_DIR to a directory with same-named files overrides them.
const BUILTIN_FIXTURES: &[(&str, &str)] = &[
    (
        "table1_chain.json",
        include_str!("../../../data/v1/table1_chain.json"),
    ),
    (
        "bias_demo.json",
        include_str!("../../../data/v1/bias_demo.json"),
    ),
    (
        "planck_sweep.csv",
        include_str!("../../../data/v1/planck_sweep.csv"),
    ),
    (
        "protocol_demo.json",
        include_str!("../../../data/v1/protocol_demo.json"),
    ),
    (
        "solr/raw_short.s2p",
        include_str!("../../../data/v1/solr/raw_short.s2p"),
    ),
    (
        "solr/raw_open.s2p",
        include_str!("../../../data/v1/solr/raw_open.s2p"),
    ),
    (
        "solr/raw_load.s2p",
        include_str!("../../../data/v1/solr/raw_load.s2p"),
    ),
    (
        "solr/raw_thru.s2p",
        include_str!("../../../data/v1/solr/raw_thru.s2p"),
    ),
    (
        "solr/raw_dut.s2p",
        include_str!("../../../data/v1/solr/raw_dut.s2p"),
    ),
];

/// Loads a bundled fixture, honouring the CRYONOISE_DATA_DIR override.
pub fn fixture(name: &str) -> anyhow::Result<String> {
    if let Some(dir) = std::env::var_os("CRYONOISE_DATA_DIR") {
        let path = PathBuf::from(dir).join(name);
        return fs::read_to_string(&path).map_err(|e| {
            CliError::Data(format!(
                "fixture override {} is unreadable: {e}",
                path.display()
            ))
            .into()
        });
    }
    BUILTIN_FIXTURES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| (*text).to_string())
        .ok_or_else(|| CliError::Usage(format!("no bundled fixture named {name}")).into())
}

/// Reads a user-supplied configuration file; failures are usage errors.
pub fn read_config(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).map_err(|e| {
        CliError::Usage(format!("config file {} is unreadable: {e}", path.display())).into()
    })
}

/// Reads a user-supplied data file; failures are data errors.
pub fn read_data(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("{} is unreadable: {e}", path.display())).into())
}

/// Strict JSON deserialization: the text must parse into `T` and must not
/// contain any key `T` does not define.
pub fn parse_strict<T>(text: &str, what: &str) -> anyhow::Result<T>
where
    T: DeserializeOwned + Serialize,
{
    let value: Value = serde_json::from_str(text)
        .map_err(|e| CliError::Usage(format!("{what}: malformed JSON: {e}")))?;
    let parsed: T = serde_json::from_value(value.clone())
        .map_err(|e| CliError::Usage(format!("{what}: {e}")))?;
    let shape = serde_json::to_value(&parsed)
        .with_context(|| format!("{what}: could not canonicalize"))?;
    let mut extras = Vec::new();
    unknown_keys(&value, &shape, String::new(), &mut extras);
    if !extras.is_empty() {
        return Err(CliError::Usage(format!(
            "{what}: unknown keys: {}",
            extras.join(", ")
        ))
        .into());
    }
    Ok(parsed)
}

/// Collects dotted paths of input keys that the canonical shape lacks.
fn unknown_keys(input: &Value, shape: &Value, path: String, out: &mut Vec<String>) {
    match (input, shape) {
        (Value::Object(inp), Value::Object(shp)) => {
            for (key, val) in inp {
                match shp.get(key) {
                    None => out.push(format!("{path}{key}")),
                    Some(sub) => unknown_keys(val, sub, format!("{path}{key}."), out),
                }
            }
        }
        (Value::Array(inp), Value::Array(shp)) => {
            for (idx, val) in inp.iter().enumerate() {
                if let Some(sub) = shp.get(idx) {
                    unknown_keys(val, sub, format!("{path}{idx}."), out);
                }
            }
        }
        _ => {}
    }
}

/// Prints to stdout, tolerating a reader that closed the pipe early
/// (`cryonoise ... | head` must not abort the run).
pub fn emit_stdout(text: &str) {
    use std::io::Write as _;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

/// Line-oriented variant of [`emit_stdout`].
pub fn emit_line(text: impl AsRef<str>) {
    use std::io::Write as _;
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_ref().as_bytes());
    let _ = out.write_all(b"\n");
}

/// Replaces `dir/name` in one rename so readers never observe a torn file.
pub fn write_atomic(dir: &Path, name: &str, text: &str) -> anyhow::Result<()> {
    fs::create_dir_all(dir)
        .with_context(|| format!("could not create output directory {}", dir.display()))?;
    let target = dir.join(name);
    let tmp = dir.join(format!("{name}.tmp"));
    fs::write(&tmp, text).with_context(|| format!("could not write {}", tmp.display()))?;
    fs::rename(&tmp, &target)
        .with_context(|| format!("could not move output into {}", target.display()))?;
    Ok(())
}
