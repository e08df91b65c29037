//! Run configuration: a JSON object with a `version`, optional global `seed`
//! and `out`, and one optional parameter block per subcommand.
//!
//! Precedence, highest first: command-line flags, the config file, built-in
//! defaults. The global seed replaces any seed field inside a block.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

pub const CONFIG_VERSION: u64 = 1;

pub const COMMANDS: [&str; 20] = [
    "gen-features",
    "gen-benchmark",
    "cka",
    "cca",
    "procrustes",
    "project2d",
    "sae-train",
    "sae-eval",
    "sae-sweep",
    "shuffle-control",
    "gate-rules",
    "gate-train",
    "gate-eval",
    "score",
    "bon",
    "scorer-train",
    "select",
    "dual-sweep",
    "wins",
    "report",
];

#[derive(Debug, Default)]
pub struct Loaded {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    blocks: Map<String, Value>,
}

pub fn load(path: Option<&Path>) -> CliResult<Loaded> {
    let Some(path) = path else {
        return Ok(Loaded::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    parse(&text).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse(text: &str) -> CliResult<Loaded> {
    let v: Value = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    let Value::Object(mut map) = v else {
        return Err(CliError::Config("config must be a JSON object".into()));
    };
    match map.remove("version") {
        Some(Value::Number(n)) if n.as_u64() == Some(CONFIG_VERSION) => {}
        Some(other) => return Err(CliError::Config(format!("unsupported config version {other}, expected {CONFIG_VERSION}"))),
        None => return Err(CliError::Config("missing config version".into())),
    }
    let seed = match map.remove("seed") {
        None | Some(Value::Null) => None,
        Some(v) => Some(v.as_u64().ok_or_else(|| CliError::Config(format!("seed must be a non-negative integer, got {v}")))?),
    };
    let out = match map.remove("out") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(PathBuf::from(s)),
        Some(v) => return Err(CliError::Config(format!("out must be a string, got {v}"))),
    };
    if let Some(k) = map.keys().find(|k| !COMMANDS.contains(&k.as_str())) {
        return Err(CliError::Config(format!("unknown config key {k:?}")));
    }
    Ok(Loaded { seed, out, blocks: map })
}

impl Loaded {
    /// The block for `command`, or the defaults when absent.
    pub fn block<P: DeserializeOwned + Default>(&self, command: &str) -> CliResult<P> {
        match self.blocks.get(command) {
            None => Ok(P::default()),
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| CliError::Config(format!("[{command}] {e}"))),
        }
    }
}

/// Output directory: flag, then config, then `$DUALDRIVE_OUT/<command>`,
/// then `runs/<command>`.
pub fn resolve_out(flag: Option<PathBuf>, loaded: &Loaded, command: &str) -> PathBuf {
    flag.or_else(|| loaded.out.clone()).unwrap_or_else(|| {
        let root = std::env::var_os("DUALDRIVE_OUT").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
        root.join(command)
    })
}
