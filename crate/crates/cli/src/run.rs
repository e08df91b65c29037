//! Output directory bookkeeping: atomic artifact writes, input hashing, the
//! manifest, the resolved config and a separate timestamp file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use dualdrive::table::write_atomic;

use crate::config::CONFIG_VERSION;
use crate::error::{CliError, CliResult};

pub const MANIFEST_VERSION: &str = "MAN1";
pub const MANIFEST: &str = "manifest.json";
pub const SUMMARY: &str = "summary.json";
pub const METADATA: &str = "metadata.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: String,
    pub command: String,
    /// Absolute paths.
    pub inputs: Vec<FileHash>,
    /// Relative to the manifest's directory.
    pub outputs: Vec<FileHash>,
}

/// Headline numbers of one run, read back by `report`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub command: String,
    pub labels: BTreeMap<String, String>,
    pub values: BTreeMap<String, f64>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

pub struct RunDir {
    dir: PathBuf,
    command: String,
    seed: u64,
    params: Value,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    summary: Summary,
    started: f64,
}

impl RunDir {
    pub fn new(dir: PathBuf, command: &str, seed: u64, params: Value) -> Self {
        RunDir {
            dir,
            command: command.into(),
            seed,
            params,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            summary: Summary {
                command: command.into(),
                ..Default::default()
            },
            started: unix_now(),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Hashes an input file as it is read.
    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        let abs = std::fs::canonicalize(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let h = hash_file(&abs)?;
        self.inputs.insert(abs.display().to_string(), h);
        Ok(())
    }

    /// Hashes every regular file below `dir` except run timestamps.
    pub fn input_dir(&mut self, dir: &Path) -> CliResult<()> {
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            let entries = std::fs::read_dir(&d).map_err(|e| CliError::Data(format!("{}: {e}", d.display())))?;
            for entry in entries {
                let p = entry?.path();
                if p.is_dir() {
                    stack.push(p);
                } else if p.is_file() && p.file_name().is_none_or(|n| n != METADATA) {
                    self.input(&p)?;
                }
            }
        }
        Ok(())
    }

    fn ensure_dir(&self) -> CliResult<()> {
        std::fs::create_dir_all(&self.dir).map_err(|e| CliError::Data(format!("{}: {e}", self.dir.display())))
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> CliResult<()> {
        self.ensure_dir()?;
        let bytes = contents.as_ref();
        write_atomic(&self.dir.join(name), bytes)?;
        self.outputs.insert(name.into(), sha256_hex(bytes));
        Ok(())
    }

    /// Records a file some other writer already placed in the directory.
    pub fn record_output(&mut self, rel: &str) -> CliResult<()> {
        let h = hash_file(&self.dir.join(rel))?;
        self.outputs.insert(rel.into(), h);
        Ok(())
    }

    pub fn label(&mut self, key: &str, value: impl Into<String>) {
        self.summary.labels.insert(key.into(), value.into());
    }

    pub fn value(&mut self, key: &str, v: f64) {
        self.summary.values.insert(key.into(), v);
    }

    pub fn finish(mut self) -> CliResult<()> {
        let summary = serde_json::to_string_pretty(&self.summary).map_err(|e| CliError::Data(e.to_string()))?;
        self.write(SUMMARY, summary + "\n")?;
        let resolved = serde_json::json!({
            "version": CONFIG_VERSION,
            "seed": self.seed,
            "out": self.dir.display().to_string(),
            self.command.clone(): self.params,
        });
        self.write("resolved_config.json", serde_json::to_string_pretty(&resolved).expect("json value") + "\n")?;
        let manifest = Manifest {
            version: MANIFEST_VERSION.into(),
            command: self.command.clone(),
            inputs: self.inputs.iter().map(|(p, h)| FileHash { path: p.clone(), sha256: h.clone() }).collect(),
            outputs: self.outputs.iter().map(|(p, h)| FileHash { path: p.clone(), sha256: h.clone() }).collect(),
        };
        let finished = unix_now();
        let meta = serde_json::json!({
            "command": self.command,
            "tool_version": env!("CARGO_PKG_VERSION"),
            "started_unix": self.started,
            "finished_unix": finished,
            "elapsed_seconds": finished - self.started,
        });
        self.ensure_dir()?;
        write_atomic(&self.dir.join(METADATA), (serde_json::to_string_pretty(&meta).expect("json value") + "\n").as_bytes())?;
        write_atomic(
            &self.dir.join(MANIFEST),
            (serde_json::to_string_pretty(&manifest).expect("manifest") + "\n").as_bytes(),
        )?;
        Ok(())
    }
}

/// Mismatches between a manifest and the files on disk.
pub fn verify_manifest(dir: &Path, m: &Manifest) -> Vec<String> {
    let mut drift = Vec::new();
    let mut check = |label: &str, path: &Path, expected: &str| match hash_file(path) {
        Ok(h) if h == expected => {}
        Ok(_) => drift.push(format!("{label} changed: {}", path.display())),
        Err(_) => drift.push(format!("{label} missing: {}", path.display())),
    };
    for f in &m.inputs {
        check("input", Path::new(&f.path), &f.sha256);
    }
    for f in &m.outputs {
        check("output", &dir.join(&f.path), &f.sha256);
    }
    drift
}
