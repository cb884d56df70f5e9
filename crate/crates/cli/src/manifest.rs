//! Run manifests: configuration, seeds, metrics, timings and a SHA-256 of
//! every file a run wrote.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::{CommandKind, RunConfig};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileRecord {
    /// Relative to the output (or input) directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Seeds {
    pub reference: Vec<u64>,
    /// Empty for noise-free runs.
    pub noise: Vec<u64>,
}

/// Everything except `wallclock` is a pure function of the configuration.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: CommandKind,
    pub config: RunConfig,
    pub seeds: Seeds,
    pub metrics: Value,
    pub inputs: Vec<FileRecord>,
    pub files: Vec<FileRecord>,
    pub wallclock: Value,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn hash_file(base: &Path, path: &Path) -> Result<FileRecord, CliError> {
    let bytes = fs::read(path).map_err(|e| tgi_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let rel = path.strip_prefix(base).unwrap_or(path);
    Ok(FileRecord {
        path: rel.display().to_string(),
        bytes: bytes.len() as u64,
        sha256: sha256_hex(&bytes),
    })
}

pub fn emit_manifest(
    config: &RunConfig,
    seeds: Seeds,
    metrics: Value,
    inputs: &[PathBuf],
    files: &[PathBuf],
    wallclock: Value,
) -> Result<Manifest, CliError> {
    let input_base = config.input.as_deref().unwrap_or(Path::new(""));
    Ok(Manifest {
        tool: "tgi",
        version: env!("CARGO_PKG_VERSION"),
        command: config.command,
        config: config.clone(),
        seeds,
        metrics,
        inputs: inputs
            .iter()
            .map(|p| hash_file(input_base, p))
            .collect::<Result<_, _>>()?,
        files: files
            .iter()
            .map(|p| hash_file(&config.out_dir, p))
            .collect::<Result<_, _>>()?,
        wallclock,
    })
}

pub fn manifest_path(config: &RunConfig) -> PathBuf {
    config
        .out_dir
        .join(format!("{}_manifest.json", config.command.name()))
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<(), CliError> {
    let mut json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    json.push('\n');
    fs::write(path, json).map_err(|e| {
        tgi_core::Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}
