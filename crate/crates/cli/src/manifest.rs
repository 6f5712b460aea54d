//! Run manifests: config echo, seeds, versions, file hashes, wall time.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub versions: BTreeMap<String, String>,
    pub threads: usize,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub wall_seconds: f64,
    pub exit_code: u8,
    pub warnings: Vec<String>,
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let mut file = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Bookkeeping for one command invocation.
pub struct Run {
    command: String,
    config: RunConfig,
    out_dir: PathBuf,
    started: Instant,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    seeds: BTreeMap<String, u64>,
    pub warnings: Vec<String>,
}

impl Run {
    /// Creates the output directory.
    pub fn start(command: &str, config: &RunConfig) -> Result<Self, CliError> {
        let out_dir = config.out_dir();
        std::fs::create_dir_all(&out_dir)
            .map_err(|e| CliError::Input(format!("cannot create output directory {}: {e}", out_dir.display())))?;
        Ok(Self {
            command: command.to_string(),
            config: config.clone(),
            out_dir,
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            seeds: BTreeMap::new(),
            warnings: Vec::new(),
        })
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    /// Path for output `name`, recorded for hashing.
    pub fn output(&mut self, name: &str) -> PathBuf {
        let p = self.out_dir.join(name);
        self.outputs.push(p.clone());
        p
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    /// Hashes every recorded file and writes the manifest.
    pub fn finish(self, exit_code: u8) -> Result<Manifest, CliError> {
        let record = |p: &PathBuf| -> Result<FileRecord, CliError> {
            Ok(FileRecord {
                path: p.display().to_string(),
                sha256: sha256_file(p).map_err(|e| CliError::Input(format!("cannot hash {}: {e}", p.display())))?,
            })
        };
        let mut versions = BTreeMap::new();
        versions.insert("sglmm-core".to_string(), sglmm_core::VERSION.to_string());
        versions.insert("sglmm-cli".to_string(), env!("CARGO_PKG_VERSION").to_string());
        let manifest = Manifest {
            command: self.command,
            config: self.config.echo().clone(),
            seeds: self.seeds,
            versions,
            threads: rayon::current_num_threads(),
            inputs: self.inputs.iter().map(record).collect::<Result<_, _>>()?,
            outputs: self.outputs.iter().map(record).collect::<Result<_, _>>()?,
            wall_seconds: self.started.elapsed().as_secs_f64(),
            exit_code,
            warnings: self.warnings,
        };
        let path = self.out_dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(manifest)
    }
}
