//! Run manifests: what ran, with which configuration, on which bytes.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> io::Result<Self> {
        let bytes = fs::read(path)?;
        Ok(Self {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub wall_ms: f64,
}

/// Collects digests while a command runs and emits the manifest at the end.
pub struct Recorder {
    command: String,
    config: Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started: Instant,
}

impl Recorder {
    pub fn new(command: &str, config: Value) -> Self {
        Self {
            command: command.to_string(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn input(&mut self, path: impl Into<PathBuf>) {
        self.inputs.push(path.into());
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    pub fn finish(self) -> io::Result<RunManifest> {
        let digest = |paths: &[PathBuf]| paths.iter().map(|p| FileDigest::of(p)).collect::<io::Result<Vec<_>>>();
        Ok(RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            inputs: digest(&self.inputs)?,
            outputs: digest(&self.outputs)?,
            command: self.command,
            config: self.config,
            wall_ms: self.started.elapsed().as_secs_f64() * 1e3,
        })
    }
}

/// Writes the manifest to `explicit`, else next to `primary_output`
/// (`<dir>/manifest.json` for directories, `<file>.manifest.json` for files),
/// else to stderr.
pub fn emit(manifest: &RunManifest, explicit: Option<&Path>, primary_output: Option<&Path>) -> io::Result<()> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serialization is infallible");
    let target = explicit.map(Path::to_path_buf).or_else(|| {
        primary_output.map(|p| {
            if p.is_dir() {
                p.join("manifest.json")
            } else {
                let mut name = p.as_os_str().to_owned();
                name.push(".manifest.json");
                PathBuf::from(name)
            }
        })
    });
    match target {
        Some(path) => fs::write(path, text + "\n"),
        None => writeln!(io::stderr(), "{text}"),
    }
}
