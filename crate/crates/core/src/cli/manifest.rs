//! Run manifests and atomic artifact writes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    /// The parsed command, inputs as absolute paths; replaying it reproduces
    /// the run.
    pub command: serde_json::Value,
    pub seed: u64,
    pub threads: Option<usize>,
    /// Resolved documents (problem, grid, scheme, ...) as actually used.
    pub config: serde_json::Map<String, serde_json::Value>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub status: String,
    pub failed_stage: Option<String>,
    pub exit_code: i32,
    pub message: Option<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Collects inputs, outputs and configuration of one run.
pub struct RunContext {
    pub out_dir: PathBuf,
    pub manifest: RunManifest,
    stage: Option<String>,
}

impl RunContext {
    pub fn new(out_dir: PathBuf, subcommand: &str, command: serde_json::Value, seed: u64, threads: Option<usize>) -> Self {
        Self {
            out_dir,
            manifest: RunManifest {
                tool: env!("CARGO_PKG_NAME").into(),
                version: env!("CARGO_PKG_VERSION").into(),
                subcommand: subcommand.into(),
                command,
                seed,
                threads,
                config: serde_json::Map::new(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                status: "running".into(),
                failed_stage: None,
                exit_code: -1,
                message: None,
            },
            stage: None,
        }
    }

    pub fn stage(&mut self, name: &str) {
        self.stage = Some(name.into());
    }

    /// Reads and fingerprints an input file.
    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        let rec = FileRecord { path: path.display().to_string(), sha256: sha256_hex(&bytes), bytes: bytes.len() };
        if !self.manifest.inputs.contains(&rec) {
            self.manifest.inputs.push(rec);
        }
        Ok(bytes)
    }

    pub fn read_string(&mut self, path: &Path) -> Result<String> {
        String::from_utf8(self.read(path)?).map_err(|_| Error::arg(format!("{} is not UTF-8", path.display())))
    }

    pub fn record_config(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("configuration serializes");
        self.manifest.config.insert(key.into(), v);
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.out_dir.join(name);
        write_atomic(&path, bytes)?;
        self.manifest.outputs.retain(|r| r.path != name);
        self.manifest.outputs.push(FileRecord { path: name.into(), sha256: sha256_hex(bytes), bytes: bytes.len() });
        Ok(path)
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<PathBuf> {
        let mut text = serde_json::to_vec_pretty(value)?;
        text.push(b'\n');
        self.write(name, &text)
    }

    /// Seals the manifest with the outcome and writes it.
    pub fn finish(mut self, exit_code: i32, message: Option<String>) -> Result<RunManifest> {
        self.manifest.exit_code = exit_code;
        self.manifest.status = match exit_code {
            0 => "ok",
            4 => "certification failed",
            _ => "failed",
        }
        .into();
        if exit_code != 0 && exit_code != 4 {
            self.manifest.failed_stage = self.stage.clone();
        }
        self.manifest.message = message;
        let mut text = serde_json::to_vec_pretty(&self.manifest)?;
        text.push(b'\n');
        write_atomic(&self.out_dir.join(MANIFEST_FILE), &text)?;
        Ok(self.manifest)
    }
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_and_manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut ctx = RunContext::new(dir.path().to_path_buf(), "oracle", serde_json::json!({"x": 1}), 7, None);
        let input = dir.path().join("in.txt");
        fs::write(&input, b"hello").unwrap();
        assert_eq!(ctx.read(&input).unwrap(), b"hello");
        ctx.stage("write");
        ctx.write("a/b.txt", b"abc").unwrap();
        ctx.write("a/b.txt", b"abcd").unwrap();
        let m = ctx.finish(3, Some("boom".into())).unwrap();
        assert_eq!(m.outputs.len(), 1);
        assert_eq!(m.outputs[0].bytes, 4);
        assert_eq!(m.failed_stage.as_deref(), Some("write"));
        assert_eq!(fs::read(dir.path().join("a/b.txt")).unwrap(), b"abcd");
        let back = read_manifest(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.inputs[0].sha256, sha256_hex(b"hello"));
    }
}
