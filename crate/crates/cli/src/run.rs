//! Run bookkeeping shared by all commands: errors, manifests, metrics logs
//! and cleanup of partial outputs.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use ldem::kb::sha256_hex;
use serde::Serialize;
use serde_json::Value;

/// An error raised by the command layer itself, with a stable kind.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

pub fn fail(kind: &'static str, message: impl Into<String>) -> anyhow::Error {
    CliError {
        kind,
        message: message.into(),
    }
    .into()
}

/// Stable snake_case category of an error, for the one-line error report.
pub fn error_kind(err: &anyhow::Error) -> &'static str {
    if let Some(e) = err.downcast_ref::<CliError>() {
        e.kind
    } else if let Some(e) = err.downcast_ref::<ldem::Error>() {
        e.kind()
    } else if err.downcast_ref::<std::io::Error>().is_some() {
        "io"
    } else {
        "internal"
    }
}

pub fn unix_millis() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// SHA-256 of a file, or of a directory as the sorted list of its files'
/// relative paths and digests.
pub fn checksum_path(path: &Path) -> anyhow::Result<String> {
    if path.is_dir() {
        let mut lines = Vec::new();
        collect_digests(path, path, &mut lines)?;
        lines.sort();
        Ok(sha256_hex(lines.join("\n").as_bytes()))
    } else {
        let bytes = fs::read(path).map_err(|e| ldem::Error::io(path, e))?;
        Ok(sha256_hex(&bytes))
    }
}

fn collect_digests(root: &Path, dir: &Path, out: &mut Vec<String>) -> anyhow::Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| ldem::Error::io(dir, e))? {
        let path = entry.map_err(|e| ldem::Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_digests(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).unwrap_or(&path).to_string_lossy().replace('\\', "/");
            out.push(format!("{rel}\t{}", checksum_path(&path)?));
        }
    }
    Ok(())
}

/// Write through a temporary sibling and rename, so readers never see a
/// half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| fail("invalid_argument", format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.partial", name.to_string_lossy()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        ldem::Error::io(path, e).into()
    })
}

/// Removes registered outputs unless the run is committed.
#[derive(Debug, Default)]
pub struct OutputGuard {
    paths: Vec<PathBuf>,
    committed: bool,
}

impl OutputGuard {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a path that did not exist before this run.
    pub fn track(&mut self, path: &Path) {
        self.paths.push(path.to_path_buf());
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for p in self.paths.iter().rev() {
            if p.is_dir() {
                let _ = fs::remove_dir_all(p);
            } else {
                let _ = fs::remove_file(p);
            }
        }
    }
}

/// `<output>.<suffix>`, next to the output.
pub fn sibling(output: &Path, suffix: &str) -> PathBuf {
    let mut name = output
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_else(|| "out".into());
    name.push(".");
    name.push(suffix);
    output.with_file_name(name)
}

/// Line-delimited JSON metrics, written at the end of the run.
#[derive(Debug, Default)]
pub struct MetricsLog {
    lines: Vec<String>,
}

impl MetricsLog {
    pub fn push<T: Serialize>(&mut self, record: &T) -> anyhow::Result<()> {
        self.lines.push(serde_json::to_string(record)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let mut text = self.lines.join("\n");
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }
}

/// Record of one command invocation.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: &'static str,
    pub version: &'static str,
    pub seed: Option<u64>,
    /// Every option after defaults, config file and environment are applied.
    pub config: Value,
    pub inputs: Vec<(String, String)>,
    pub outputs: Vec<(String, String)>,
    /// Logs carry timings, so they are listed without checksums.
    pub logs: Vec<String>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

impl RunManifest {
    pub fn start<C: Serialize>(command: &'static str, seed: Option<u64>, config: &C) -> anyhow::Result<Self> {
        Ok(RunManifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed,
            config: serde_json::to_value(config)?,
            inputs: Vec::new(),
            outputs: Vec::new(),
            logs: Vec::new(),
            started_unix_ms: unix_millis(),
            finished_unix_ms: 0,
        })
    }

    pub fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        self.inputs.push((path.display().to_string(), checksum_path(path)?));
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> anyhow::Result<()> {
        self.outputs.push((path.display().to_string(), checksum_path(path)?));
        Ok(())
    }

    pub fn log(&mut self, path: &Path) {
        self.logs.push(path.display().to_string());
    }

    pub fn finish(mut self, path: &Path) -> anyhow::Result<()> {
        self.finished_unix_ms = unix_millis();
        let mut text = serde_json::to_string_pretty(&self)?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }
}
