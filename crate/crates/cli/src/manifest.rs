//! Run manifests written next to every output file.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_at: u64,
    pub finished_at: u64,
}

/// Seconds since the epoch, or `SOURCE_DATE_EPOCH` when set so that reruns
/// produce identical manifests.
pub fn timestamp() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()) {
        return t;
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn digest(path: &Path) -> anyhow::Result<FileDigest> {
    let mut f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    let mut bytes = 0u64;
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        bytes += n as u64;
        h.update(&buf[..n]);
    }
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: hex::encode(h.finalize()),
        bytes,
    })
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}

pub struct Run {
    subcommand: String,
    config: serde_json::Value,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<FileDigest>,
    outputs: Vec<PathBuf>,
    started_at: u64,
}

impl Run {
    pub fn start(subcommand: &str, config: impl Serialize) -> anyhow::Result<Self> {
        Ok(Run {
            subcommand: subcommand.to_string(),
            config: serde_json::to_value(config)?,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_at: timestamp(),
        })
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    /// Digests an input before it is read.
    pub fn input(&mut self, path: &Path) -> anyhow::Result<BufReader<File>> {
        self.inputs.push(digest(path)?);
        Ok(BufReader::new(File::open(path)?))
    }

    pub fn output(&mut self, path: &Path) -> anyhow::Result<BufWriter<File>> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        self.outputs.push(path.to_path_buf());
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(BufWriter::new(f))
    }

    /// Writes one manifest beside each output.
    pub fn finish(self) -> anyhow::Result<()> {
        let outputs = self
            .outputs
            .iter()
            .map(|p| digest(p))
            .collect::<anyhow::Result<Vec<_>>>()?;
        let manifest = RunManifest {
            tool: "lexdrift",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: self.subcommand,
            config: self.config,
            seeds: self.seeds,
            inputs: self.inputs,
            outputs,
            started_at: self.started_at,
            finished_at: timestamp(),
        };
        for out in &self.outputs {
            let mut w = BufWriter::new(File::create(manifest_path(out))?);
            serde_json::to_writer_pretty(&mut w, &manifest)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        Ok(())
    }
}
