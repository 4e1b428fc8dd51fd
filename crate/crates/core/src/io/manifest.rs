//! Run manifests: a plain-text record of how an output directory was made.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::error::{Error, Result};

pub const FILE_NAME: &str = "manifest.txt";
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunManifest {
    /// Full argument vector, program name included.
    pub command: Vec<String>,
    /// Resolved configuration as `key = value` lines.
    pub config: String,
    pub seeds: Vec<(String, u64)>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl RunManifest {
    pub fn new(command: Vec<String>) -> Self {
        RunManifest {
            command,
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            ..Default::default()
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("artifact_version = {ARTIFACT_VERSION}\n"));
        s.push_str(&format!("timestamp = {}\n", self.timestamp));
        s.push_str(&format!("command = {}\n", shell_join(&self.command)));
        for (name, v) in &self.seeds {
            s.push_str(&format!("seed.{name} = {v}\n"));
        }
        for p in &self.inputs {
            s.push_str(&format!("input = {}\n", p.display()));
        }
        for p in &self.outputs {
            s.push_str(&format!("output = {}\n", p.display()));
        }
        if !self.config.is_empty() {
            s.push_str("[config]\n");
            s.push_str(&self.config);
            if !self.config.ends_with('\n') {
                s.push('\n');
            }
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(FILE_NAME);
        std::fs::write(&path, self.render()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

fn shell_join(args: &[String]) -> String {
    args.iter()
        .map(|a| {
            if !a.is_empty() && a.chars().all(|c| c.is_ascii_alphanumeric() || "-_./=:,".contains(c)) {
                a.clone()
            } else {
                format!("'{}'", a.replace('\'', r"'\''"))
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}
