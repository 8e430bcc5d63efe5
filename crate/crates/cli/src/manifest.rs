//! Manifest siblings: enough to rerun the command that produced an artifact.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use encoderlab::settings::{self, Settings};
use sha2::{Digest, Sha256};

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Collects what a run read and wrote.
#[derive(Debug, Default)]
pub struct Run {
    pub command: String,
    pub args: Vec<String>,
    pub seed: Option<u64>,
    pub config: Settings,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl Run {
    pub fn new(command: &str) -> Self {
        Run {
            command: command.into(),
            args: std::env::args().skip(1).collect(),
            ..Default::default()
        }
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.to_path_buf());
    }

    fn body(&self) -> Result<Settings> {
        let mut m = BTreeMap::new();
        m.insert("command".into(), self.command.clone());
        m.insert("argv".into(), self.args.join(" "));
        m.insert("version".into(), env!("CARGO_PKG_VERSION").into());
        if let Some(s) = self.seed {
            m.insert("seed".into(), s.to_string());
        }
        for (k, v) in &self.config {
            m.insert(format!("config.{k}"), v.clone());
        }
        for (i, p) in self.inputs.iter().enumerate() {
            m.insert(format!("input.{i}.path"), p.display().to_string());
            m.insert(format!("input.{i}.sha256"), sha256_file(p)?);
        }
        Ok(m)
    }

    /// Writes `<output>.manifest` next to every output, plus the resolved
    /// configuration as `run.conf` in the directory of the first output.
    pub fn finish(&self) -> Result<()> {
        let base = self.body()?;
        for out in &self.outputs {
            let mut m = base.clone();
            m.insert("output.path".into(), out.display().to_string());
            m.insert("output.sha256".into(), sha256_file(out)?);
            let path = manifest_path(out);
            std::fs::write(&path, settings::render(&m)).with_context(|| format!("writing {}", path.display()))?;
        }
        if let Some(first) = self.outputs.first() {
            let dir = first.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
            let path = dir.join("run.conf");
            let mut conf = self.config.clone();
            conf.insert("command".into(), self.command.clone());
            if let Some(s) = self.seed {
                conf.insert("seed".into(), s.to_string());
            }
            std::fs::write(&path, settings::render(&conf)).with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    }
}

pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}
