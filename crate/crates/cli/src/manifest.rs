//! `manifest.txt`: resolved config, seed and SHA-256 of every input and output.

use std::path::{Path, PathBuf};

use lft_core::kv::{self, KvMap};
use lft_core::Result;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.txt";

pub fn sha256_file(path: &Path) -> Result<String> {
    let digest = Sha256::digest(std::fs::read(path)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Regular files under `path` (itself if it is a file), sorted.
pub fn files_under(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(path)? {
        let p = entry?.path();
        if p.is_dir() {
            out.extend(files_under(&p)?);
        } else if p.is_file() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Default)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config: KvMap,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config: KvMap) -> Self {
        Manifest { command: command.to_string(), seed, config, ..Default::default() }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.extend(files_under(path)?);
        Ok(())
    }

    /// Records `path`, given relative to the output directory.
    pub fn output(&mut self, rel: impl Into<PathBuf>) {
        self.outputs.push(rel.into());
    }

    pub fn render(&self, out_dir: &Path) -> Result<String> {
        let mut map = KvMap::new();
        map.insert("command".into(), self.command.clone());
        map.insert("seed".into(), self.seed.to_string());
        for (k, v) in &self.config {
            map.insert(format!("config.{k}"), v.clone());
        }
        for p in &self.inputs {
            map.insert(format!("input.{}", p.display()), sha256_file(p)?);
        }
        for p in &self.outputs {
            map.insert(format!("output.{}", p.display()), sha256_file(&out_dir.join(p))?);
        }
        Ok(kv::render(&map))
    }

    pub fn write(&self, out_dir: &Path) -> Result<()> {
        std::fs::write(out_dir.join(MANIFEST), self.render(out_dir)?)?;
        Ok(())
    }
}
