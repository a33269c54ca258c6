//! Output directory handling and metadata sidecars.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fadesim::experiment::ExperimentConfig;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub const OUT_ENV: &str = "FADESIM_OUT";
pub const DEFAULT_OUT: &str = "fadesim-out";
pub const VERSION: &str = concat!("fadesim ", env!("CARGO_PKG_VERSION"));

/// Flag, then config, then `FADESIM_OUT`, then `./fadesim-out`.
pub fn resolve_dir(flag: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = &cfg.out {
        return PathBuf::from(p);
    }
    match std::env::var_os(OUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(DEFAULT_OUT),
    }
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes files for one command run, each with a `<name>.meta.json` sidecar.
pub struct Output {
    pub dir: PathBuf,
    command: String,
    config: ExperimentConfig,
    hash: String,
}

impl Output {
    pub fn create(dir: PathBuf, command: &str, config: &ExperimentConfig) -> Result<Self> {
        fs::create_dir_all(&dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Self {
            dir,
            command: command.to_string(),
            hash: config_hash(config),
            config: config.clone(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write<F>(&self, name: &str, extra: Value, body: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut BufWriter<File>) -> fadesim::Result<()>,
    {
        let path = self.path(name);
        let mut w = BufWriter::new(File::create(&path).with_context(|| format!("cannot create {}", path.display()))?);
        body(&mut w).with_context(|| format!("writing {}", path.display()))?;
        w.flush()?;
        self.sidecar(name, extra)?;
        Ok(path)
    }

    pub fn sidecar(&self, name: &str, extra: Value) -> Result<PathBuf> {
        let meta = json!({
            "file": name,
            "command": self.command,
            "version": VERSION,
            "seed": self.config.seed,
            "config_sha256": self.hash,
            "config": self.config,
            "details": extra,
        });
        let path = self.path(&format!("{name}.meta.json"));
        let text = serde_json::to_string_pretty(&meta)?;
        fs::write(&path, text + "\n").with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }
}
