//! Plain-text `key=value` run records written next to every output.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

pub struct Manifest {
    lines: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(subcommand: &str) -> Self {
        let mut m = Manifest { lines: Vec::new() };
        m.set("tool", env!("CARGO_PKG_NAME"));
        m.set("version", env!("CARGO_PKG_VERSION"));
        m.set("subcommand", subcommand);
        m
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.lines.push((key.to_string(), value.to_string()));
    }

    pub fn input(&mut self, name: &str, path: &Path) -> Result<()> {
        self.set(&format!("input.{name}"), path.display());
        self.set(&format!("input.{name}.sha256"), digest(path)?);
        Ok(())
    }

    pub fn output(&mut self, name: &str, path: &Path) -> Result<()> {
        self.set(&format!("output.{name}"), path.display());
        self.set(&format!("output.{name}.sha256"), digest(path)?);
        Ok(())
    }

    pub fn render(&self) -> String {
        self.lines.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Writes to `<anchor>.manifest` and returns that path.
    pub fn write_beside(&self, anchor: &Path) -> Result<PathBuf> {
        let mut name = anchor.as_os_str().to_owned();
        name.push(".manifest");
        let path = PathBuf::from(name);
        fs::write(&path, self.render()).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

pub fn digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
